"""JSON model and policy files.

A model file is one JSON object::

    {
      "agents": [1, 2],
      "edges": [[1, 2]],
      "edge_labels": [[1, 2, 4]],
      "local_states": {"1": ["h", "d"], "2": ["h", "d"]},
      "local_actions": {"1": ["a", "b"], "2": ["a"]},
      "initial_state": {"1": "h", "2": "h"},
      "decision_agents": {"1": [1]},                      (optional)
      "transitions": [
        {"agent": 1, "mode": "own-next", "action_agents": [1],
         "state": ["h", "h"], "action": ["a"], "next": ["d"], "probability": 0.2},
        ...
      ],
      "labels": {"1": {"d": ["d"]}},
      "rewards": [{"agent": 1, "state": ["h", "h"], "action": ["a"], "reward": 3.0}],
      "specs": {"1": {"formula": "F[<=2] d", "lambda": 0.9}},
      "sparse_default_zero": false
    }

Joint keys are lists of local names ordered by ascending agent id over the
relevant scope (the neighbourhood for states, ``action_agents`` for actions,
the agent itself or its neighbourhood for ``next``).  Unless
``sparse_default_zero`` is set, every transition entry must be listed.
Missing reward entries are zero.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .fmdp import (
    JOINT_NEXT,
    OWN_NEXT,
    AgentKernel,
    AgentMemory,
    FactoredMdp,
    FactoredPolicy,
    ModelError,
    SpecEntry,
    joint_coords,
    ravel,
)
from .graph import GraphError, InteractionGraph, neighborhood

FORMAT_VERSION = 1


def _names_to_index(names, members, table: dict[int, tuple[str, ...]], what: str) -> int:
    if isinstance(names, str):
        names = [names]
    if len(names) != len(members):
        raise ModelError(f"{what} key {names} does not match scope {list(members)}")
    coords = []
    for n, m in zip(names, members):
        try:
            coords.append(table[m].index(n))
        except ValueError:
            raise ModelError(f"unknown name {n!r} for agent {m} in {what} key") from None
    sizes = [len(table[m]) for m in members]
    return int(ravel(np.array([coords]), sizes)[0]) if members else 0


def _index_to_names(index: int, members, table) -> list[str]:
    sizes = [len(table[m]) for m in members]
    if not members:
        return []
    coords = joint_coords(sizes)[index]
    return [table[m][int(c)] for m, c in zip(members, coords)]


def _agent_map(obj: dict, what: str) -> dict[int, Any]:
    try:
        return {int(k): v for k, v in obj.items()}
    except (TypeError, ValueError, AttributeError):
        raise ModelError(f"{what} must map agent ids to values") from None


def model_from_dict(doc: dict) -> FactoredMdp:
    try:
        agents = [int(a) for a in doc["agents"]]
        edges = [frozenset(int(x) for x in e) for e in doc.get("edges", [])]
        labels_e = {frozenset((int(a), int(b))): lab for a, b, lab in doc.get("edge_labels", [])}
        graph = InteractionGraph(tuple(agents), frozenset(edges), labels_e)
        states = {i: tuple(v) for i, v in _agent_map(doc["local_states"], "local_states").items()}
        actions = {i: tuple(v) for i, v in _agent_map(doc["local_actions"], "local_actions").items()}
        init = _agent_map(doc["initial_state"], "initial_state")
        dec = {i: tuple(sorted(int(x) for x in v)) for i, v in _agent_map(doc.get("decision_agents", {}), "decision_agents").items()}
        sparse = bool(doc.get("sparse_default_zero", False))
        records = doc["transitions"]
    except KeyError as e:
        raise ModelError(f"model file lacks key {e.args[0]!r}") from None
    except GraphError as e:
        raise ModelError(str(e)) from None
    for i in agents:
        if i not in states or i not in actions:
            raise ModelError(f"agent {i} lacks local states or actions")

    by_agent: dict[int, list[dict]] = {i: [] for i in agents}
    for rec in records:
        i = int(rec["agent"])
        if i not in by_agent:
            raise ModelError(f"transition record for unknown agent {i}")
        by_agent[i].append(rec)
    kernels = {}
    for i in agents:
        recs = by_agent[i]
        if not recs:
            raise ModelError(f"agent {i} has no transition records")
        members = neighborhood(graph, i).members
        mode = recs[0].get("mode", OWN_NEXT)
        act_agents = tuple(sorted(int(x) for x in recs[0].get("action_agents", dec.get(i, members))))
        if mode not in (OWN_NEXT, JOINT_NEXT):
            raise ModelError(f"unknown transition mode {mode!r} for agent {i}")
        next_members = (i,) if mode == OWN_NEXT else members
        nS = int(np.prod([len(states[m]) for m in members]))
        nA = int(np.prod([len(actions[m]) for m in act_agents])) if act_agents else 1
        nN = int(np.prod([len(states[m]) for m in next_members]))
        table = np.zeros((nS, nA, nN))
        seen = np.zeros(table.shape, dtype=bool)
        for rec in recs:
            if rec.get("mode", OWN_NEXT) != mode:
                raise ModelError(f"agent {i} mixes transition modes")
            s = _names_to_index(rec["state"], members, states, "state")
            a = _names_to_index(rec["action"], act_agents, actions, "action")
            n = _names_to_index(rec["next"], next_members, states, "next")
            if seen[s, a, n]:
                raise ModelError(f"duplicate transition entry for agent {i}: {rec}")
            seen[s, a, n] = True
            table[s, a, n] = float(rec["probability"])
        if not sparse and not seen.all():
            s, a, n = np.argwhere(~seen)[0]
            raise ModelError(
                f"agent {i} lacks transition entry state={_index_to_names(s, members, states)} "
                f"action={_index_to_names(a, act_agents, actions)} next={_index_to_names(n, next_members, states)} "
                "(set sparse_default_zero to allow omitted zeros)"
            )
        kernels[i] = AgentKernel(mode, act_agents, table)

    labels = {
        i: {s: frozenset(props) for s, props in v.items()}
        for i, v in _agent_map(doc.get("labels", {}), "labels").items()
    }
    rewards = {}
    for rec in doc.get("rewards", []):
        i = int(rec["agent"])
        k = kernels.get(i)
        if k is None:
            raise ModelError(f"reward record for unknown agent {i}")
        members = neighborhood(graph, i).members
        r = rewards.setdefault(i, np.zeros(k.table.shape[:2]))
        s = _names_to_index(rec["state"], members, states, "state")
        a = _names_to_index(rec["action"], k.action_agents, actions, "action")
        r[s, a] = float(rec["reward"])
    specs = {
        i: SpecEntry(str(v["formula"]), float(v.get("lambda", 1.0)))
        for i, v in _agent_map(doc.get("specs", {}), "specs").items()
    }
    return FactoredMdp(graph, states, actions, init, kernels, labels, rewards, dec, specs)


def model_to_dict(model: FactoredMdp) -> dict:
    g = model.graph
    doc: dict[str, Any] = {
        "format": FORMAT_VERSION,
        "agents": list(g.agents),
        "edges": sorted(sorted(e) for e in g.edges),
        "edge_labels": sorted([*sorted(e), lab] for e, lab in g.edge_labels.items()),
        "local_states": {str(i): list(v) for i, v in model.local_states.items()},
        "local_actions": {str(i): list(v) for i, v in model.local_actions.items()},
        "initial_state": {str(i): v for i, v in model.initial_state.items()},
        "decision_agents": {str(i): list(v) for i, v in model.decision_agents.items()},
        "sparse_default_zero": True,
    }
    trans, rewards = [], []
    for i in g.agents:
        k = model.kernels[i]
        members = model.scope(i).members
        next_members = (i,) if k.mode == OWN_NEXT else members
        for s, a, n in np.argwhere(k.table > 0):
            trans.append({
                "agent": i,
                "mode": k.mode,
                "action_agents": list(k.action_agents),
                "state": _index_to_names(s, members, model.local_states),
                "action": _index_to_names(a, k.action_agents, model.local_actions),
                "next": _index_to_names(n, next_members, model.local_states),
                "probability": float(k.table[s, a, n]),
            })
        for s, a in np.argwhere(model.rewards[i] != 0):
            rewards.append({
                "agent": i,
                "state": _index_to_names(s, members, model.local_states),
                "action": _index_to_names(a, k.action_agents, model.local_actions),
                "reward": float(model.rewards[i][s, a]),
            })
    doc["transitions"] = trans
    doc["labels"] = {str(i): {s: sorted(p) for s, p in v.items() if p} for i, v in model.labels.items()}
    doc["rewards"] = rewards
    doc["specs"] = {str(i): {"formula": e.formula, "lambda": e.lam} for i, e in model.specs.items()}
    return doc


def load_model(path: str | Path) -> FactoredMdp:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ModelError(f"cannot read model file {path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"model file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ModelError("model file must hold a JSON object")
    return model_from_dict(doc)


def save_model(model: FactoredMdp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


# --- policies -----------------------------------------------------------------

def policy_to_dict(policy: FactoredPolicy) -> dict:
    out = {}
    for i, t in policy.tables.items():
        mem = policy.memory.get(i)
        out[str(i)] = {
            "table": t.tolist(),
            "memory": None
            if mem is None
            else {"delta": mem.delta.tolist(), "letters": mem.letters.tolist(), "q_init": int(mem.q_init)},
        }
    return {"format": FORMAT_VERSION, "agents": out}


def policy_from_dict(doc: dict) -> FactoredPolicy:
    try:
        tables, memory = {}, {}
        for k, v in doc["agents"].items():
            i = int(k)
            tables[i] = np.asarray(v["table"], dtype=float)
            m = v.get("memory")
            memory[i] = (
                None
                if m is None
                else AgentMemory(np.asarray(m["delta"], dtype=int), np.asarray(m["letters"], dtype=int), int(m["q_init"]))
            )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"malformed policy document: {e}") from None
    return FactoredPolicy(tables, memory)


def check_policy_scope(model: FactoredMdp, policy: FactoredPolicy) -> None:
    """Raise when the policy tables do not fit the model's scopes."""
    for i in model.agents:
        t = policy.tables.get(i)
        if t is None:
            raise ModelError(f"policy lacks agent {i}")
        want = (model.n_scope_states(i), model.n_actions(model.decision_agents[i]))
        if t.shape[1:] != want:
            raise ModelError(f"policy table of agent {i} has shape {t.shape[1:]}, model needs {want}")
        mem = policy.memory.get(i)
        if mem is not None and (len(mem.letters) != want[0] or mem.delta.shape[0] != t.shape[0]):
            raise ModelError(f"policy memory of agent {i} does not fit the model")
    extra = set(policy.tables) - set(model.agents)
    if extra:
        raise ModelError(f"policy names unknown agents {sorted(extra)}")


def load_policy(path: str | Path) -> FactoredPolicy:
    try:
        return policy_from_dict(json.loads(Path(path).read_text()))
    except OSError as e:
        raise ModelError(f"cannot read policy file {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ModelError(f"policy file {path} is not valid JSON: {e}") from None


def save_policy(policy: FactoredPolicy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy)))
