"""Factored MDP data model, joint-state indexing, policies and simulation.

Each agent owns a kernel whose conditioning scope is its neighbourhood N(i).
Two factorisation modes are supported:

``own-next``
    the table gives a distribution over the agent's own next local state;
``joint-next``
    the table gives a distribution over the whole neighbourhood's next state.

Agent ``i`` plans over a *local* MDP on S_{N(i)} with joint actions over its
decision scope (N(i) by default).  In own-next mode the local kernel is the
product of every member's own kernel.  Coordinates a member's kernel needs but
that lie outside N(i) are closed off: out-of-scope states are pinned at their
initial value and out-of-scope actions at the member's first action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import InteractionGraph, NeighborhoodScope, neighborhood

OWN_NEXT = "own-next"
JOINT_NEXT = "joint-next"
PROB_TOL = 1e-9
MAX_LOCAL_ENTRIES = 60_000_000


class ModelError(ValueError):
    """Raised for malformed or incomplete models."""


def encode_joint(members: Sequence[int], sizes: Mapping[int, int], values: Mapping[int, int]) -> int:
    """Mixed-radix index of ``values`` over ``members`` (first member most significant)."""
    idx = 0
    for m in members:
        v = int(values[m])
        n = int(sizes[m])
        if not 0 <= v < n:
            raise ModelError(f"local index {v} out of range for agent {m} (size {n})")
        idx = idx * n + v
    return idx


def decode_joint(members: Sequence[int], sizes: Mapping[int, int], index: int) -> dict[int, int]:
    total = 1
    for m in members:
        total *= int(sizes[m])
    if not 0 <= index < total:
        raise ModelError(f"joint index {index} out of range (size {total})")
    out = {}
    for m in reversed(members):
        n = int(sizes[m])
        out[m] = index % n
        index //= n
    return {m: out[m] for m in members}


def joint_coords(sizes: Sequence[int]) -> np.ndarray:
    """All joint indices decoded: array of shape (prod(sizes), len(sizes))."""
    n = int(np.prod(sizes, dtype=np.int64)) if len(sizes) else 1
    if not len(sizes):
        return np.zeros((1, 0), dtype=np.int64)
    return np.stack(np.unravel_index(np.arange(n), tuple(sizes)), axis=1).astype(np.int64)


def ravel(coords: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    if not len(sizes):
        return np.zeros(coords.shape[0], dtype=np.int64)
    return np.ravel_multi_index(tuple(coords.T), tuple(sizes)).astype(np.int64)


@dataclass(frozen=True)
class AgentKernel:
    """Transition table of one agent.

    ``table`` has shape (|S_{N(i)}|, |A_{action_agents}|, n_next) where n_next
    is |S_i| in own-next mode and |S_{N(i)}| in joint-next mode.
    """

    mode: str
    action_agents: tuple[int, ...]
    table: np.ndarray


@dataclass(frozen=True)
class SpecEntry:
    formula: str
    lam: float


@dataclass
class FactoredMdp:
    graph: InteractionGraph
    local_states: dict[int, tuple[str, ...]]
    local_actions: dict[int, tuple[str, ...]]
    initial_state: dict[int, str]
    kernels: dict[int, AgentKernel]
    labels: dict[int, dict[str, frozenset[str]]]
    rewards: dict[int, np.ndarray]
    decision_agents: dict[int, tuple[int, ...]] = field(default_factory=dict)
    specs: dict[int, SpecEntry] = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        for i in g.agents:
            if i not in self.local_states or not self.local_states[i]:
                raise ModelError(f"agent {i} has no local states")
            if i not in self.local_actions or not self.local_actions[i]:
                raise ModelError(f"agent {i} has no local actions")
            if self.initial_state.get(i) not in self.local_states[i]:
                raise ModelError(f"agent {i} initial state invalid")
            if i not in self.kernels:
                raise ModelError(f"agent {i} has no transition kernel")
            self.decision_agents.setdefault(i, neighborhood(g, i).members)
            dec = self.decision_agents[i]
            nb = set(neighborhood(g, i).members)
            if i not in dec or not set(dec) <= nb or list(dec) != sorted(set(dec)):
                raise ModelError(f"decision scope of agent {i} must contain it and lie in N({i})")
            self._check_kernel(i)
            r = self.rewards.get(i)
            k = self.kernels[i]
            shape = (self.n_scope_states(i), self.n_actions(k.action_agents))
            if r is None:
                r = np.zeros(shape)
                self.rewards[i] = r
            if r.shape != shape:
                raise ModelError(f"reward table of agent {i} has shape {r.shape}, expected {shape}")
            if np.any(r < 0):
                raise ModelError(f"negative reward for agent {i}")
            self.labels.setdefault(i, {})
        for i, spec in self.specs.items():
            if i not in g.agents:
                raise ModelError(f"spec for unknown agent {i}")
            if not 0.0 <= spec.lam <= 1.0:
                raise ModelError(f"lambda for agent {i} outside [0, 1]")

    def _check_kernel(self, i: int) -> None:
        k = self.kernels[i]
        nb = neighborhood(self.graph, i).members
        if k.mode not in (OWN_NEXT, JOINT_NEXT):
            raise ModelError(f"unknown kernel mode {k.mode!r}")
        if not set(k.action_agents) <= set(nb) or list(k.action_agents) != sorted(set(k.action_agents)):
            raise ModelError(f"kernel action scope of agent {i} must be an ordered subset of N({i})")
        n_next = len(self.local_states[i]) if k.mode == OWN_NEXT else self.n_scope_states(i)
        shape = (self.n_scope_states(i), self.n_actions(k.action_agents), n_next)
        if k.table.shape != shape:
            raise ModelError(f"kernel of agent {i} has shape {k.table.shape}, expected {shape}")
        if np.any(k.table < -PROB_TOL):
            raise ModelError(f"negative transition probability for agent {i}")
        sums = k.table.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)[0]
            raise ModelError(f"kernel row {tuple(bad)} of agent {i} sums to {sums[tuple(bad)]}")
        # renormalise rows within tolerance
        table = np.clip(k.table, 0.0, None)
        table = table / table.sum(axis=-1, keepdims=True)
        object.__setattr__(k, "table", table)

    # --- sizes and indexing -------------------------------------------------
    @property
    def agents(self) -> tuple[int, ...]:
        return self.graph.agents

    def scope(self, i: int) -> NeighborhoodScope:
        return neighborhood(self.graph, i)

    def state_sizes(self, members: Sequence[int]) -> tuple[int, ...]:
        return tuple(len(self.local_states[m]) for m in members)

    def action_sizes(self, members: Sequence[int]) -> tuple[int, ...]:
        return tuple(len(self.local_actions[m]) for m in members)

    def n_scope_states(self, i: int) -> int:
        return int(np.prod(self.state_sizes(self.scope(i).members)))

    def n_actions(self, members: Sequence[int]) -> int:
        return int(np.prod(self.action_sizes(members))) if members else 1

    def state_index(self, i: int, name: str) -> int:
        return self.local_states[i].index(name)

    def action_index(self, i: int, name: str) -> int:
        return self.local_actions[i].index(name)

    def initial_indices(self) -> dict[int, int]:
        return {i: self.state_index(i, s) for i, s in self.initial_state.items()}

    def node_label(self, i: int, local_state: int) -> frozenset[str]:
        return self.labels[i].get(self.local_states[i][local_state], frozenset())

    def transition_prob(self, i: int, joint_state: int, joint_action: int, joint_next: int) -> float:
        """P_i(next | state, action) in the agent's declared factorisation mode."""
        k = self.kernels[i]
        return float(k.table[joint_state, joint_action, joint_next])


# --- local neighbourhood models -------------------------------------------

@dataclass
class LocalMdp:
    owner: int
    members: tuple[int, ...]
    state_sizes: tuple[int, ...]
    action_members: tuple[int, ...]
    action_sizes: tuple[int, ...]
    kernel: np.ndarray  # (nS, nA, nS)
    reward: np.ndarray  # (nS, nA)
    initial: int

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]


def _closure_state_index(model: FactoredMdp, j: int, members, coords) -> np.ndarray:
    """Index into S_{N(j)} for every local-scope state, pinning out-of-scope coordinates."""
    nj = model.scope(j).members
    init = model.initial_indices()
    pos = {m: k for k, m in enumerate(members)}
    cols = [coords[:, pos[m]] if m in pos else np.full(coords.shape[0], init[m]) for m in nj]
    return ravel(np.stack(cols, axis=1), model.state_sizes(nj))


def _closure_action_index(model: FactoredMdp, agents, action_members, acoords) -> np.ndarray:
    pos = {m: k for k, m in enumerate(action_members)}
    if not agents:
        return np.zeros(acoords.shape[0], dtype=np.int64)
    cols = [acoords[:, pos[m]] if m in pos else np.zeros(acoords.shape[0], dtype=np.int64) for m in agents]
    return ravel(np.stack(cols, axis=1), model.action_sizes(agents))


def local_mdp(model: FactoredMdp, i: int) -> LocalMdp:
    members = model.scope(i).members
    ssizes = model.state_sizes(members)
    amembers = model.decision_agents[i]
    asizes = model.action_sizes(amembers)
    nS = int(np.prod(ssizes))
    nA = int(np.prod(asizes))
    if nS * nA * nS > MAX_LOCAL_ENTRIES:
        raise ModelError(f"local model of agent {i} too large ({nS} states x {nA} actions)")
    coords = joint_coords(ssizes)
    acoords = joint_coords(asizes)
    k_i = model.kernels[i]
    if k_i.mode == JOINT_NEXT:
        aidx = _closure_action_index(model, k_i.action_agents, amembers, acoords)
        kernel = k_i.table[:, aidx, :]
    else:
        kernel = np.ones((nS, nA, nS))
        for pos_j, j in enumerate(members):
            k_j = model.kernels[j]
            sidx = _closure_state_index(model, j, members, coords)
            aidx = _closure_action_index(model, k_j.action_agents, amembers, acoords)
            if k_j.mode == OWN_NEXT:
                factor = k_j.table[sidx][:, aidx, :]  # (nS, nA, |S_j|)
            else:
                # marginal of j's joint-next kernel on j's own coordinate
                nj = model.scope(j).members
                full = k_j.table[sidx][:, aidx, :]
                jc = joint_coords(model.state_sizes(nj))[:, nj.index(j)]
                factor = np.zeros((nS, nA, len(model.local_states[j])))
                for v in range(factor.shape[2]):
                    factor[:, :, v] = full[:, :, jc == v].sum(axis=2)
            kernel *= factor[:, :, coords[:, pos_j]]
    aidx_r = _closure_action_index(model, k_i.action_agents, amembers, acoords)
    reward = model.rewards[i][:, aidx_r]
    init = model.initial_indices()
    s0 = ravel(np.array([[init[m] for m in members]]), ssizes)[0]
    return LocalMdp(i, members, ssizes, amembers, asizes, kernel, reward, int(s0))


# --- policies ---------------------------------------------------------------

@dataclass
class AgentMemory:
    """Automaton memory carried by a finite-memory policy."""

    delta: np.ndarray  # (nQ, nLetters)
    letters: np.ndarray  # letter index of every local-scope state
    q_init: int

    def start(self, s0: np.ndarray | int):
        return self.delta[self.q_init, self.letters[s0]]

    def step(self, q, s_next):
        return self.delta[q, self.letters[s_next]]


@dataclass
class FactoredPolicy:
    """Per-agent randomised policies over joint neighbourhood actions.

    ``tables[i]`` has shape (nQ, |S_{N(i)}|, |A_dec(i)|); nQ = 1 and
    ``memory[i] is None`` for memoryless policies.
    """

    tables: dict[int, np.ndarray]
    memory: dict[int, AgentMemory | None] = field(default_factory=dict)

    def __post_init__(self):
        for i, t in self.tables.items():
            if t.ndim == 2:
                t = t[None]
                self.tables[i] = t
            if np.any(t < -1e-9) or np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-9):
                raise ModelError(f"policy rows of agent {i} are not distributions")
            self.memory.setdefault(i, None)

    def distribution(self, i: int, joint_state: int, q: int = 0) -> np.ndarray:
        return self.tables[i][q, joint_state]

    @property
    def memoryless(self) -> bool:
        return all(m is None for m in self.memory.values())


def policy_from_occupancy(occupancy: Mapping[int, np.ndarray]) -> FactoredPolicy:
    """Normalise occupancy rows; rows without mass become uniform."""
    tables = {}
    for i, o in occupancy.items():
        o = np.clip(np.asarray(o, dtype=float), 0.0, None)
        tot = o.sum(axis=-1, keepdims=True)
        uniform = np.full_like(o, 1.0 / o.shape[-1])
        with np.errstate(invalid="ignore", divide="ignore"):
            tables[i] = np.where(tot > 0, o / np.where(tot > 0, tot, 1.0), uniform)
    return FactoredPolicy(tables)


def uniform_policy(model: FactoredMdp) -> FactoredPolicy:
    tables = {}
    for i in model.agents:
        nA = model.n_actions(model.decision_agents[i])
        tables[i] = np.full((1, model.n_scope_states(i), nA), 1.0 / nA)
    return FactoredPolicy(tables)


def induced_chain(model: FactoredMdp, policy: FactoredPolicy) -> dict[int, np.ndarray]:
    """Per-agent neighbourhood chain P_sigma(s'|s) = sum_a sigma(s,a) P(s'|s,a)."""
    if not policy.memoryless:
        raise ModelError("induced_chain needs a memoryless policy; use the product chain instead")
    chains = {}
    for i in model.agents:
        loc = local_mdp(model, i)
        t = policy.tables.get(i)
        if t is None or t.shape[1:] != (loc.n_states, loc.n_actions):
            raise ModelError(f"policy scope mismatch for agent {i}")
        chains[i] = np.einsum("sa,sat->st", t[0], loc.kernel)
    return chains


# --- simulation -------------------------------------------------------------

@dataclass
class Trajectory:
    """Joint states s(0..T) as local-state indices, shape (T+1, M)."""

    agents: tuple[int, ...]
    states: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def as_names(self, model: FactoredMdp) -> list[dict[int, str]]:
        return [
            {a: model.local_states[a][int(row[k])] for k, a in enumerate(self.agents)}
            for row in self.states
        ]


def _sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (cdf < u[:, None]).sum(axis=1)


class _SimPlan:
    """Precomputed index maps used by the vectorised simulator."""

    def __init__(self, model: FactoredMdp, policy: FactoredPolicy):
        self.model = model
        self.agents = model.agents
        self.pos = {a: k for k, a in enumerate(self.agents)}
        self.scope_pos = {}
        self.scope_sizes = {}
        self.own_marg = {}
        self.dec_pos = {}
        for i in self.agents:
            members = model.scope(i).members
            self.scope_pos[i] = [self.pos[m] for m in members]
            self.scope_sizes[i] = model.state_sizes(members)
            dec = model.decision_agents[i]
            t = policy.tables.get(i)
            if t is None or t.shape[1:] != (model.n_scope_states(i), model.n_actions(dec)):
                raise ModelError(f"policy scope mismatch for agent {i}")
            acoords = joint_coords(model.action_sizes(dec))
            own = acoords[:, dec.index(i)]
            self.own_marg[i] = np.eye(len(model.local_actions[i]))[own]  # (nA, |A_i|)
        self.policy = policy

    def scope_index(self, i, states):
        return ravel(states[:, self.scope_pos[i]], self.scope_sizes[i])


def simulate_batch(
    model: FactoredMdp,
    policy: FactoredPolicy,
    horizon: int,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample ``n`` trajectories; returns local-state indices of shape (n, horizon+1, M).

    Every agent draws its own action from the marginal of its neighbourhood
    policy, then every agent's own next state is drawn from its kernel.
    """
    if horizon < 0:
        raise ModelError("horizon must be non-negative")
    plan = _SimPlan(model, policy)
    agents = model.agents
    M = len(agents)
    init = model.initial_indices()
    out = np.zeros((n, horizon + 1, M), dtype=np.int64)
    cur = np.tile(np.array([init[a] for a in agents], dtype=np.int64), (n, 1))
    out[:, 0] = cur
    mem = {}
    for i in agents:
        m = policy.memory.get(i)
        mem[i] = m.start(plan.scope_index(i, cur)) if m is not None else np.zeros(n, dtype=np.int64)
    for t in range(horizon):
        actions = np.zeros((n, M), dtype=np.int64)
        for i in agents:
            s_idx = plan.scope_index(i, cur)
            probs = policy.tables[i][mem[i], s_idx] @ plan.own_marg[i]
            actions[:, plan.pos[i]] = _sample(probs, rng.random(n))
        nxt = np.zeros_like(cur)
        for i in agents:
            k = model.kernels[i]
            s_idx = plan.scope_index(i, cur)
            a_idx = ravel(actions[:, [plan.pos[a] for a in k.action_agents]], model.action_sizes(k.action_agents))
            row = k.table[s_idx, a_idx]
            if k.mode == JOINT_NEXT:
                members = model.scope(i).members
                own = joint_coords(model.state_sizes(members))[:, members.index(i)]
                row = row @ np.eye(len(model.local_states[i]))[own]
            nxt[:, plan.pos[i]] = _sample(row, rng.random(n))
        cur = nxt
        out[:, t + 1] = cur
        for i in agents:
            m = policy.memory.get(i)
            if m is not None:
                mem[i] = m.step(mem[i], plan.scope_index(i, cur))
    return out


def simulate(model: FactoredMdp, policy: FactoredPolicy, horizon: int, seed: int) -> Trajectory:
    """One seeded rollout (numpy PCG64 via ``default_rng(seed)``)."""
    rng = np.random.default_rng(seed)
    states = simulate_batch(model, policy, horizon, 1, rng)[0]
    return Trajectory(model.agents, states)


def simulate_with_rewards(
    model: FactoredMdp,
    policy: FactoredPolicy,
    horizon: int,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`simulate_batch` but also returns owner rewards, shape (n, horizon, M)."""
    plan = _SimPlan(model, policy)
    agents = model.agents
    M = len(agents)
    init = model.initial_indices()
    states = np.zeros((n, horizon + 1, M), dtype=np.int64)
    rewards = np.zeros((n, horizon, M))
    cur = np.tile(np.array([init[a] for a in agents], dtype=np.int64), (n, 1))
    states[:, 0] = cur
    mem = {}
    for i in agents:
        m = policy.memory.get(i)
        mem[i] = m.start(plan.scope_index(i, cur)) if m is not None else np.zeros(n, dtype=np.int64)
    for t in range(horizon):
        actions = np.zeros((n, M), dtype=np.int64)
        for i in agents:
            s_idx = plan.scope_index(i, cur)
            probs = policy.tables[i][mem[i], s_idx] @ plan.own_marg[i]
            actions[:, plan.pos[i]] = _sample(probs, rng.random(n))
        nxt = np.zeros_like(cur)
        for i in agents:
            k = model.kernels[i]
            s_idx = plan.scope_index(i, cur)
            a_idx = ravel(actions[:, [plan.pos[a] for a in k.action_agents]], model.action_sizes(k.action_agents))
            rewards[:, t, plan.pos[i]] = model.rewards[i][s_idx, a_idx]
            row = k.table[s_idx, a_idx]
            if k.mode == JOINT_NEXT:
                members = model.scope(i).members
                own = joint_coords(model.state_sizes(members))[:, members.index(i)]
                row = row @ np.eye(len(model.local_states[i]))[own]
            nxt[:, plan.pos[i]] = _sample(row, rng.random(n))
        cur = nxt
        states[:, t + 1] = cur
        for i in agents:
            m = policy.memory.get(i)
            if m is not None:
                mem[i] = m.step(mem[i], plan.scope_index(i, cur))
    return states, rewards
