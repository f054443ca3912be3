"""Independent reference computations shared by the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gtlsynth.fmdp import OWN_NEXT, AgentKernel, FactoredMdp, FactoredPolicy, SpecEntry, joint_coords, local_mdp
from gtlsynth.graph import InteractionGraph
from gtlsynth.logic.automaton import Polarity, SpecAutomaton, to_automaton
from gtlsynth.logic.formula import parse
from gtlsynth.logic.grounding import ground
from gtlsynth.logic.monitor import Evaluator, verdicts

FIG2 = InteractionGraph.from_edges([1, 2, 3, 4], [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)])
FIG4 = InteractionGraph.from_edges(
    [1, 2, 3, 4],
    [(1, 2), (1, 3), (2, 4), (3, 4), (2, 3)],
    {(1, 2): 1, (1, 3): 4, (2, 4): 1, (3, 4): 2, (2, 3): 3},
)

CORPUS = [
    "! F G[<=2] d & ! F G[<=3] E2 o d",
    "G F[<=3] (crit | E1 o crit)",
    "F[<=1] p",
    "true",
    "false",
    "p U q",
    "F G[<=2] d",
    "G F[<=3] p",
    "X X p | G[<=2] q",
    "p U[<=3] q",
    "p U[>=2] q",
    "F[>=2] p",
    "G[>=1] p",
    "E2 o p U q",
    "! (p U q) & F[<=4] q",
    "G (p -> X ! p)",
    "F (p & X q)",
]

# formulas evaluated at node 1 of the labelled graph
LABELLED_CORPUS = [
    "E2 o[y<=2] o[y<=2] p",
    "G[<=2] (p | E1 o[y<=2] p)",
    "E1 o[y>3] q U p",
]


def all_traces(n_atoms: int, length: int) -> np.ndarray:
    """Every letter sequence of the given length, shape (n_letters**length, length)."""
    n_letters = 1 << n_atoms
    grid = np.array(list(itertools.product(range(n_letters), repeat=length)), dtype=np.int64)
    return grid.reshape(-1, length)


def compare_formula(formula, graph: InteractionGraph, node: int, max_len: int = 6):
    """Return (n_checked, mismatches_sound, mismatches_complete) over all traces up to max_len.

    Semantics are evaluated on the ungrounded formula so that neighbour
    resolution is exercised independently of grounding.
    """
    grounded = ground(formula, graph, node)
    aut = to_automaton(grounded)
    atoms = aut.atoms
    checked = bad_sound = bad_complete = 0
    for length in range(1, max_len + 1):
        letters = all_traces(len(atoms), length)
        q = aut.run_batch(letters)
        a_codes = aut.verdict_codes(q)
        bits = {a: ((letters >> k) & 1).astype(bool) for k, a in enumerate(atoms)}
        B = letters.shape[0]

        def atom(prop, v, bits=bits, shape=letters.shape):
            return bits.get((prop, v), np.zeros(shape, bool))

        ev = Evaluator(graph, atom, B, length)
        m_codes = verdicts(ev, formula, node, 0)
        g_codes = verdicts(Evaluator(graph, atom, B, length), grounded, node, 0)
        if not np.array_equal(m_codes, g_codes):
            raise AssertionError("grounding changed a verdict")
        det = m_codes >= 0
        bad_sound += int(np.sum(det & (a_codes != m_codes)))
        bad_complete += int(np.sum(~det & (a_codes >= 0)))
        checked += B
    return checked, bad_sound, bad_complete


# --- single-agent models -------------------------------------------------------

def random_single_agent(seed: int, n_states: int, n_actions: int, spec: str | None = None, lam: float = 0.5):
    """One agent, no neighbours, Dirichlet kernel, uniform rewards; state 0 starts, odd states carry g."""
    rng = np.random.default_rng(seed)
    g = InteractionGraph((1,))
    names = tuple(f"s{k}" for k in range(n_states))
    table = rng.dirichlet(np.full(n_states, 0.5), size=(n_states, n_actions))
    labels = {1: {n: frozenset({"g"}) if k % 2 else frozenset() for k, n in enumerate(names)}}
    rewards = {1: rng.uniform(0.0, 1.0, size=(n_states, n_actions))}
    specs = {1: SpecEntry(spec, lam)} if spec else {}
    return FactoredMdp(
        g,
        {1: names},
        {1: tuple(f"a{k}" for k in range(n_actions))},
        {1: names[0]},
        {1: AgentKernel(OWN_NEXT, (1,), table)},
        labels,
        rewards,
        specs=specs,
    )


def deterministic_policies(model: FactoredMdp, discount: float):
    """Every deterministic memoryless policy of a single-agent model with its value at the start state.

    Values come from a direct linear solve of (I - discount P_pi) v = r_pi.
    """
    k = model.kernels[1].table
    r = model.rewards[1]
    nS, nA, _ = k.shape
    s0 = model.initial_indices()[1]
    out = []
    for choice in itertools.product(range(nA), repeat=nS):
        idx = np.arange(nS), np.array(choice)
        v = np.linalg.solve(np.eye(nS) - discount * k[idx], r[idx])
        out.append((np.array(choice), float(v[s0])))
    return out


def _letter_table(model: FactoredMdp, i: int, aut: SpecAutomaton) -> np.ndarray:
    """Letter of every neighbourhood state, computed straight from the node labels."""
    members = model.scope(i).members
    coords = joint_coords(model.state_sizes(members))
    letters = np.zeros(len(coords), dtype=np.int64)
    for bit, (prop, node) in enumerate(aut.atoms):
        col = coords[:, members.index(node)]
        truth = np.array([prop in model.node_label(node, s) for s in range(len(model.local_states[node]))])
        letters |= truth[col].astype(np.int64) << bit
    return letters


def _killed_reach(P: sp.csr_matrix, start: int, target: np.ndarray, discount: float) -> float:
    """Probability of hitting ``target`` when every step survives with probability ``discount``."""
    if target[start]:
        return 1.0
    live = np.flatnonzero(~target)
    A = sp.identity(len(live)) - discount * P[live][:, live]
    rhs = discount * np.asarray(P[live][:, np.flatnonzero(target)].sum(axis=1)).ravel()
    x = spla.spsolve(A.tocsc(), rhs)
    return float(np.atleast_1d(x)[np.searchsorted(live, start)])


def chain_satisfaction(model: FactoredMdp, policy: FactoredPolicy, i: int, discount: float) -> float:
    """Satisfaction probability of agent i's spec on the chain over (neighbourhood state, automaton state).

    The automaton is compiled afresh and driven by letters read off the labels.
    """
    aut = to_automaton(ground(parse(model.specs[i].formula), model.graph, i))
    letters = _letter_table(model, i, aut)
    loc = local_mdp(model, i)
    table = policy.tables[i]
    memoryful = table.shape[0] > 1
    start = (loc.initial, int(aut.delta[aut.initial, letters[loc.initial]]))
    index, order, R, C, V = {start: 0}, [start], [], [], []
    k = 0
    while k < len(order):
        s, q = order[k]
        row = table[q if memoryful else 0, s] @ loc.kernel[s]
        for s2 in np.flatnonzero(row > 0):
            key = (int(s2), int(aut.delta[q, letters[s2]]))
            if key not in index:
                index[key] = len(order)
                order.append(key)
            R.append(k)
            C.append(index[key])
            V.append(row[s2])
        k += 1
    n = len(order)
    P = sp.csr_matrix((V, (R, C)), shape=(n, n))
    # accepting automaton states are absorbing, so first entry decides
    target = np.array([q in aut.accepting for _, q in order])
    reach = _killed_reach(P, 0, target, discount)
    return 1.0 - reach if aut.polarity is Polarity.VIOLATION else reach


def window_violation(
    model: FactoredMdp, policy: FactoredPolicy, i: int, cell: str, discount: float, window: int = 3
) -> float:
    """Probability that ``cell`` goes unwatched by every member of N(i) for more than ``window`` + 1 steps.

    Tracks a plain counter of consecutive unwatched steps next to the policy
    memory instead of any automaton built from a formula.
    """
    loc = local_mdp(model, i)
    coords = joint_coords(loc.state_sizes)
    watched = np.zeros(loc.n_states, bool)
    for k, m in enumerate(loc.members):
        if cell in model.local_states[m]:
            watched |= coords[:, k] == model.local_states[m].index(cell)
    mem = policy.memory.get(i)
    table = policy.tables[i]
    q0 = int(mem.start(loc.initial)) if mem is not None else 0
    start = (loc.initial, q0, 0 if watched[loc.initial] else 1)
    index, order, R, C, V = {start: 0}, [start], [], [], []
    k = 0
    while k < len(order):
        s, q, c = order[k]
        if c <= window:
            row = table[q, s] @ loc.kernel[s]
            for s2 in np.flatnonzero(row > 0):
                q2 = int(mem.step(q, s2)) if mem is not None else 0
                key = (int(s2), q2, 0 if watched[s2] else min(c + 1, window + 1))
                if key not in index:
                    index[key] = len(order)
                    order.append(key)
                R.append(k)
                C.append(index[key])
                V.append(row[s2])
        k += 1
    n = len(order)
    P = sp.csr_matrix((V, (R, C)), shape=(n, n))
    bad = np.array([c > window for _, _, c in order])
    return _killed_reach(P, 0, bad, discount)


def deterministic_satisfaction(model: FactoredMdp, choice: np.ndarray, discount: float) -> float:
    """Spec satisfaction of a deterministic memoryless single-agent policy."""
    nA = model.kernels[1].table.shape[1]
    table = np.eye(nA)[choice][None]
    return chain_satisfaction(model, FactoredPolicy({1: table}, {1: None}), 1, discount)


def binary_model(graph, seed):
    """Two states and two actions per agent; own-next kernels drawn at random."""
    rng = np.random.default_rng(seed)
    states, actions, init, kernels, labels, rewards = {}, {}, {}, {}, {}, {}
    for i in graph.agents:
        n_scope = 2 ** (len(tuple(graph.neighbors(i))) + 1)
        states[i] = ("u", "v")
        actions[i] = ("a", "b")
        init[i] = "u"
        kernels[i] = AgentKernel(OWN_NEXT, (i,), rng.dirichlet(np.ones(2), size=(n_scope, 2)))
        labels[i] = {"v": frozenset({"g"})}
        rewards[i] = rng.uniform(0.0, 1.0, size=(n_scope, 2))
    return FactoredMdp(graph, states, actions, init, kernels, labels, rewards)


def full_pairs(prod, pairs):
    """Occupancy indexed by the neighbourhood state order instead of product order."""
    out = np.zeros((prod.local.n_states, prod.n_actions))
    np.add.at(out, prod.states[:, 0], pairs)
    return out
