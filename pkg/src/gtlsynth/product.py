"""Per-agent product of the neighbourhood model with the agent's spec automaton.

Product states are pairs (s, q) of a joint neighbourhood state and an
automaton state, restricted to those reachable from
(s_init, delta(q_init, L(s_init))) under some action sequence.  Automaton
moves are driven by the label of the *next* neighbourhood state.

Accepting product states form a closed set: the automaton's accepting
states are absorbing, so once the pair enters the set it never leaves,
while the model coordinates keep evolving (and keep collecting reward).
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fmdp import AgentMemory, FactoredMdp, FactoredPolicy, LocalMdp, ModelError, joint_coords, local_mdp
from .logic.automaton import Polarity, SpecAutomaton, to_automaton
from .logic.formula import parse
from .logic.grounding import ground

log = logging.getLogger(__name__)

MAX_CHAIN_STATES = 200_000


class ProductError(ValueError):
    pass


def trivial_automaton() -> SpecAutomaton:
    """One-state automaton of the formula ``true``: no memory, always accepting."""
    return SpecAutomaton((), np.zeros((1, 1), dtype=np.int64), 0, frozenset({0}), frozenset(), Polarity.SATISFACTION)


def scope_letters(model: FactoredMdp, loc: LocalMdp, aut: SpecAutomaton) -> np.ndarray:
    """Automaton letter of every joint neighbourhood state."""
    coords = joint_coords(loc.state_sizes)
    letters = np.zeros(loc.n_states, dtype=np.int64)
    pos = {m: k for k, m in enumerate(loc.members)}
    known = set()
    for i in model.agents:
        for props in model.labels[i].values():
            known |= {(p, i) for p in props}
    for k, (prop, node) in enumerate(aut.atoms):
        if node not in pos:
            raise ProductError(f"automaton of agent {loc.owner} reads node {node} outside its neighbourhood")
        if (prop, node) not in known:
            log.warning("proposition %s never labels node %d; it is constantly false", prop, node)
        table = np.array([prop in model.node_label(node, s) for s in range(loc.state_sizes[pos[node]])])
        letters |= table[coords[:, pos[node]]].astype(np.int64) << k
    return letters


@dataclass
class AgentProduct:
    agent: int
    local: LocalMdp
    automaton: SpecAutomaton
    has_spec: bool
    lam: float
    letters: np.ndarray  # (nS,)
    states: np.ndarray  # (nP, 2): model state, automaton state
    index: np.ndarray  # (nQ, nS) -> product index or -1
    initial: int
    accepting: np.ndarray  # bool (nP,)
    trans: sp.csr_matrix  # (nP * nA, nP)
    reward: np.ndarray  # (nP, nA)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.local.n_actions

    @property
    def polarity(self) -> Polarity:
        return self.automaton.polarity

    def kernel_rows(self) -> sp.csr_matrix:
        return self.trans


@dataclass
class ProductModel:
    model: FactoredMdp
    agents: dict[int, AgentProduct]
    spec_agents: tuple[int, ...] = field(default_factory=tuple)

    def __getitem__(self, i: int) -> AgentProduct:
        return self.agents[i]


def build_agent_product(model: FactoredMdp, i: int, aut: SpecAutomaton | None, lam: float = 0.0) -> AgentProduct:
    loc = local_mdp(model, i)
    has_spec = aut is not None
    aut = aut or trivial_automaton()
    letters = scope_letters(model, loc, aut)
    nS, nA = loc.n_states, loc.n_actions
    delta = aut.delta
    q0 = int(delta[aut.initial, letters[loc.initial]])
    index = -np.ones((aut.n_states, nS), dtype=np.int64)
    states = [(loc.initial, q0)]
    index[q0, loc.initial] = 0
    rows, cols, vals = [], [], []
    queue = deque([0])
    support = loc.kernel > 0
    while queue:
        p = queue.popleft()
        s, q = states[p]
        a_idx, s_next = np.nonzero(support[s])
        q_next = delta[q, letters[s_next]]
        for a, sn, qn in zip(a_idx.tolist(), s_next.tolist(), q_next.tolist()):
            tgt = index[qn, sn]
            if tgt < 0:
                tgt = len(states)
                index[qn, sn] = tgt
                states.append((sn, qn))
                queue.append(tgt)
            rows.append(p * nA + a)
            cols.append(int(tgt))
            vals.append(loc.kernel[s, a, sn])
    nP = len(states)
    states_arr = np.array(states, dtype=np.int64)
    trans = sp.csr_matrix((vals, (rows, cols)), shape=(nP * nA, nP))
    accepting = np.isin(states_arr[:, 1], list(aut.accepting)) if has_spec else np.zeros(nP, bool)
    reward = loc.reward[states_arr[:, 0]]
    return AgentProduct(i, loc, aut, has_spec, lam, letters, states_arr, index, 0, accepting, trans, reward)


def compile_spec(model: FactoredMdp, i: int, formula: str) -> SpecAutomaton:
    return to_automaton(ground(parse(formula), model.graph, i))


def build_product(
    model: FactoredMdp,
    automata: dict[int, SpecAutomaton] | None = None,
    lambdas: dict[int, float] | None = None,
    jobs: int = 1,
) -> ProductModel:
    """Build every agent's product; automata default to compiling ``model.specs``."""
    if automata is None:
        automata = {i: compile_spec(model, i, s.formula) for i, s in model.specs.items()}
    lambdas = dict(lambdas or {})
    for i in automata:
        if i not in lambdas:
            lambdas[i] = model.specs[i].lam if i in model.specs else 0.0
        if not 0.0 <= lambdas[i] <= 1.0:
            raise ModelError(f"lambda for agent {i} outside [0, 1]")

    def one(i):
        return i, build_agent_product(model, i, automata.get(i), lambdas.get(i, 0.0))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            built = dict(ex.map(one, model.agents))
    else:
        built = dict(map(one, model.agents))
    return ProductModel(model, built, tuple(sorted(automata)))


# --- policies on the product ----------------------------------------------------

def product_policy_table(prod: AgentProduct, occupancy: np.ndarray) -> np.ndarray:
    """Normalise product occupancies (nP, nA) into action distributions; zero rows uniform."""
    o = np.clip(occupancy, 0.0, None)
    tot = o.sum(axis=1, keepdims=True)
    uniform = np.full_like(o, 1.0 / o.shape[1])
    return np.where(tot > 1e-14, o / np.where(tot > 1e-14, tot, 1.0), uniform)


def memoryful_policy(product: ProductModel, tables: dict[int, np.ndarray]) -> FactoredPolicy:
    """Lift product policies (nP, nA) to finite-memory policies on the original model."""
    out, memory = {}, {}
    for i, prod in product.agents.items():
        t = tables[i]
        nQ = prod.automaton.n_states
        nS, nA = prod.local.n_states, prod.n_actions
        full = np.full((nQ, nS, nA), 1.0 / nA)
        full[prod.states[:, 1], prod.states[:, 0]] = t
        out[i] = full
        memory[i] = AgentMemory(prod.automaton.delta, prod.letters, prod.automaton.initial) if nQ > 1 else None
        if nQ == 1:
            memory[i] = None
    return FactoredPolicy(out, memory)


def product_chain(prod: AgentProduct, policy_table: np.ndarray) -> sp.csr_matrix:
    """Induced chain of the product under a product policy (nP, nA)."""
    nP, nA = policy_table.shape
    weights = sp.diags(policy_table.ravel())
    collapse = sp.kron(sp.identity(nP), np.ones((1, nA)), format="csr")
    return (collapse @ weights @ prod.trans).tocsr()


def satisfaction_probability(prod: AgentProduct, policy_table: np.ndarray, discount: float = 1.0) -> float:
    """Exact probability of meeting the agent's specification under a product policy.

    With ``discount < 1`` the process is killed with probability 1-discount
    at every step, matching the occupancy constraint of the synthesis LP.
    For violation-polarity automata the reach probability of the violation
    set is returned as 1 - reach.
    """
    if prod.n_states > MAX_CHAIN_STATES:
        raise ProductError(f"product of agent {prod.agent} too large for an exact solve")
    if not prod.has_spec:
        return 1.0
    reach = reach_probability(prod, policy_table, discount)
    return 1.0 - reach if prod.polarity is Polarity.VIOLATION else reach


def reach_probability(prod: AgentProduct, policy_table: np.ndarray, discount: float = 1.0) -> float:
    acc = prod.accepting
    if acc[prod.initial]:
        return 1.0
    if not acc.any():
        return 0.0
    P = product_chain(prod, policy_table)
    non = np.flatnonzero(~acc)
    P_nn = P[non][:, non]
    b = discount * np.asarray(P[non][:, np.flatnonzero(acc)].sum(axis=1)).ravel()
    if discount >= 1.0:
        # states that cannot reach the accepting set have value 0
        live = _can_reach(P_nn, b > 0)
        h = np.zeros(len(non))
        idx = np.flatnonzero(live)
        if len(idx):
            A = sp.identity(len(idx)) - P_nn[idx][:, idx]
            h[idx] = spla.spsolve(A.tocsc(), b[idx])
    else:
        A = sp.identity(len(non)) - discount * P_nn
        h = spla.spsolve(A.tocsc(), b)
    pos = np.searchsorted(non, prod.initial)
    return float(np.clip(np.atleast_1d(h)[pos], 0.0, 1.0))


def _can_reach(P: sp.csr_matrix, target: np.ndarray) -> np.ndarray:
    seen = target.copy()
    Pt = P.T.tocsr()
    queue = deque(np.flatnonzero(target).tolist())
    while queue:
        r = queue.popleft()
        for q in Pt.indices[Pt.indptr[r] : Pt.indptr[r + 1]]:
            if not seen[q]:
                seen[q] = True
                queue.append(q)
    return seen


def transient(prod: AgentProduct) -> bool:
    """True when every policy reaches the accepting set with probability 1.

    Computes the largest set of non-accepting states in which some action
    keeps the process forever; the product is transient iff it is empty.
    """
    nA = prod.n_actions
    acc = prod.accepting
    inside = ~acc
    T = prod.trans.tocsr()
    while True:
        keep = np.zeros_like(inside)
        for p in np.flatnonzero(inside):
            for a in range(nA):
                row = T.indices[T.indptr[p * nA + a] : T.indptr[p * nA + a + 1]]
                if row.size and inside[row].all():
                    keep[p] = True
                    break
        if (keep == inside).all():
            break
        inside = keep
    return not inside.any()


def product_summary(product: ProductModel) -> dict:
    out = {}
    for i, prod in product.agents.items():
        out[str(i)] = {
            "neighbourhood": list(prod.local.members),
            "model_states": int(prod.local.n_states),
            "automaton_states": int(prod.automaton.n_states),
            "product_states": int(prod.n_states),
            "joint_actions": int(prod.n_actions),
            "accepting_states": int(prod.accepting.sum()),
            "polarity": prod.polarity.value if prod.has_spec else None,
            "lambda": prod.lam if prod.has_spec else None,
        }
    return out
