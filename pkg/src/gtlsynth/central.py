"""Centralised occupancy-measure LP over all agent products.

Variables of agent ``i``:

* ``x[p, a]`` for every reachable product state ``p`` and joint action ``a``
  of the decision scope (discounted state-action occupancy), and
* ``e[p]`` for every accepting product state (discounted mass entering the
  accepting set at ``p``).

Under a discount below one the process is read as being killed with
probability ``1 - discount`` per step, so ``sum(e)`` is exactly the
probability of reaching the accepting set before being killed.  Accepting
states keep their pair variables so occupancies stay comparable between
neighbouring agents: both agents then account for the same discounted mass
on every shared coordinate, which is what the pairwise consistency rows
require.  With ``discount == 1`` accepting states terminate the process
instead, and every product must pass a transience check.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fmdp import FactoredMdp, FactoredPolicy, ModelError, joint_coords, ravel
from .logic.automaton import Polarity
from .product import (
    AgentProduct,
    ProductModel,
    build_product,
    memoryful_policy,
    product_policy_table,
    satisfaction_probability,
    transient,
)
from .solver import ConvexProgram, SolveReport, Status, solve

log = logging.getLogger(__name__)

DEFAULT_DISCOUNT = 0.97


class SynthesisError(RuntimeError):
    """Synthesis failed; ``infeasible`` distinguishes certified infeasibility."""

    def __init__(self, message: str, infeasible: bool = False, violated: tuple[int, ...] = ()):
        super().__init__(message)
        self.infeasible = infeasible
        self.violated = violated


@dataclass
class AgentBlock:
    """LP block of one agent: local constraints only, no coupling."""

    agent: int
    prod: AgentProduct
    acc: np.ndarray  # product indices of accepting states
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.prod.n_states * self.prod.n_actions

    @property
    def n_vars(self) -> int:
        return self.n_pairs + len(self.acc)

    def program(self) -> ConvexProgram:
        return ConvexProgram(self.c, self.A, self.b, self.G, self.h, self.lb, self.ub)


def agent_block(prod: AgentProduct, discount: float, lam: float | None = None) -> AgentBlock:
    if not 0.0 < discount <= 1.0:
        raise ModelError("discount must lie in (0, 1]")
    nP, nA = prod.n_states, prod.n_actions
    n_pairs = nP * nA
    acc = np.flatnonzero(prod.accepting)
    n_acc = len(acc)
    T = prod.trans.tocsr()
    out = sp.kron(sp.identity(nP), np.ones((1, nA)), format="csr")
    pair_state = np.repeat(np.arange(nP), nA)
    from_non = sp.diags((~prod.accepting[pair_state]).astype(float))
    mu = np.zeros(nP)
    mu[prod.initial] = 1.0
    T_non_t = (from_non @ T).T.tocsr()  # inflow from non-accepting pairs
    ub = np.full(n_pairs + n_acc, np.inf)
    ub[n_pairs:] = 1.0
    if discount < 1.0:
        flow = sp.hstack([out - discount * T.T, sp.csr_matrix((nP, n_acc))])
        entry = sp.hstack([-discount * T_non_t[acc], sp.identity(n_acc)])
        A = sp.vstack([flow, entry]).tocsr()
        b = np.concatenate([mu, mu[acc]])
    else:
        if not transient(prod):
            raise ModelError(
                f"discount 1 needs every policy of agent {prod.agent} to reach its accepting set almost surely"
            )
        non = np.flatnonzero(~prod.accepting)
        flow = sp.hstack([(out - T_non_t)[non], sp.csr_matrix((len(non), n_acc))])
        entry = sp.hstack([-T_non_t[acc], sp.identity(n_acc)])
        A = sp.vstack([flow, entry]).tocsr()
        b = np.concatenate([mu[non], mu[acc]])
        ub[:n_pairs][prod.accepting[pair_state]] = 0.0
    lam = prod.lam if lam is None else lam
    if prod.has_spec:
        row = np.zeros(n_pairs + n_acc)
        if prod.polarity is Polarity.SATISFACTION:
            row[n_pairs:] = 1.0
            h = np.array([lam])
        else:
            row[n_pairs:] = -1.0
            h = np.array([lam - 1.0])
        G = sp.csr_matrix(row[None, :])
    else:
        G = sp.csr_matrix((0, n_pairs + n_acc))
        h = np.zeros(0)
    c = np.concatenate([-prod.reward.ravel(), np.zeros(n_acc)])
    lb = np.zeros(n_pairs + n_acc)
    return AgentBlock(prod.agent, prod, acc, c, A, b, G, h, lb, ub)


# --- marginals and consistency ----------------------------------------------------

def marginalize(
    occ: np.ndarray,
    from_states: tuple[int, ...],
    state_sizes: tuple[int, ...],
    from_actions: tuple[int, ...],
    action_sizes: tuple[int, ...],
    onto_states: tuple[int, ...],
    onto_actions: tuple[int, ...],
) -> np.ndarray:
    """Sum a joint occupancy of shape (|S_from|, |A_from|) onto sub-scopes.

    Returns an array of shape (|S_onto|, |A_onto|) with coordinates ordered
    as in ``onto_states`` / ``onto_actions``.
    """
    if not set(onto_states) <= set(from_states) or not set(onto_actions) <= set(from_actions):
        raise ModelError("marginal scope is not contained in the source scope")
    t = np.asarray(occ).reshape(tuple(state_sizes) + tuple(action_sizes))
    ns = len(from_states)
    keep = [from_states.index(m) for m in onto_states] + [ns + from_actions.index(m) for m in onto_actions]
    drop = tuple(k for k in range(t.ndim) if k not in keep)
    t = t.sum(axis=drop)
    remaining = [k for k in range(ns + len(from_actions)) if k not in drop]
    t = np.transpose(t, [remaining.index(k) for k in keep])
    n_s = int(np.prod([state_sizes[from_states.index(m)] for m in onto_states])) if onto_states else 1
    return t.reshape(n_s, -1)


def shared_scopes(model: FactoredMdp, i: int, j: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    si = set(model.scope(i).members)
    sj = set(model.scope(j).members)
    states = tuple(sorted(si & sj))
    actions = tuple(sorted(set(model.decision_agents[i]) & set(model.decision_agents[j]) & set(states)))
    return states, actions


def combo_index(prod: AgentProduct, model: FactoredMdp, states: tuple, actions: tuple) -> np.ndarray:
    """Shared-coordinate combination index of every pair variable of ``prod``."""
    loc = prod.local
    sc = joint_coords(loc.state_sizes)[prod.states[:, 0]]
    sc = sc[:, [loc.members.index(m) for m in states]]
    ac = joint_coords(loc.action_sizes)[:, [loc.action_members.index(m) for m in actions]]
    s_idx = ravel(sc, model.state_sizes(states))
    a_idx = ravel(ac, model.action_sizes(actions))
    n_a = model.n_actions(actions)
    return (s_idx[:, None] * n_a + a_idx[None, :]).ravel()


@dataclass
class Coupling:
    """Pairwise consistency rows in a global row space.

    ``rows[i]`` lists the global rows touching agent ``i`` and ``mats[i]``
    maps agent ``i``'s variables onto them (+1 for the smaller agent of a
    pair, -1 for the larger).
    """

    n_rows: int
    rows: dict[int, np.ndarray]
    mats: dict[int, sp.csr_matrix]
    pairs: list[tuple[int, int, int, int]] = field(default_factory=list)  # (i, j, start, stop)

    def count(self) -> np.ndarray:
        c = np.zeros(self.n_rows)
        for r in self.rows.values():
            c[r] += 1
        return c


def build_coupling(model: FactoredMdp, blocks: dict[int, AgentBlock]) -> Coupling:
    agents = sorted(blocks)
    parts: dict[int, list] = {i: [] for i in agents}
    pairs = []
    start = 0
    for a, i in enumerate(agents):
        for j in agents[a + 1 :]:
            states, actions = shared_scopes(model, i, j)
            if not states:
                continue
            n_combo = int(np.prod(model.state_sizes(states))) * model.n_actions(actions)
            ci = combo_index(blocks[i].prod, model, states, actions)
            cj = combo_index(blocks[j].prod, model, states, actions)
            used = np.union1d(ci, cj)
            remap = -np.ones(n_combo, dtype=np.int64)
            remap[used] = np.arange(len(used))
            k = len(used)
            Mi = sp.csr_matrix((np.ones(len(ci)), (remap[ci], np.arange(len(ci)))), shape=(k, blocks[i].n_vars))
            Mj = sp.csr_matrix((-np.ones(len(cj)), (remap[cj], np.arange(len(cj)))), shape=(k, blocks[j].n_vars))
            parts[i].append((start, Mi))
            parts[j].append((start, Mj))
            pairs.append((i, j, start, start + k))
            start += k
    rows, mats = {}, {}
    for i in agents:
        if parts[i]:
            rows[i] = np.concatenate([np.arange(s, s + M.shape[0]) for s, M in parts[i]])
            mats[i] = sp.vstack([M for _, M in parts[i]]).tocsr()
        else:
            rows[i] = np.zeros(0, dtype=np.int64)
            mats[i] = sp.csr_matrix((0, blocks[i].n_vars))
    return Coupling(start, rows, mats, pairs)


# --- assembly --------------------------------------------------------------------

@dataclass
class Assembly:
    model: FactoredMdp
    product: ProductModel
    blocks: dict[int, AgentBlock]
    coupling: Coupling
    offsets: dict[int, int]
    program: ConvexProgram
    discount: float


def assemble(product: ProductModel, lambdas: dict[int, float] | None = None, discount: float = DEFAULT_DISCOUNT) -> Assembly:
    lambdas = lambdas or {}
    for i, lam in lambdas.items():
        if not 0.0 <= lam <= 1.0:
            raise ModelError(f"lambda for agent {i} outside [0, 1]")
    blocks = {}
    for i, prod in product.agents.items():
        lam = lambdas.get(i, prod.lam)
        if prod.has_spec and prod.polarity is Polarity.SATISFACTION and lam > 0 and not prod.accepting.any():
            raise SynthesisError(f"agent {i} can never satisfy its specification", True, (i,))
        blocks[i] = agent_block(prod, discount, lam)
    model = product.model
    coupling = build_coupling(model, blocks)
    agents = sorted(blocks)
    offsets, off = {}, 0
    for i in agents:
        offsets[i] = off
        off += blocks[i].n_vars
    A_local = sp.block_diag([blocks[i].A for i in agents], format="csr")
    G = sp.block_diag([blocks[i].G for i in agents], format="csr")
    cons = sp.csr_matrix((coupling.n_rows, off))
    if coupling.n_rows:
        pieces = []
        for i in agents:
            M = coupling.mats[i].tocoo()
            pieces.append(
                sp.csr_matrix(
                    (M.data, (coupling.rows[i][M.row], M.col + offsets[i])), shape=(coupling.n_rows, off)
                )
            )
        cons = sum(pieces[1:], pieces[0]).tocsr()
    A = sp.vstack([A_local, cons]).tocsr()
    b = np.concatenate([blocks[i].b for i in agents] + [np.zeros(coupling.n_rows)])
    h = np.concatenate([blocks[i].h for i in agents])
    prog = ConvexProgram(
        np.concatenate([blocks[i].c for i in agents]),
        A,
        b,
        G,
        h,
        np.concatenate([blocks[i].lb for i in agents]),
        np.concatenate([blocks[i].ub for i in agents]),
    )
    return Assembly(model, product, blocks, coupling, offsets, prog, discount)


# --- solutions ---------------------------------------------------------------------

@dataclass
class OccupancySolution:
    pairs: dict[int, np.ndarray]  # (nP, nA)
    entries: dict[int, np.ndarray]  # (n_acc,)
    objective: float
    satisfaction: dict[int, float] = field(default_factory=dict)
    margins: dict[int, float] = field(default_factory=dict)

    def vector(self, i: int) -> np.ndarray:
        return np.concatenate([self.pairs[i].ravel(), self.entries[i]])


def split_solution(asm: Assembly, x: np.ndarray) -> dict[int, np.ndarray]:
    return {i: x[asm.offsets[i] : asm.offsets[i] + b.n_vars] for i, b in asm.blocks.items()}


def finish(asm: Assembly, vectors: dict[int, np.ndarray], lambdas: dict[int, float]) -> tuple[OccupancySolution, FactoredPolicy]:
    """Clamp occupancies, extract policies by row normalisation, and score them."""
    pairs, entries, tables = {}, {}, {}
    objective = 0.0
    for i, blk in asm.blocks.items():
        v = vectors[i]
        x = np.clip(v[: blk.n_pairs], 0.0, None).reshape(blk.prod.n_states, blk.prod.n_actions)
        e = np.clip(v[blk.n_pairs :], 0.0, 1.0)
        pairs[i], entries[i] = x, e
        objective += float(blk.prod.reward.ravel() @ x.ravel())
        tables[i] = product_policy_table(blk.prod, x)
    sol = OccupancySolution(pairs, entries, objective)
    for i in asm.product.spec_agents:
        prod = asm.blocks[i].prod
        p = satisfaction_probability(prod, tables[i], asm.discount)
        sol.satisfaction[i] = p
        sol.margins[i] = p - lambdas.get(i, prod.lam)
    return sol, memoryful_policy(asm.product, tables)


def consistency_violation(asm: Assembly, vectors: dict[int, np.ndarray]) -> float:
    if not asm.coupling.n_rows:
        return 0.0
    total = np.zeros(asm.coupling.n_rows)
    for i, M in asm.coupling.mats.items():
        np.add.at(total, asm.coupling.rows[i], M @ vectors[i])
    return float(np.max(np.abs(total)))


def diagnose(asm: Assembly, tol: float = 1e-8) -> tuple[int, ...]:
    """Best-effort list of agents whose specification cannot be met on its own."""
    bad = []
    for i in asm.product.spec_agents:
        blk = asm.blocks[i]
        prog = blk.program()
        r = solve(prog, tol=tol)
        if r.status is Status.INFEASIBLE:
            bad.append(i)
    return tuple(bad) or tuple(asm.product.spec_agents)


@dataclass
class RunInfo:
    status: str
    wall_s: float
    n_variables: int
    n_constraints: int
    solver: dict = field(default_factory=dict)


def synthesize_central(
    model: FactoredMdp,
    lambdas: dict[int, float] | None = None,
    discount: float = DEFAULT_DISCOUNT,
    tol: float = 1e-8,
    max_iter: int = 200,
    product: ProductModel | None = None,
    backend: str = "ipm",
) -> tuple[OccupancySolution, FactoredPolicy, RunInfo]:
    """Solve the centralised LP and extract per-agent finite-memory policies."""
    t0 = time.perf_counter()
    lambdas = dict(lambdas or {})
    product = product or build_product(model, lambdas=lambdas)
    for i in product.spec_agents:
        lambdas.setdefault(i, product.agents[i].lam)
    asm = assemble(product, lambdas, discount)
    if backend == "highs":
        from .solver import solve_highs

        rep: SolveReport = solve_highs(asm.program)
    else:
        rep = solve(asm.program, tol=tol, max_iter=max_iter)
    info = RunInfo(
        rep.status.value,
        0.0,
        asm.program.n,
        asm.program.A.shape[0] + asm.program.G.shape[0],
        {"iterations": rep.iterations, "residuals": rep.residuals, "regularized": rep.regularized},
    )
    if rep.status is Status.INFEASIBLE:
        raise SynthesisError("specification constraints are infeasible", True, diagnose(asm))
    if rep.status is not Status.OPTIMAL:
        raise SynthesisError(f"solver finished with status {rep.status.value}")
    sol, policy = finish(asm, split_solution(asm, rep.x), lambdas)
    info.wall_s = time.perf_counter() - t0
    return sol, policy, info
