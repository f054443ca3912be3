"""Distributed synthesis by primal-splitting ADMM.

The coupled LP is rewritten as

    minimise   sum_i f_i(o_i)
    subject to A_i o_i = z_i  for every agent,   sum_i z_i = 0,

where ``f_i`` holds agent ``i``'s reward objective, flow equations, bounds
and specification row, and ``A_i`` maps ``o_i`` onto the pairwise
consistency rows that involve agent ``i``.  The row space is shared, and
each row is touched by exactly the two agents of its pair, so the
projection onto ``sum_i z_i = 0`` averages over those two agents.

One iteration (synchronous):

1. ``z``: project ``w_i = A_i o_i - kappa_i / beta`` onto ``sum z = 0``;
2. ``o``: every agent solves its proximal QP independently;
3. ``kappa``: ``kappa_i -= beta * (A_i o_i - z_i)``.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .central import (
    DEFAULT_DISCOUNT,
    Assembly,
    OccupancySolution,
    SynthesisError,
    assemble,
    consistency_violation,
    finish,
)
from .fmdp import FactoredMdp, FactoredPolicy, ModelError
from .product import ProductModel, build_product
from .solver import ConvexProgram, Status, Workspace, prepare, solve

log = logging.getLogger(__name__)

SYMMETRIC = "symmetric"
LITERAL = "literal"


@dataclass
class LocalProblem:
    agent: int
    program: ConvexProgram  # local constraints and linear cost, no coupling
    rows: np.ndarray  # global coupling rows touching this agent
    A: sp.csr_matrix  # (len(rows), n_vars)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vars(self) -> int:
        return self.program.n

    def _structure(self, beta: float) -> tuple[ConvexProgram, Workspace]:
        if beta not in self._cache:
            p = self.program
            k = len(self.rows)
            n = p.n
            A = sp.vstack([
                sp.hstack([p.A, sp.csr_matrix((p.A.shape[0], k))]),
                sp.hstack([self.A, -sp.identity(k)]),
            ]).tocsr()
            b = np.concatenate([p.b, np.zeros(k)])
            G = sp.hstack([p.G, sp.csr_matrix((p.G.shape[0], k))]).tocsr()
            lb = np.concatenate([p.lb, np.full(k, -np.inf)])
            ub = np.concatenate([p.ub, np.full(k, np.inf)])
            Q = sp.diags(np.concatenate([np.zeros(n), np.full(k, beta)]))
            template = ConvexProgram(np.concatenate([p.c, np.zeros(k)]), A, b, G, p.h, lb, ub, Q)
            self._cache[beta] = (template, prepare(template))
        return self._cache[beta]

    def proximal_program(self, target: np.ndarray, beta: float) -> ConvexProgram:
        """min c'v + beta/2 ||A v - target||^2 over the local feasible set.

        The coupling term is carried by auxiliary free variables r = A v,
        which keeps the Hessian diagonal.
        """
        if len(self.rows) == 0:
            return self.program
        template, _ = self._structure(beta)
        prog = copy.copy(template)
        prog.c = np.concatenate([self.program.c, -beta * np.asarray(target, dtype=float)])
        return prog

    def o_update(self, target: np.ndarray, beta: float, tol: float = 1e-6) -> np.ndarray:
        """Minimiser of the proximal step for ``target = z_i + kappa_i / beta``."""
        prog = self.proximal_program(target, beta)
        ws = self._structure(beta)[1] if len(self.rows) else None
        rep = solve(prog, tol=tol, workspace=ws)
        if rep.status is Status.INFEASIBLE:
            raise SynthesisError(f"local problem of agent {self.agent} is infeasible", True, (self.agent,))
        if rep.status is not Status.OPTIMAL:
            # inexact proximal steps are tolerated; the outer loop corrects them
            log.debug("agent %d subproblem ended with %s", self.agent, rep.status.value)
            if not np.all(np.isfinite(rep.x)):
                raise SynthesisError(f"local solve of agent {self.agent} failed ({rep.status.value})")
        return rep.x[: self.n_vars]


def split(asm: Assembly) -> dict[int, LocalProblem]:
    return {
        i: LocalProblem(i, blk.program(), asm.coupling.rows[i], asm.coupling.mats[i])
        for i, blk in asm.blocks.items()
    }


# --- update rules -----------------------------------------------------------------

def row_sum(parts: dict[int, np.ndarray], rows: dict[int, np.ndarray], n_rows: int) -> np.ndarray:
    total = np.zeros(n_rows)
    for i in sorted(parts):
        np.add.at(total, rows[i], parts[i])
    return total


def z_update(
    Ao: dict[int, np.ndarray],
    kappa: dict[int, np.ndarray],
    rows: dict[int, np.ndarray],
    count: np.ndarray,
    beta: float,
    variant: str = SYMMETRIC,
) -> dict[int, np.ndarray]:
    """New auxiliary variables from the current primal and dual iterates.

    ``count[r]`` is the number of agents sharing row ``r``.  The symmetric
    variant averages ``w_i = A_i o_i - kappa_i/beta`` over those agents,
    so the z-vectors sum to zero on every row.  The literal variant averages
    the plain ``A_i o_i`` and subtracts only the agent's own dual term.
    """
    if variant == SYMMETRIC:
        w = {i: Ao[i] - kappa[i] / beta for i in Ao}
        mean = row_sum(w, rows, len(count)) / np.maximum(count, 1)
        return {i: w[i] - mean[rows[i]] for i in Ao}
    if variant == LITERAL:
        total = row_sum(Ao, rows, len(count))
        out = {}
        for i in Ao:
            w = Ao[i] - kappa[i] / beta
            out[i] = -(total[rows[i]] - kappa[i] / beta) / np.maximum(count[rows[i]], 1) + w
        return out
    raise ValueError(f"unknown z-update variant {variant!r}")


def dual_update(kappa: np.ndarray, Ao: np.ndarray, z: np.ndarray, beta: float) -> np.ndarray:
    return kappa - beta * (Ao - z)


def residuals(Ao, z, z_prev, beta) -> tuple[float, float]:
    res_p = sum(float(np.sum((Ao[i] - z[i]) ** 2)) for i in sorted(Ao))
    res_d = sum(beta * float(np.sum((z[i] - z_prev[i]) ** 2)) for i in sorted(Ao))
    return res_p, res_d


# --- driver ---------------------------------------------------------------------

@dataclass
class AdmmState:
    o: dict[int, np.ndarray]
    z: dict[int, np.ndarray]
    kappa: dict[int, np.ndarray]
    beta: float
    k: int = 0
    history: list[tuple[float, float, float]] = field(default_factory=list)  # (res_p, res_d, wall_ms)


@dataclass
class AdmmResult:
    solution: OccupancySolution
    policy: FactoredPolicy
    state: AdmmState
    converged: bool
    consistency: float
    raw_objective: float
    wall_s: float


def repair(asm: Assembly, vectors: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Rescale each agent's occupancy towards the averaged pairwise marginals."""
    out = {i: np.clip(v, 0.0, None).copy() for i, v in vectors.items()}
    cp = asm.coupling
    for i, j, start, stop in cp.pairs:
        Mi = cp.mats[i][np.searchsorted(cp.rows[i], np.arange(start, stop))]
        Mj = -cp.mats[j][np.searchsorted(cp.rows[j], np.arange(start, stop))]
        mi, mj = Mi @ out[i], Mj @ out[j]
        target = 0.5 * (mi + mj)
        for agent, M, m in ((i, Mi, mi), (j, Mj, mj)):
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(m > 0, target / m, 1.0)
            coo = M.tocoo()
            scale = np.ones(len(out[agent]))
            scale[coo.col] = ratio[coo.row]
            out[agent] = out[agent] * scale
    return out


def run(
    model: FactoredMdp,
    lambdas: dict[int, float] | None = None,
    beta: float = 1.0,
    iters: int = 500,
    gamma: float = 1e-3,
    discount: float = DEFAULT_DISCOUNT,
    variant: str = SYMMETRIC,
    jobs: int = 1,
    tol: float = 1e-6,
    product: ProductModel | None = None,
    warm_start: dict[int, np.ndarray] | None = None,
    repair_marginals: bool = True,
    callback=None,
) -> AdmmResult:
    """Run the ADMM iteration until both residuals drop to ``gamma`` or ``iters`` is reached."""
    if beta <= 0 or iters < 1 or gamma < 0:
        raise ModelError("need beta > 0, iters >= 1 and gamma >= 0")
    t0 = time.perf_counter()
    lambdas = dict(lambdas or {})
    product = product or build_product(model, lambdas=lambdas)
    for i in product.spec_agents:
        lambdas.setdefault(i, product.agents[i].lam)
    asm = assemble(product, lambdas, discount)
    local = split(asm)
    agents = sorted(local)
    rows = {i: local[i].rows for i in agents}
    count = asm.coupling.count()
    o = {i: np.zeros(local[i].n_vars) for i in agents}
    if warm_start:
        for i, v in warm_start.items():
            o[i] = np.asarray(v, dtype=float).copy()
    kappa = {i: np.zeros(len(rows[i])) for i in agents}
    z = {i: np.zeros(len(rows[i])) for i in agents}
    state = AdmmState(o, z, kappa, beta)
    Ao = {i: local[i].A @ o[i] for i in agents}
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    converged = False
    try:
        for k in range(1, iters + 1):
            tk = time.perf_counter()
            z_prev = state.z
            state.z = z_update(Ao, state.kappa, rows, count, beta, variant)
            targets = {i: state.z[i] + state.kappa[i] / beta for i in agents}
            if pool is not None:
                futs = {i: pool.submit(local[i].o_update, targets[i], beta, tol) for i in agents}
                state.o = {i: futs[i].result() for i in agents}
            else:
                state.o = {i: local[i].o_update(targets[i], beta, tol) for i in agents}
            Ao = {i: local[i].A @ state.o[i] for i in agents}
            state.kappa = {i: dual_update(state.kappa[i], Ao[i], state.z[i], beta) for i in agents}
            res_p, res_d = residuals(Ao, state.z, z_prev, beta)
            state.k = k
            state.history.append((res_p, res_d, 1000.0 * (time.perf_counter() - tk)))
            if callback is not None:
                callback(state)
            if res_p <= gamma and res_d <= gamma:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    raw_obj = float(sum(-asm.blocks[i].c @ state.o[i] for i in agents))
    vectors = repair(asm, state.o) if repair_marginals else state.o
    sol, policy = finish(asm, vectors, lambdas)
    return AdmmResult(
        sol, policy, state, converged, consistency_violation(asm, vectors), raw_obj, time.perf_counter() - t0
    )
