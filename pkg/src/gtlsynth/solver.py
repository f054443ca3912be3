"""Primal-dual interior-point solver for convex QPs and LPs.

Problem form::

    minimise    1/2 x'Qx + c'x
    subject to  A x  = b
                G x >= h
                l <= x <= u      (entries of l may be -inf, of u +inf)

Inequality rows receive slack variables so that the iteration only handles
equalities and simple bounds.  Each iteration solves the regularised
quasi-definite augmented system::

    [ -(Q + D + dI)   A' ] [dx]   [ r1 ]
    [      A          dI ] [dy] = [ r2 ]

once for the Mehrotra predictor and once for the corrector, with a single
factorisation.  Small systems use dense LU, larger ones SuperLU.

When the iteration stalls or hits the iteration cap, an elastic phase-one
LP decides whether the constraints are infeasible; its duals give the
certificate.  Reported residuals always come from :func:`kkt_residuals`,
which recomputes them from the returned primal and dual vectors.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LIMIT = 600
NORMAL_DENSE_LIMIT = 6000
NORMAL_SMALL = 1500  # always dense below this many rows
NORMAL_DENSITY = 0.05  # dense above this fill ratio
REG = 1e-10
FREE_REG = 1e-8
REFINE_STEPS = 10
REFINE_TOL = 1e-14
PATTERN_MAX_ROWS = 1500
PATTERN_MAX_PAIRS = 4_000_000


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max-iterations"


@dataclass
class ConvexProgram:
    c: np.ndarray
    A: sp.spmatrix | None = None
    b: np.ndarray | None = None
    G: sp.spmatrix | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    Q: sp.spmatrix | None = None

    def __post_init__(self):
        n = len(self.c)
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A if self.A is not None else (0, n), dtype=float)
        self.b = np.asarray(self.b if self.b is not None else np.zeros(0), dtype=float)
        self.G = sp.csr_matrix(self.G if self.G is not None else (0, n), dtype=float)
        self.h = np.asarray(self.h if self.h is not None else np.zeros(0), dtype=float)
        self.lb = np.asarray(self.lb if self.lb is not None else np.zeros(n), dtype=float)
        self.ub = np.asarray(self.ub if self.ub is not None else np.full(n, np.inf), dtype=float)
        if self.Q is not None:
            self.Q = sp.csr_matrix(self.Q, dtype=float)
        if self.A.shape[1] != n or self.G.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        if self.A.shape[0] != len(self.b) or self.G.shape[0] != len(self.h):
            raise ValueError("constraint right-hand sides have the wrong length")
        if len(self.lb) != n or len(self.ub) != n or np.any(self.lb > self.ub):
            raise ValueError("bounds are inconsistent")
        if self.Q is not None:
            if self.Q.shape != (n, n):
                raise ValueError("Q must be n x n")
            if abs(self.Q - self.Q.T).max() > 1e-8 if self.Q.nnz else False:
                raise ValueError("Q must be symmetric")

    @property
    def n(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x)
        if self.Q is not None:
            val += 0.5 * float(x @ (self.Q @ x))
        return val


@dataclass
class SolveReport:
    status: Status
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    iterations: int
    residuals: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None
    regularized: bool = False

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(prog: ConvexProgram, x, y_eq, y_ineq, z_lower, z_upper) -> dict:
    """Scaled KKT residuals recomputed from a primal-dual pair."""
    Qx = prog.Q @ x if prog.Q is not None else np.zeros_like(x)
    grad = Qx + prog.c - prog.A.T @ y_eq - prog.G.T @ y_ineq - z_lower + z_upper
    slack = prog.G @ x - prog.h
    fin_l = np.isfinite(prog.lb)
    fin_u = np.isfinite(prog.ub)
    pf = max(
        _inf(prog.A @ x - prog.b),
        _inf(np.minimum(slack, 0.0)),
        _inf(np.minimum(x - prog.lb, 0.0)[fin_l]),
        _inf(np.minimum(prog.ub - x, 0.0)[fin_u]),
    )
    df = max(
        _inf(grad),
        _inf(np.minimum(y_ineq, 0.0)),
        _inf(np.minimum(z_lower, 0.0)),
        _inf(np.minimum(z_upper, 0.0)),
        _inf(z_lower[~fin_l]),
        _inf(z_upper[~fin_u]),
    )
    comp = (
        abs(float(y_ineq @ slack))
        + abs(float(z_lower[fin_l] @ (x - prog.lb)[fin_l]))
        + abs(float(z_upper[fin_u] @ (prog.ub - x)[fin_u]))
    )
    obj = prog.objective(x)
    scale_p = 1.0 + max(_inf(prog.b), _inf(prog.h))
    scale_d = 1.0 + _inf(prog.c)
    return {
        "primal": pf / scale_p,
        "dual": df / scale_d,
        "complementarity": comp / (1.0 + abs(obj)),
    }


def _inf(v) -> float:
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


class _Factor:
    """Factorisation of the augmented system (general Hessian)."""

    def __init__(self, H: sp.spmatrix, A: sp.csr_matrix, At: sp.csr_matrix, reg: float):
        n, m = A.shape[1], A.shape[0]
        self.n = n
        K = sp.bmat([[-(H + sp.identity(n) * reg), At], [A, sp.identity(m) * reg]]).tocsc()
        self.dense = K.shape[0] <= DENSE_LIMIT
        if self.dense:
            self.lu = sla.lu_factor(K.toarray(), check_finite=False)
        else:
            self.lu = spla.splu(K, permc_spec="COLAMD")

    def solve(self, r1, r2):
        r = np.concatenate([r1, r2])
        sol = sla.lu_solve(self.lu, r, check_finite=False) if self.dense else self.lu.solve(r)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite Newton direction")
        return sol[: self.n], sol[self.n :]


class _NormalPattern:
    """Precomputed scatter pattern for forming A diag(h) A' densely.

    Every column k of A contributes a_ik a_jk h_k to entry (i, j); the
    index pairs and coefficient products are fixed across iterations, so
    each assembly is a single weighted bincount.
    """

    def __init__(self, A: sp.csr_matrix):
        Ac = A.tocsc()
        Ac.sort_indices()
        self.m = A.shape[0]
        counts = np.diff(Ac.indptr)
        col_of = np.repeat(np.arange(Ac.shape[1]), counts)
        rep = counts[col_of]
        left = np.repeat(np.arange(Ac.nnz), rep)
        offsets = np.arange(len(left)) - np.repeat(np.cumsum(rep) - rep, rep)
        right = Ac.indptr[col_of[left]] + offsets
        self.lin = Ac.indices[left].astype(np.int64) * self.m + Ac.indices[right]
        self.coef = Ac.data[left] * Ac.data[right]
        self.col = col_of[left]

    @staticmethod
    def size(A: sp.csr_matrix) -> int:
        counts = np.diff(A.tocsc().indptr)
        return int(np.sum(counts.astype(np.int64) ** 2))

    def form(self, hinv: np.ndarray) -> np.ndarray:
        flat = np.bincount(self.lin, weights=self.coef * hinv[self.col], minlength=self.m * self.m)
        return flat.reshape(self.m, self.m)


class _NormalFactor:
    """Factorisation of the normal equations (A H^-1 A' + reg I) for diagonal H."""

    def __init__(self, hdiag: np.ndarray, A: sp.csr_matrix, At: sp.csr_matrix, reg: float, pattern=None):
        self.hinv = 1.0 / hdiag
        self.A, self.At = A, At
        m = A.shape[0]
        self.bumped = False
        if pattern is not None:
            Md = pattern.form(self.hinv)
            mdiag = np.diag(Md).copy()
            self.dense = True
        else:
            M = (A @ sp.diags(self.hinv) @ At).tocsc()
            mdiag = M.diagonal()
            density = M.nnz / max(m * m, 1)
            self.dense = m <= NORMAL_SMALL or (m <= NORMAL_DENSE_LIMIT and density >= NORMAL_DENSITY)
            Md = M.toarray() if self.dense else None
        diag = np.diag_indices(m)
        # the shift follows each row's own scale, so rows whose variables all
        # sit at their bounds are not swamped by it
        base = mdiag + 1e-12 * float(np.max(mdiag, initial=0.0)) + 1e-300
        for attempt in range(8):
            shift = reg * base * (100.0**attempt)
            try:
                if self.dense:
                    Ms = Md.copy()
                    Ms[diag] += shift
                    self.chol = sla.cho_factor(Ms, lower=True, overwrite_a=True, check_finite=False)
                else:
                    self.lu = spla.splu((M + sp.diags(shift, format="csc")).tocsc(), permc_spec="COLAMD")
                break
            except (np.linalg.LinAlgError, RuntimeError):
                self.bumped = True
        else:
            raise np.linalg.LinAlgError("normal equations could not be factorised")
        self.shift = shift

    def _solve_shifted(self, rhs):
        if self.dense:
            return sla.cho_solve(self.chol, rhs, check_finite=False)
        return self.lu.solve(rhs)

    def solve(self, r1, r2):
        rhs = r2 + self.A @ (self.hinv * r1)
        dy = self._solve_shifted(rhs)
        # refine against the unshifted operator to undo the regularisation bias
        scale = _inf(rhs)
        prev = np.inf
        for _ in range(REFINE_STEPS):
            res = rhs - self.A @ (self.hinv * (self.At @ dy))
            err = _inf(res)
            if err <= REFINE_TOL * scale or err >= prev:
                break
            prev = err
            dy = dy + self._solve_shifted(res)
        dx = self.hinv * (self.At @ dy - r1)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise np.linalg.LinAlgError("non-finite Newton direction")
        return dx, dy


def _standardise(prog: ConvexProgram):
    """Append slacks for G rows: returns (Q, c, A, b, l, u, n_orig)."""
    mg = prog.G.shape[0]
    A = sp.vstack([
        sp.hstack([prog.A, sp.csr_matrix((prog.A.shape[0], mg))]),
        sp.hstack([prog.G, -sp.identity(mg)]),
    ]).tocsr()
    b = np.concatenate([prog.b, prog.h])
    c = np.concatenate([prog.c, np.zeros(mg)])
    l = np.concatenate([prog.lb, np.zeros(mg)])
    u = np.concatenate([prog.ub, np.full(mg, np.inf)])
    Q = None
    if prog.Q is not None and prog.Q.nnz:
        Q = sp.block_diag([prog.Q, sp.csr_matrix((mg, mg))]).tocsr()
    return Q, c, A, b, l, u


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


@dataclass
class Workspace:
    """Standardised structure shared by programs that differ only in ``c``.

    Repeated solves (the ADMM proximal steps) reuse the slack form, the
    transpose and the normal-matrix pattern instead of rebuilding them.
    """

    n: int
    Q: sp.csr_matrix | None
    A: sp.csr_matrix
    b: np.ndarray
    l: np.ndarray
    u: np.ndarray
    At: sp.csr_matrix
    qdiag: np.ndarray | None
    pattern: _NormalPattern | None


def _diagonal_of(Q):
    if Q is None:
        return None
    d = Q.diagonal()
    if Q.nnz == np.count_nonzero(d) and (Q - sp.diags(d)).nnz == 0:
        return d
    return None


def prepare(prog: ConvexProgram) -> Workspace:
    Q, _, A, b, l, u = _standardise(prog)
    qdiag = _diagonal_of(Q)
    pattern = None
    if (Q is None or qdiag is not None) and A.shape[0] <= PATTERN_MAX_ROWS:
        if _NormalPattern.size(A) <= PATTERN_MAX_PAIRS:
            pattern = _NormalPattern(A)
    return Workspace(prog.n, Q, A, b, l, u, A.T.tocsr(), qdiag, pattern)


def _default_start(l, u, m):
    fl, fu = np.isfinite(l), np.isfinite(u)
    x = np.zeros(len(l))
    both = fl & fu
    x[both] = 0.5 * (l[both] + u[both])
    only_l = fl & ~fu
    x[only_l] = l[only_l] + 1.0
    only_u = fu & ~fl
    x[only_u] = u[only_u] - 1.0
    return x, np.zeros(m), np.where(fl, 1.0, 0.0), np.where(fu, 1.0, 0.0)


def _start(c, A, At, b, l, u, pattern):
    """Interior starting point from least-squares primal and dual estimates.

    Variables with only a lower bound get the minimum-norm solution of
    ``A x = b`` and the least-squares reduced cost, both shifted into the
    strict interior so that their complementarity products are balanced.
    Variables with an upper bound keep the default point.
    """
    x, y, zl, zu = _default_start(l, u, A.shape[0])
    fl, fu = np.isfinite(l), np.isfinite(u)
    lo = fl & ~fu
    if not lo.any():
        return x, y, zl, zu
    try:
        f = _NormalFactor(np.ones(len(c)), A, At, REG, pattern)
        base = np.where(fl, l, 0.0)
        dx, _ = f.solve(np.zeros(len(c)), b - A @ base)
        xt = base + dx
        neg_z, yt = f.solve(c, np.zeros(A.shape[0]))
    except np.linalg.LinAlgError:
        return x, y, zl, zu
    zt = -neg_z
    if not (np.all(np.isfinite(xt)) and np.all(np.isfinite(zt))):
        return x, y, zl, zu
    s, z = xt[lo] - l[lo], zt[lo]
    s = s + max(-1.5 * float(s.min()), 0.0)
    z = z + max(-1.5 * float(z.min()), 0.0)
    if s.max() <= 0.0 or z.max() <= 0.0:
        return x, y, zl, zu
    prod = float(s @ z)
    s = s + 0.5 * prod / float(z.sum())
    z = z + 0.5 * prod / float(s.sum())
    x[lo] = l[lo] + s
    zl[lo] = z
    free = ~fl & ~fu
    x[free] = xt[free]
    return x, yt, zl, zu


def _ipm(Q, c, A, b, l, u, tol, max_iter, is_lp, ws: Workspace | None = None):
    m = A.shape[0]
    fl, fu = np.isfinite(l), np.isfinite(u)
    if ws is None:
        At = A.T.tocsr()
        qdiag = _diagonal_of(Q)
        pattern = None
        if (Q is None or qdiag is not None) and m <= PATTERN_MAX_ROWS and _NormalPattern.size(A) <= PATTERN_MAX_PAIRS:
            pattern = _NormalPattern(A)
    else:
        At, qdiag, pattern = ws.At, ws.qdiag, ws.pattern
    # starting point strictly inside the bounds
    x, y, zl, zu = _start(c, A, At, b, l, u, pattern) if m else _default_start(l, u, 0)
    nc = int(fl.sum() + fu.sum())
    bnorm = 1.0 + _inf(b)
    cnorm = 1.0 + _inf(c)
    regularized = False
    best = np.inf
    stall = 0
    status = Status.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        sl = np.where(fl, x - l, 1.0)
        su = np.where(fu, u - x, 1.0)
        Qx = Q @ x if Q is not None else 0.0
        rd = Qx + c - At @ y - zl + zu
        rp = b - A @ x
        mu = (float(zl[fl] @ sl[fl]) + float(zu[fu] @ su[fu])) / max(nc, 1)
        obj = float(c @ x) + (0.5 * float(x @ Qx) if Q is not None else 0.0)
        pres = _inf(rp) / bnorm
        dres = _inf(rd) / cnorm
        gap = mu * max(nc, 1) / (1.0 + abs(obj))
        if pres <= tol and dres <= tol and gap <= tol:
            status = Status.OPTIMAL
            break
        if _inf(x) > 1e12:
            status = Status.UNBOUNDED
            break
        merit = max(pres, dres, gap)
        if merit < 0.5 * best:
            best = merit
            stall = 0
        else:
            stall += 1
            if stall >= 25:
                break
        D = np.where(fl, zl / sl, 0.0) + np.where(fu, zu / su, 0.0)
        hdiag = D + REG
        if qdiag is not None:
            hdiag = hdiag + qdiag
        reg = REG
        factor = None
        for _ in range(6):
            try:
                if Q is None or qdiag is not None:
                    factor = _NormalFactor(np.maximum(hdiag, FREE_REG), A, At, reg, pattern)
                    regularized |= factor.bumped
                else:
                    factor = _Factor(sp.diags(hdiag) + Q, A, At, reg)
                break
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                reg *= 100.0
                regularized = True
        if factor is None:
            break

        def direction(rcl, rcu):
            r1 = rd - np.where(fl, rcl / sl, 0.0) + np.where(fu, rcu / su, 0.0)
            try:
                dx, dy = factor.solve(r1, rp)
            except np.linalg.LinAlgError:
                dx = dy = np.full(1, np.nan)
            if not np.all(np.isfinite(dx)):
                return dx, dy, dx, dx
            dzl = np.where(fl, (rcl - zl * dx) / sl, 0.0)
            dzu = np.where(fu, (rcu + zu * dx) / su, 0.0)
            return dx, dy, dzl, dzu

        def steps(dx, dzl, dzu):
            ap = min(_max_step(sl[fl], dx[fl]), _max_step(su[fu], -dx[fu]))
            ad = min(_max_step(zl[fl], dzl[fl]), _max_step(zu[fu], dzu[fu]))
            return ap, ad

        rcl = np.where(fl, -sl * zl, 0.0)
        rcu = np.where(fu, -su * zu, 0.0)
        dx, dy, dzl, dzu = direction(rcl, rcu)
        if not np.all(np.isfinite(dx)):
            break
        ap, ad = steps(dx, dzl, dzu)
        if nc:
            mu_aff = (
                float((sl[fl] + ap * dx[fl]) @ (zl[fl] + ad * dzl[fl]))
                + float((su[fu] - ap * dx[fu]) @ (zu[fu] + ad * dzu[fu]))
            ) / nc
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        else:
            sigma = 0.0
        if gap <= 0.01 * tol and max(pres, dres) > tol:
            # complementarity is already tight; pushing it further only wrecks
            # the conditioning, so spend the step on feasibility
            sigma = 1.0
        rcl = np.where(fl, sigma * mu - sl * zl - dx * dzl, 0.0)
        rcu = np.where(fu, sigma * mu - su * zu + dx * dzu, 0.0)
        dx, dy, dzl, dzu = direction(rcl, rcu)
        if not np.all(np.isfinite(dx)):
            break
        ap, ad = steps(dx, dzl, dzu)
        ap = min(1.0, 0.995 * ap)
        ad = min(1.0, 0.995 * ad)
        if not is_lp:
            ap = ad = min(ap, ad)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("it %3d pres %.2e dres %.2e gap %.2e mu %.2e ap %.3f ad %.3f", it, pres, dres, gap, mu, ap, ad)
        x = x + ap * dx
        y = y + ad * dy
        zl = zl + ad * dzl
        zu = zu + ad * dzu
        # keep iterates strictly interior despite rounding
        x = np.where(fl, np.maximum(x, np.nextafter(l, np.inf)), x)
        x = np.where(fu, np.minimum(x, np.nextafter(u, -np.inf)), x)
    return status, x, y, zl, zu, it, regularized


def solve(
    prog: ConvexProgram, tol: float = 1e-8, max_iter: int = 200, workspace: Workspace | None = None
) -> SolveReport:
    """Solve ``prog`` with the interior-point method; see the module docstring.

    ``workspace`` (from :func:`prepare`) must come from a program with the same
    constraints, bounds and Hessian; only the linear cost is taken from ``prog``.
    """
    if workspace is None:
        Q, c, A, b, l, u = _standardise(prog)
    else:
        if workspace.n != prog.n:
            raise ValueError("workspace was prepared for a different program")
        Q, A, b, l, u = workspace.Q, workspace.A, workspace.b, workspace.l, workspace.u
        c = np.concatenate([prog.c, np.zeros(A.shape[1] - prog.n)])
    is_lp = Q is None
    n, me = prog.n, prog.A.shape[0]
    # diverging iterates on infeasible programs overflow; non-finite steps are checked explicitly
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        status, x, y, zl, zu, it, regularized = _ipm(Q, c, A, b, l, u, tol, max_iter, is_lp, workspace)
    xo = x[:n]
    y_eq, y_ineq = y[:me], y[me:]
    res = kkt_residuals(prog, xo, y_eq, y_ineq, zl[:n], zu[:n])
    if status is Status.OPTIMAL and max(res.values()) > 10 * tol:
        status = Status.MAX_ITER
    cert = None
    if status is Status.MAX_ITER:
        infeasible, cert = _phase_one(prog, A, b, l, u, tol)
        if infeasible:
            status = Status.INFEASIBLE
        elif _inf(xo) > 1e8 and prog.objective(xo) < -1e8:
            # feasible, iterates running off along an improving ray
            status = Status.UNBOUNDED
    if regularized:
        log.info("augmented system needed extra regularisation")
    return SolveReport(
        status, xo, y_eq, y_ineq, zl[:n], zu[:n], prog.objective(xo), it, res, cert, regularized
    )


def _phase_one(prog, A, b, l, u, tol):
    """Minimise total violation of A x = b within the bounds.

    Returns (infeasible, certificate).  The certificate is the dual of the
    equality rows: a y with y'b > 0 bounding y'A x over the box.
    """
    m, n = A.shape
    A1 = sp.hstack([A, sp.identity(m), -sp.identity(m)]).tocsr()
    c1 = np.concatenate([np.zeros(n), np.ones(2 * m)])
    l1 = np.concatenate([l, np.zeros(2 * m)])
    u1 = np.concatenate([u, np.full(2 * m, np.inf)])
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        status, x, y, zl, zu, _, _ = _ipm(None, c1, A1, b, l1, u1, max(tol, 1e-9), 200, True)
    viol = float(c1 @ x)
    infeasible = viol > 1e-6 * (1.0 + _inf(b))
    return infeasible, (y if infeasible else None)


def solve_highs(prog: ConvexProgram) -> SolveReport:
    """Reference LP solve through scipy's HiGHS (used for cross-checks)."""
    from scipy.optimize import linprog

    if prog.Q is not None and prog.Q.nnz:
        raise ValueError("HiGHS backend handles linear programs only")
    bounds = list(zip(np.where(np.isfinite(prog.lb), prog.lb, None), np.where(np.isfinite(prog.ub), prog.ub, None)))
    r = linprog(
        prog.c,
        A_ub=-prog.G if prog.G.shape[0] else None,
        b_ub=-prog.h if prog.G.shape[0] else None,
        A_eq=prog.A if prog.A.shape[0] else None,
        b_eq=prog.b if prog.A.shape[0] else None,
        bounds=bounds,
        method="highs",
    )
    n = prog.n
    if r.status == 2:
        st = Status.INFEASIBLE
    elif r.status == 3:
        st = Status.UNBOUNDED
    elif r.status == 0:
        st = Status.OPTIMAL
    else:
        st = Status.MAX_ITER
    x = r.x if r.x is not None else np.zeros(n)
    ok = st is Status.OPTIMAL
    # scipy marginals are sensitivities of the optimum to the right-hand sides
    y_eq = r.eqlin.marginals if ok and prog.A.shape[0] else np.zeros(prog.A.shape[0])
    y_in = -r.ineqlin.marginals if ok and prog.G.shape[0] else np.zeros(prog.G.shape[0])
    zl = r.lower.marginals if ok else np.zeros(n)
    zu = -r.upper.marginals if ok else np.zeros(n)
    res = kkt_residuals(prog, x, y_eq, y_in, zl, zu) if st is Status.OPTIMAL else {}
    return SolveReport(st, x, y_eq, y_in, zl, zu, prog.objective(x), int(r.nit), res)


def dump_program(prog: ConvexProgram, path) -> None:
    """Write the program as sparse triplets.

    Format: a header line ``n m_eq m_ineq``, then sections introduced by a
    line holding their name (``c``, ``A``, ``b``, ``G``, ``h``, ``lb``,
    ``ub``, ``Q``).  Vector sections list ``index value`` lines and matrix
    sections ``row col value`` lines, zero-based.  Omitted entries are zero,
    except that an omitted upper bound is +inf.
    """
    with open(path, "w") as fh:
        fh.write(f"{prog.n} {prog.A.shape[0]} {prog.G.shape[0]}\n")

        def vec(name, v, keep):
            fh.write(f"{name}\n")
            for k in np.flatnonzero(keep):
                fh.write(f"{k} {float(v[k])!r}\n")

        def mat(name, M):
            fh.write(f"{name}\n")
            coo = M.tocoo()
            for r, cc, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {cc} {float(v)!r}\n")

        vec("c", prog.c, prog.c != 0)
        mat("A", prog.A)
        vec("b", prog.b, prog.b != 0)
        mat("G", prog.G)
        vec("h", prog.h, prog.h != 0)
        vec("lb", prog.lb, prog.lb != 0)
        vec("ub", prog.ub, np.isfinite(prog.ub))
        if prog.Q is not None:
            mat("Q", prog.Q)
