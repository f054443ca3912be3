"""Monte Carlo metrics, the lambda sweep and the scaling harness."""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, replace

import numpy as np

from ..central import DEFAULT_DISCOUNT, synthesize_central
from ..fmdp import FactoredMdp, FactoredPolicy, simulate_batch, simulate_with_rewards
from ..product import build_product
from .crop import CropConfig, critical_fields, gen_crop

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    samples: int


def _estimate(per_sample: np.ndarray) -> Estimate:
    n = len(per_sample)
    se = float(per_sample.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(per_sample.mean()), se, n)


def yield_metric(
    model: FactoredMdp, policy: FactoredPolicy, horizon: int = 50, samples: int = 1000, seed: int = 0
) -> Estimate:
    """Average reward per field and step; the standard error is over trajectories."""
    if horizon < 1 or samples < 1:
        raise ValueError("horizon and samples must be positive")
    _, rewards = simulate_with_rewards(model, policy, horizon, samples, np.random.default_rng(seed))
    return _estimate(rewards.mean(axis=(1, 2)))


def infection_frequency(
    model: FactoredMdp,
    policy: FactoredPolicy,
    groups: dict[str, list[int]],
    horizon: int = 200,
    samples: int = 500,
    seed: int = 0,
    burn_in: int = 0,
    prop: str = "d",
    discount: float = DEFAULT_DISCOUNT,
) -> dict[str, Estimate]:
    """Fraction of time the fields of each group carry ``prop``.

    Step ``t`` is weighted by ``discount**t``, the probability that a process
    killed with probability ``1 - discount`` per step is still alive, which is
    the lifetime the synthesis constraints refer to.  ``discount=1`` gives the
    plain time average over steps ``burn_in+1 .. horizon``.
    """
    if not 0 <= burn_in < horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    if not 0.0 < discount <= 1.0:
        raise ValueError("discount must lie in (0, 1]")
    states = simulate_batch(model, policy, horizon, samples, np.random.default_rng(seed))
    agents = model.agents
    flags = np.zeros(states.shape, dtype=bool)
    for k, a in enumerate(agents):
        marked = np.array([prop in model.node_label(a, s) for s in range(len(model.local_states[a]))])
        flags[:, :, k] = marked[states[:, :, k]]
    window = flags[:, burn_in + 1 :]
    weights = discount ** np.arange(burn_in + 1, flags.shape[1])
    weights = weights / weights.sum()
    out = {}
    for name, members in groups.items():
        cols = [agents.index(a) for a in members]
        if not cols:
            raise ValueError(f"group {name!r} is empty")
        per_step = window[:, :, cols].mean(axis=2)
        out[name] = _estimate(per_step @ weights)
    return out


def crop_groups(cfg: CropConfig, model: FactoredMdp) -> dict[str, list[int]]:
    crit = set(critical_fields(cfg))
    return {
        "critical": [a for a in model.agents if a in crit],
        "noncritical": [a for a in model.agents if a not in crit],
    }


# --- lambda sweep --------------------------------------------------------------------

TABLE1_PAIRS = ((0.1, 0.1), (0.5, 0.5))
TABLE1_LAMBDAS = (0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class SweepRow:
    p: float
    xi: float
    lam: float
    objective: float
    yield_mean: float
    yield_stderr: float
    min_satisfaction: float
    wall_s: float


def table1(
    base: CropConfig = CropConfig(),
    pairs=TABLE1_PAIRS,
    lambdas=TABLE1_LAMBDAS,
    horizon: int = 50,
    samples: int = 2000,
    seed: int = 0,
) -> list[SweepRow]:
    """Centralised synthesis and simulated yield over a (p, xi) x lambda grid.

    Every configuration is simulated with the same seed (common random
    numbers), which keeps the comparison across lambda sharp.
    """
    rows = []
    for p, xi in pairs:
        cfg = replace(base, p=p, xi=xi)
        model = gen_crop(cfg)
        product = build_product(model)
        for lam in lambdas:
            t0 = time.perf_counter()
            lams = {i: lam for i in product.spec_agents}
            sol, policy, _ = synthesize_central(model, lams, product=product)
            est = yield_metric(model, policy, horizon, samples, seed)
            rows.append(SweepRow(
                p, xi, lam, sol.objective, est.mean, est.stderr,
                min(sol.satisfaction.values(), default=1.0), time.perf_counter() - t0,
            ))
            log.info("p=%g xi=%g lambda=%g yield=%.4f", p, xi, lam, est.mean)
    return rows


# --- scaling ---------------------------------------------------------------------

RING = "ring"
LATTICE = "lattice"


def scaling_model(size: int, template: str = RING, base: CropConfig = CropConfig()) -> FactoredMdp:
    """Crop instance with ``size`` fields: a ring (every field has two neighbours) or a square lattice."""
    if template == RING:
        return gen_crop(replace(base, rows=1, cols=size, torus=True))
    if template == LATTICE:
        side = int(round(math.sqrt(size)))
        if side * side != size:
            raise ValueError(f"lattice template needs a square size, got {size}")
        return gen_crop(replace(base, rows=side, cols=side))
    raise ValueError(f"unknown template {template!r}")


@dataclass(frozen=True)
class TimingRow:
    size: int
    method: str
    rep: int
    per_iter_ms: float
    total_ms: float
    status: str


def _time_one(size, template, method, iters, base):
    from .. import admm

    model = scaling_model(size, template, base)
    product = build_product(model)
    t0 = time.perf_counter()
    if method == "central":
        _, _, info = synthesize_central(model, product=product)
        total = 1000.0 * (time.perf_counter() - t0)
        its = max(int(info.solver.get("iterations", 1)), 1)
        return total / its, total
    res = admm.run(model, iters=iters, gamma=0.0, product=product)
    total = 1000.0 * (time.perf_counter() - t0)
    per = [h[2] for h in res.state.history]
    # the first iteration also pays for building the solver workspaces
    per_iter = float(np.median(per[1:] if len(per) > 1 else per))
    return per_iter, total


def scaling(
    sizes,
    reps: int = 1,
    template: str = RING,
    methods=("admm", "central"),
    iters: int = 5,
    timeout: float | None = None,
    base: CropConfig = CropConfig(),
) -> list[TimingRow]:
    """Wall-clock timings per size, method and repetition.

    For ADMM ``per_iter_ms`` is the median iteration time; for the
    centralised solve it is the time per interior-point iteration and
    ``total_ms`` is the full solve.  A run exceeding ``timeout`` seconds is
    recorded with status ``timeout``.
    """
    rows = []
    for size in sizes:
        for method in methods:
            for rep in range(reps):
                try:
                    if timeout is None:
                        per, total = _time_one(size, template, method, iters, base)
                    else:
                        with mp.get_context("spawn").Pool(1) as pool:
                            job = pool.apply_async(_time_one, (size, template, method, iters, base))
                            per, total = job.get(timeout=timeout)
                    status = "ok"
                except mp.TimeoutError:
                    per = total = float("nan")
                    status = "timeout"
                except Exception as e:  # recorded, the sweep goes on
                    log.warning("size %d %s failed: %s", size, method, e)
                    per = total = float("nan")
                    status = f"error: {e}"
                rows.append(TimingRow(size, method, rep, per, total, status))
    return rows


def summarize(rows: list[TimingRow]) -> list[dict]:
    """Mean and standard deviation per (size, method) over the successful repetitions."""
    out = []
    keys = sorted({(r.size, r.method) for r in rows})
    for size, method in keys:
        ok = [r for r in rows if r.size == size and r.method == method and r.status == "ok"]
        per = np.array([r.per_iter_ms for r in ok])
        tot = np.array([r.total_ms for r in ok])
        out.append({
            "M": size,
            "method": method,
            "reps": len(ok),
            "per_iter_ms": float(per.mean()) if len(ok) else float("nan"),
            "per_iter_ms_std": float(per.std()) if len(ok) else float("nan"),
            "total_ms": float(tot.mean()) if len(ok) else float("nan"),
            "total_ms_std": float(tot.std()) if len(ok) else float("nan"),
        })
    return out
