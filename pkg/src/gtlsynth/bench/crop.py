"""Crop-disease benchmark on a field lattice.

Each field is healthy (``h``), infected (``i1``) or badly infected (``i2``);
both infected states carry the proposition ``d``.  Cultivating a field lets
the infection advance one level with probability

    P(n) = eps + (1 - eps) * (1 - (1 - p)**n)

where ``n`` is the number of infected neighbours.  A fallow field recovers
one level with probability ``xi`` (or jumps straight back to healthy in the
one-shot variant) and is not infected while it lies fallow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fmdp import OWN_NEXT, AgentKernel, FactoredMdp, ModelError, SpecEntry, joint_coords
from ..graph import lattice_graph, neighborhood

STATES = ("h", "i1", "i2")
ACTIONS = ("cultivate", "fallow")
CROP_SPEC = "! F G[<=2] d & ! F G[<=3] E2 o d"


@dataclass(frozen=True)
class CropConfig:
    rows: int = 3
    cols: int = 3
    eps: float = 0.1
    p: float = 0.1
    xi: float = 0.1
    r: float = 10.0
    critical_fraction: float = 0.5
    lam: float = 0.9
    torus: bool = False
    recovery: str = "gradual"  # or "one-shot"
    weighted_count: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ModelError("lattice dimensions must be positive")
        for name in ("eps", "p", "xi", "lam", "critical_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ModelError(f"{name} must lie in [0, 1]")
        if self.r <= 1:
            raise ModelError("maximal yield must exceed 1")
        if self.recovery not in ("gradual", "one-shot"):
            raise ModelError("recovery must be 'gradual' or 'one-shot'")


def infection_probability(eps: float, p: float, n: float) -> float:
    return eps + (1.0 - eps) * (1.0 - (1.0 - p) ** n)


def crop_rewards(r: float) -> np.ndarray:
    """Reward table (state, action): linear in the infection level under cultivation."""
    low = 1.0 + r / 10.0
    cultivate = np.linspace(r, low, len(STATES))
    return np.stack([cultivate, np.ones(len(STATES))], axis=1)


def critical_fields(cfg: CropConfig) -> list[int]:
    ids = [r * cfg.cols + c + 1 for r in range(cfg.rows) for c in range(cfg.cols)]
    if cfg.critical_fraction == 0.5:
        return [r * cfg.cols + c + 1 for r in range(cfg.rows) for c in range(cfg.cols) if (r + c) % 2 == 0]
    k = int(round(cfg.critical_fraction * len(ids)))
    rng = np.random.default_rng(cfg.seed)
    return sorted(int(x) for x in rng.choice(ids, size=k, replace=False))


def _field_kernel(cfg: CropConfig, members: tuple[int, ...], owner: int) -> np.ndarray:
    sizes = (len(STATES),) * len(members)
    coords = joint_coords(sizes)
    own = coords[:, members.index(owner)]
    others = np.delete(coords, members.index(owner), axis=1)
    if cfg.weighted_count:
        n = others.sum(axis=1).astype(float)
    else:
        n = (others > 0).sum(axis=1).astype(float)
    P = infection_probability(cfg.eps, cfg.p, n)
    table = np.zeros((len(coords), len(ACTIONS), len(STATES)))
    # cultivate
    for s in range(len(STATES)):
        rows = own == s
        if s < len(STATES) - 1:
            table[rows, 0, s + 1] = P[rows]
            table[rows, 0, s] = 1.0 - P[rows]
        else:
            table[rows, 0, s] = 1.0
    # fallow
    for s in range(len(STATES)):
        rows = own == s
        if s == 0:
            table[rows, 1, 0] = 1.0
        else:
            target = 0 if cfg.recovery == "one-shot" else s - 1
            table[rows, 1, target] = cfg.xi
            table[rows, 1, s] += 1.0 - cfg.xi
    return table


def gen_crop(cfg: CropConfig) -> FactoredMdp:
    graph = lattice_graph(cfg.rows, cfg.cols, torus=cfg.torus)
    rewards_local = crop_rewards(cfg.r)
    states, actions, init, kernels, labels, rewards = {}, {}, {}, {}, {}, {}
    for i in graph.agents:
        members = neighborhood(graph, i).members
        states[i] = STATES
        actions[i] = ACTIONS
        init[i] = "h"
        kernels[i] = AgentKernel(OWN_NEXT, (i,), _field_kernel(cfg, members, i))
        labels[i] = {"h": frozenset(), "i1": frozenset({"d"}), "i2": frozenset({"d"})}
        own = joint_coords((len(STATES),) * len(members))[:, members.index(i)]
        rewards[i] = rewards_local[own]
    specs = {i: SpecEntry(CROP_SPEC, cfg.lam) for i in critical_fields(cfg)}
    return FactoredMdp(graph, states, actions, init, kernels, labels, rewards, specs=specs)
