"""Urban patrol benchmark on a 7 x 5 grid of intersections.

Intersections are addressed as (row, col) with rows counted from the bottom
(row 1) to the top (row 7) and columns from the left.  Each officer patrols
a 3 x 3 block and its local state is the intersection it currently
monitors; monitoring an intersection earns its crime count.  Moves are
deterministic (stay, up, down, left, right) and a move leaving the block
keeps the officer in place.  With ``slip > 0`` any move fails with that
probability.

Every critical intersection ``c`` is assigned to one covering officer with

    G F[<=3] (c | E1 o c)

so ``c`` must be watched by the officer or one of its neighbours at least
once in every window of four steps.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..fmdp import OWN_NEXT, AgentKernel, FactoredMdp, ModelError, SpecEntry, joint_coords
from ..graph import InteractionGraph, neighborhood

log = logging.getLogger(__name__)

ROWS, COLS = 7, 5
BLOCK = 3
MOVES = ("stay", "up", "down", "left", "right")
_DELTA = {"stay": (0, 0), "up": (1, 0), "down": (-1, 0), "left": (0, -1), "right": (0, 1)}
CRITICAL = ((7, 3), (5, 4), (1, 3))
URBAN_SPEC = "G F[<=3] ({p} | E1 o {p})"

OVERLAP = "overlap"  # blocks that overlap or touch are neighbours
CRITICAL_GROUPS = "critical"  # owner of a critical cell linked to adjacent co-covering officers


def cell_name(r: int, c: int) -> str:
    return f"x{r}_{c}"


def ingest_crime_csv(path: str | Path, rows: int = ROWS, cols: int = COLS) -> dict[tuple[int, int], int]:
    """Read ``row,col,count`` records into a full coverage map."""
    counts: dict[tuple[int, int], int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row", "col", "count"} <= set(reader.fieldnames):
            raise ModelError(f"{path}: expected columns row, col, count")
        for line, rec in enumerate(reader, start=2):
            try:
                key = (int(rec["row"]), int(rec["col"]))
                value = int(rec["count"])
            except (TypeError, ValueError):
                raise ModelError(f"{path}:{line}: malformed record {rec}") from None
            if not (1 <= key[0] <= rows and 1 <= key[1] <= cols):
                raise ModelError(f"{path}:{line}: cell {key} outside the {rows}x{cols} grid")
            if value < 0:
                raise ModelError(f"{path}:{line}: negative count at {key}")
            if key in counts:
                log.warning("%s:%d: duplicate cell %s, keeping the later value", path, line, key)
            counts[key] = value
    missing = [(r, c) for r in range(1, rows + 1) for c in range(1, cols + 1) if (r, c) not in counts]
    if missing:
        raise ModelError(f"{path}: no count for {len(missing)} cells, first {missing[0]}")
    return counts


def default_counts() -> dict[tuple[int, int], int]:
    with resources.as_file(resources.files("gtlsynth.bench") / "data" / "crime_counts.csv") as p:
        return ingest_crime_csv(p)


def default_blocks() -> tuple[tuple[int, int], ...]:
    """Lower-left corners of the 15 overlapping blocks (rows 1..5, cols 1..3)."""
    return tuple((r, c) for r in range(1, ROWS - BLOCK + 2) for c in range(1, COLS - BLOCK + 2))


@dataclass(frozen=True)
class UrbanConfig:
    rows: int = ROWS
    cols: int = COLS
    crime_counts: dict | None = None
    blocks: tuple[tuple[int, int], ...] = field(default_factory=default_blocks)
    critical: tuple[tuple[int, int], ...] = CRITICAL
    owners: dict | None = None  # critical cell -> officer id; default closest block centre
    lam: float = 0.9
    neighbor_rule: str = CRITICAL_GROUPS
    slip: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0 or not 0.0 <= self.slip < 1.0:
            raise ModelError("lam must lie in [0, 1] and slip in [0, 1)")
        if self.neighbor_rule not in (OVERLAP, CRITICAL_GROUPS):
            raise ModelError(f"unknown neighbour rule {self.neighbor_rule!r}")
        for r, c in self.blocks:
            if not (1 <= r and r + BLOCK - 1 <= self.rows and 1 <= c and c + BLOCK - 1 <= self.cols):
                raise ModelError(f"block at {(r, c)} leaves the grid")
        for cell in self.critical:
            if not self.covering(cell):
                raise ModelError(f"critical intersection {cell} is covered by no officer")

    def cells(self, officer: int) -> list[tuple[int, int]]:
        r0, c0 = self.blocks[officer - 1]
        return [(r, c) for r in range(r0, r0 + BLOCK) for c in range(c0, c0 + BLOCK)]

    def covering(self, cell) -> list[int]:
        return [k + 1 for k in range(len(self.blocks)) if cell in self.cells(k + 1)]

    def owner(self, cell) -> int:
        if self.owners and cell in self.owners:
            o = self.owners[cell]
            if o not in self.covering(cell):
                raise ModelError(f"officer {o} does not cover {cell}")
            return o

        def dist(k):
            r0, c0 = self.blocks[k - 1]
            return (abs(r0 + 1 - cell[0]) + abs(c0 + 1 - cell[1]), k)

        return min(self.covering(cell), key=dist)


def officer_graph(cfg: UrbanConfig) -> InteractionGraph:
    ids = tuple(range(1, len(cfg.blocks) + 1))
    edges = set()
    if cfg.neighbor_rule == OVERLAP:
        for a in ids:
            for b in ids:
                if a < b:
                    (ra, ca), (rb, cb) = cfg.blocks[a - 1], cfg.blocks[b - 1]
                    if abs(ra - rb) <= BLOCK and abs(ca - cb) <= BLOCK:
                        edges.add(frozenset((a, b)))
    else:
        for cell in cfg.critical:
            o = cfg.owner(cell)
            ro, co = cfg.blocks[o - 1]
            for j in cfg.covering(cell):
                rj, cj = cfg.blocks[j - 1]
                if j != o and abs(rj - ro) + abs(cj - co) == 1:
                    edges.add(frozenset((o, j)))
    return InteractionGraph(ids, frozenset(edges))


def _move_table(cells: list[tuple[int, int]], slip: float) -> np.ndarray:
    index = {cell: k for k, cell in enumerate(cells)}
    table = np.zeros((len(cells), len(MOVES), len(cells)))
    for k, (r, c) in enumerate(cells):
        for a, mv in enumerate(MOVES):
            dr, dc = _DELTA[mv]
            target = index.get((r + dr, c + dc), k)
            table[k, a, target] += 1.0 - slip
            table[k, a, k] += slip
    return table


def gen_urban(cfg: UrbanConfig | None = None) -> FactoredMdp:
    cfg = cfg or UrbanConfig()
    counts = cfg.crime_counts if cfg.crime_counts is not None else default_counts()
    graph = officer_graph(cfg)
    states, actions, init, kernels, labels, rewards = {}, {}, {}, {}, {}, {}
    for i in graph.agents:
        cells = cfg.cells(i)
        states[i] = tuple(cell_name(*cell) for cell in cells)
        actions[i] = MOVES
        r0, c0 = cfg.blocks[i - 1]
        init[i] = cell_name(r0 + 1, c0 + 1)
        labels[i] = {cell_name(*cell): frozenset({cell_name(*cell)}) for cell in cells}
        members = neighborhood(graph, i).members
        sizes = tuple(BLOCK * BLOCK for _ in members)
        own = joint_coords(sizes)[:, members.index(i)]
        move = _move_table(cells, cfg.slip)
        kernels[i] = AgentKernel(OWN_NEXT, (i,), move[own])
        reward_cell = np.array([float(counts[cell]) for cell in cells])
        rewards[i] = np.repeat(reward_cell[own][:, None], len(MOVES), axis=1)
    specs = {}
    for cell in cfg.critical:
        o = cfg.owner(cell)
        if o in specs:
            raise ModelError(f"officer {o} owns two critical intersections; pass explicit owners")
        specs[o] = SpecEntry(URBAN_SPEC.format(p=cell_name(*cell)), cfg.lam)
    return FactoredMdp(graph, states, actions, init, kernels, labels, rewards, specs=specs)


def urban_reduction(lam: float = 0.9, **kw) -> UrbanConfig:
    """Two officers (blocks rows 5-7 x cols 3-5 and rows 5-7 x cols 2-4), two critical cells."""
    return UrbanConfig(
        blocks=((5, 3), (5, 2)),
        critical=((7, 3), (5, 4)),
        owners={(7, 3): 1, (5, 4): 2},
        lam=lam,
        neighbor_rule=OVERLAP,
        **kw,
    )
