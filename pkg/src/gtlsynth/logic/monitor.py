"""Three-valued finite-trace semantics, vectorised over a batch of traces.

A subformula evaluates to a pair of boolean arrays of shape (batch, T):
``yes`` where the verdict is definitely true on every infinite extension
of the trace, ``no`` where it is definitely false.  Positions where neither
holds are undetermined.  Connectives follow Kleene's strong logic.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from ..graph import GraphError, InteractionGraph
from .formula import (
    And,
    Atom,
    AtLeast,
    Const,
    Eventually,
    Exists,
    Formula,
    Next,
    NodeAtom,
    Not,
    Until,
)
from .grounding import resolve_neighbors


class Verdict(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNDETERMINED = "undetermined"


AtomFn = Callable[[str, int], np.ndarray]


class Evaluator:
    """Evaluate formulas over a batch of traces.

    ``atom(prop, node)`` must return a boolean array of shape (batch, T)
    saying whether ``prop`` labels ``node`` at each step.
    """

    def __init__(self, graph: InteractionGraph | None, atom: AtomFn, batch: int, length: int):
        self.graph = graph
        self.atom = atom
        self.shape = (batch, length)
        self._cache: dict = {}

    def eval(self, f: Formula, node: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        key = (f, node)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._eval(f, node)
            self._cache[key] = hit
        return hit

    def _eval(self, f: Formula, v):
        B, T = self.shape
        if isinstance(f, Const):
            full = np.full(self.shape, f.value)
            return full, ~full
        if isinstance(f, Atom):
            if v is None:
                raise GraphError("ungrounded proposition needs a node")
            a = np.asarray(self.atom(f.name, v), dtype=bool)
            return a, ~a
        if isinstance(f, NodeAtom):
            a = np.asarray(self.atom(f.name, f.node), dtype=bool)
            return a, ~a
        if isinstance(f, Not):
            y, n = self.eval(f.arg, v)
            return n, y
        if isinstance(f, And):
            y1, n1 = self.eval(f.left, v)
            y2, n2 = self.eval(f.right, v)
            return y1 & y2, n1 | n2
        if isinstance(f, Next):
            y, n = self.eval(f.arg, v)
            oy = np.zeros(self.shape, bool)
            on = np.zeros(self.shape, bool)
            oy[:, :-1] = y[:, 1:]
            on[:, :-1] = n[:, 1:]
            return oy, on
        if isinstance(f, Until):
            y1, n1 = self.eval(f.left, v)
            y2, n2 = self.eval(f.right, v)
            both_y, both_n = y1 & y2, n1 | n2
            oy = np.zeros(self.shape, bool)
            on = np.zeros(self.shape, bool)
            ny = np.zeros(B, bool)  # value beyond the trace: unknown
            nn = np.zeros(B, bool)
            for t in range(T - 1, -1, -1):
                # U(t) = (a & b)(t) | (a(t) & U(t+1))
                cy = y1[:, t] & ny
                cn = n1[:, t] | nn
                ny = both_y[:, t] | cy
                nn = both_n[:, t] & cn
                oy[:, t] = ny
                on[:, t] = nn
            return oy, on
        if isinstance(f, Eventually):
            y, n = self.eval(f.arg, v)
            oy = np.zeros(self.shape, bool)
            on = np.zeros(self.shape, bool)
            if f.cmp == "<=":
                for t in range(T):
                    hi = t + f.k
                    oy[:, t] = y[:, t : hi + 1].any(axis=1)
                    if hi <= T - 1:
                        on[:, t] = n[:, t : hi + 1].all(axis=1)
            else:
                # some step at or after t+k: only ever witnessed, never refuted
                suffix = np.zeros(B, bool)
                for t in range(T - 1, -1, -1):
                    suffix = suffix | y[:, t]
                    if t - f.k >= 0:
                        oy[:, t - f.k] = suffix
            return oy, on
        if isinstance(f, Exists):
            if self.graph is None:
                raise GraphError("neighbouring operations need a graph")
            nodes = sorted(resolve_neighbors(self.graph, {v}, f.ops))
            return self._count(f.n, [self.eval(f.body, u) for u in nodes])
        if isinstance(f, AtLeast):
            return self._count(f.n, [self.eval(x, v) for x in f.items])
        raise TypeError(f"not a formula: {f!r}")

    def _count(self, n, parts):
        if len(parts) < n:
            return np.zeros(self.shape, bool), np.ones(self.shape, bool)
        ys = sum(p[0].astype(np.int32) for p in parts)
        ns = sum(p[1].astype(np.int32) for p in parts)
        return ys >= n, ns > len(parts) - n


def verdicts(ev: Evaluator, f: Formula, node: int | None, t: int = 0) -> np.ndarray:
    """Vector of verdict codes per trace: 1 true, 0 false, -1 undetermined."""
    y, n = ev.eval(f, node)
    out = np.full(ev.shape[0], -1, dtype=np.int8)
    if t >= ev.shape[1]:
        return out
    out[y[:, t]] = 1
    out[n[:, t]] = 0
    return out


def label_atom_fn(states: np.ndarray, agents, labels_of) -> AtomFn:
    """Build an atom function from local-state indices of shape (B, T, M).

    ``labels_of(agent, local_state_index)`` returns that node's label set.
    """
    pos = {a: k for k, a in enumerate(agents)}
    cache: dict = {}

    def atom(prop: str, node: int) -> np.ndarray:
        if node not in pos:
            raise GraphError(f"unknown agent {node!r}")
        key = (prop, node)
        if key not in cache:
            col = states[:, :, pos[node]]
            n_local = int(col.max()) + 1 if col.size else 1
            table = np.array([prop in labels_of(node, s) for s in range(n_local)], dtype=bool)
            cache[key] = table[col]
        return cache[key]

    return atom


def satisfies(trajectory, graph: InteractionGraph, node: int, t: int, formula: Formula, model) -> Verdict:
    """Three-valued verdict of ``formula`` at ``(node, t)`` on a sampled trajectory."""
    if node not in graph.agents:
        raise GraphError(f"unknown agent {node!r}")
    states = np.asarray(trajectory.states)[None]
    atom = label_atom_fn(states, trajectory.agents, model.node_label)
    ev = Evaluator(graph, atom, 1, states.shape[1])
    code = verdicts(ev, formula, node, t)[0]
    return {1: Verdict.TRUE, 0: Verdict.FALSE}.get(int(code), Verdict.UNDETERMINED)


def satisfies_labels(
    labels: list[dict[int, set[str]]], graph: InteractionGraph, node: int, t: int, formula: Formula
) -> Verdict:
    """Verdict over an explicit label trace: one ``{node: propositions}`` map per step."""
    if node not in graph.agents:
        raise GraphError(f"unknown agent {node!r}")

    def atom(prop, v):
        if v not in graph.agents:
            raise GraphError(f"unknown agent {v!r}")
        return np.array([[prop in step.get(v, ()) for step in labels]], dtype=bool)

    ev = Evaluator(graph, atom, 1, len(labels))
    code = verdicts(ev, formula, node, t)[0]
    return {1: Verdict.TRUE, 0: Verdict.FALSE}.get(int(code), Verdict.UNDETERMINED)
