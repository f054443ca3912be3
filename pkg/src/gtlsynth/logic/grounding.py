"""Static resolution of neighbouring operations and formula grounding."""

from __future__ import annotations

import logging
from typing import Iterable

from ..graph import GraphError, InteractionGraph
from .formula import (
    FALSE,
    And,
    Atom,
    AtLeast,
    Const,
    EdgePred,
    Eventually,
    Exists,
    Formula,
    Next,
    NodeAtom,
    Not,
    Until,
)

log = logging.getLogger(__name__)


class GroundingError(ValueError):
    pass


def resolve_neighbors(graph: InteractionGraph, nodes: Iterable[int], ops: Iterable[EdgePred]) -> frozenset[int]:
    """Apply the neighbouring operations in order, starting from ``nodes``.

    One step maps a set V' to the nodes adjacent to some member of V' over
    an edge whose label satisfies the predicate.  Members of V' are only kept
    when they are reached again.
    """
    cur = frozenset(nodes)
    for v in cur:
        if v not in graph.agents:
            raise GraphError(f"unknown agent {v!r}")
    for pred in ops:
        nxt = set()
        for v in cur:
            for u in graph.neighbors(v):
                label = graph.edge_label(v, u)
                if pred.needs_label and label is None:
                    raise GroundingError(f"edge {{{v},{u}}} has no label for predicate {pred.text()}")
                if pred(label):
                    nxt.add(u)
        cur = frozenset(nxt)
    return cur


def ground(formula: Formula, graph: InteractionGraph, owner: int) -> Formula:
    """Tag every proposition with a node and replace Exists by AtLeast."""
    if owner not in graph.agents:
        raise GraphError(f"unknown agent {owner!r}")

    def go(f: Formula, v: int) -> Formula:
        if isinstance(f, Const):
            return f
        if isinstance(f, Atom):
            return NodeAtom(f.name, v)
        if isinstance(f, NodeAtom):
            return f
        if isinstance(f, Not):
            return Not(go(f.arg, v))
        if isinstance(f, Next):
            return Next(go(f.arg, v))
        if isinstance(f, And):
            return And(go(f.left, v), go(f.right, v))
        if isinstance(f, Until):
            return Until(go(f.left, v), go(f.right, v))
        if isinstance(f, Eventually):
            return Eventually(f.cmp, f.k, go(f.arg, v))
        if isinstance(f, Exists):
            nodes = sorted(resolve_neighbors(graph, {v}, f.ops))
            if len(nodes) < f.n:
                log.warning("%s at node %d reaches only %d nodes; grounded as false", f, v, len(nodes))
                return FALSE
            return AtLeast(f.n, tuple(go(f.body, u) for u in nodes))
        if isinstance(f, AtLeast):
            return f
        raise TypeError(f"not a formula: {f!r}")

    return go(formula, owner)


def grounded_atoms(f: Formula) -> tuple[tuple[str, int], ...]:
    """Sorted (proposition, node) pairs of a grounded formula."""
    from .formula import atoms

    found = atoms(f)
    if any(isinstance(a, str) for a in found):
        raise GroundingError("formula is not grounded")
    return tuple(sorted(found, key=lambda a: (a[1], a[0])))
