"""Undirected interaction graph and neighbourhood set algebra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping


class GraphError(ValueError):
    pass


def _edge(a: int, b: int) -> frozenset[int]:
    return frozenset((a, b))


@dataclass(frozen=True)
class NeighborhoodScope:
    owner: int
    members: tuple[int, ...]

    def __post_init__(self):
        if self.owner not in self.members:
            raise GraphError(f"owner {self.owner} missing from scope {self.members}")
        if list(self.members) != sorted(set(self.members)):
            raise GraphError("scope members must be ascending and unique")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def index(self, agent: int) -> int:
        return self.members.index(agent)


@dataclass(frozen=True)
class InteractionGraph:
    """Agents are integer ids; canonical order is ascending id."""

    agents: tuple[int, ...]
    edges: frozenset = frozenset()
    edge_labels: Mapping[frozenset, Any] = field(default_factory=dict)

    def __post_init__(self):
        agents = tuple(sorted(set(int(a) for a in self.agents)))
        if len(agents) != len(self.agents):
            raise GraphError("duplicate agent ids")
        if not agents:
            raise GraphError("graph needs at least one agent")
        object.__setattr__(self, "agents", agents)
        known = set(agents)
        for e in self.edges:
            if len(e) != 2:
                raise GraphError(f"self-loop or malformed edge {sorted(e)}")
            if not e <= known:
                raise GraphError(f"edge {sorted(e)} references unknown agent")
        for e in self.edge_labels:
            if e not in self.edges:
                raise GraphError(f"label on missing edge {sorted(e)}")
        adj: dict[int, set[int]] = {a: set() for a in agents}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "_adj", {a: tuple(sorted(v)) for a, v in adj.items()})

    @classmethod
    def from_edges(
        cls,
        agents: Iterable[int],
        edges: Iterable[tuple[int, int]],
        edge_labels: Mapping[tuple[int, int], Any] | None = None,
    ) -> "InteractionGraph":
        edge_set = set()
        for a, b in edges:
            if a == b:
                raise GraphError(f"self-loop on agent {a}")
            e = _edge(a, b)
            if e in edge_set:
                raise GraphError(f"duplicate edge {sorted(e)}")
            edge_set.add(e)
        labels = {_edge(a, b): v for (a, b), v in (edge_labels or {}).items()}
        return cls(tuple(agents), frozenset(edge_set), labels)

    @property
    def M(self) -> int:
        return len(self.agents)

    def _check(self, i: int) -> None:
        if i not in self._adj:
            raise GraphError(f"unknown agent {i!r}")

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Graph neighbours of ``i``, excluding ``i`` itself."""
        self._check(i)
        return self._adj[i]

    def edge_label(self, a: int, b: int, default: Hashable | None = None):
        return self.edge_labels.get(_edge(a, b), default)

    def has_edge(self, a: int, b: int) -> bool:
        return _edge(a, b) in self.edges


def neighborhood(graph: InteractionGraph, i: int) -> NeighborhoodScope:
    """N(i): agent ``i`` together with its neighbours, ascending."""
    members = tuple(sorted((i,) + graph.neighbors(i)))
    return NeighborhoodScope(i, members)


def scope_intersection(graph: InteractionGraph, i: int, j: int) -> tuple[int, ...]:
    a = set(neighborhood(graph, i).members)
    b = set(neighborhood(graph, j).members)
    return tuple(sorted(a & b))


def scope_difference(graph: InteractionGraph, i: int, j: int) -> tuple[int, ...]:
    a = set(neighborhood(graph, i).members)
    b = set(neighborhood(graph, j).members)
    return tuple(sorted(a - b))


def lattice_graph(rows: int, cols: int, torus: bool = False) -> InteractionGraph:
    """4-neighbour lattice; agent id = r * cols + c + 1."""
    if rows < 1 or cols < 1:
        raise GraphError("lattice dimensions must be positive")
    edges = set()

    def aid(r, c):
        return r * cols + c + 1

    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if torus:
                    rr, cc = rr % rows, cc % cols
                elif rr >= rows or cc >= cols:
                    continue
                if (rr, cc) != (r, c):
                    edges.add(_edge(aid(r, c), aid(rr, cc)))
    return InteractionGraph(tuple(range(1, rows * cols + 1)), frozenset(edges))
