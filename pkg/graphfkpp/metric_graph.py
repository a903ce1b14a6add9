# Licensed under the Apache License 2.0, see LICENSE file.

"""Finite metric graphs, their deme discretization and interpolated density fields."""
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import torch

Number = Union[int, float, str, Fraction]
# (edge id, end) with end 0 at the source vertex and 1 at the target vertex
HalfEdge = Tuple[str, int]


def to_fraction(value: Number) -> Fraction:
    """Parses a length or resolution without binary drift ("0.1" stays 1/10)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"Expected a number, got {value!r}")
    if isinstance(value, float):
        return Fraction(repr(value))
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"{value!r} is not a valid decimal number")


@dataclass(frozen=True)
class Edge:
    name: str
    source: str
    target: str
    length: Fraction

    @property
    def is_loop(self) -> bool:
        return self.source == self.target

    def endpoint(self, end: int) -> str:
        return self.source if end == 0 else self.target


@dataclass(frozen=True, eq=False)
class MetricGraph:
    vertices: Tuple[str, ...]
    edges: Tuple[Edge, ...]
    incidence: Dict[str, Tuple[HalfEdge, ...]]
    """Half-edges meeting each vertex. A self-loop contributes both of its ends."""

    def degree(self, vertex: str) -> int:
        return len(self.incidence[vertex])

    def edge(self, name: str) -> Edge:
        for edge in self.edges:
            if edge.name == name:
                return edge
        raise ValueError(f"{name!r} is not an edge of this graph. Choose from {[e.name for e in self.edges]}")

    @property
    def edge_names(self) -> Tuple[str, ...]:
        return tuple(edge.name for edge in self.edges)

    @cached_property
    def vertex_distances(self) -> Dict[str, Dict[str, Fraction]]:
        """All-pairs shortest path lengths between vertices (Floyd-Warshall, exact)."""
        inf = None
        dist: Dict[str, Dict[str, Optional[Fraction]]] = {
            v: {w: (Fraction(0) if v == w else inf) for w in self.vertices} for v in self.vertices
        }
        for edge in self.edges:
            a, b = edge.source, edge.target
            if a == b:
                continue
            if dist[a][b] is None or edge.length < dist[a][b]:
                dist[a][b] = dist[b][a] = edge.length
        for k in self.vertices:
            for i in self.vertices:
                if dist[i][k] is None:
                    continue
                for j in self.vertices:
                    if dist[k][j] is None:
                        continue
                    candidate = dist[i][k] + dist[k][j]
                    if dist[i][j] is None or candidate < dist[i][j]:
                        dist[i][j] = candidate
        return dist


def build_graph(vertices: Iterable[str], edges: Iterable[Tuple[str, str, str, Number]]) -> MetricGraph:
    """Validates a vertex/edge description and builds the incidence map.

    Arguments:
        vertices: Vertex ids.
        edges: ``(edge id, source vertex, target vertex, length)`` tuples. Self-loops are allowed.
    """
    vertices = tuple(str(v) for v in vertices)
    if len(set(vertices)) != len(vertices):
        duplicates = sorted({v for v in vertices if vertices.count(v) > 1})
        raise ValueError(f"Duplicate vertex ids: {duplicates}")
    declared = set(vertices)

    built: List[Edge] = []
    seen = set()
    for name, source, target, length in edges:
        name, source, target = str(name), str(source), str(target)
        if name in seen:
            raise ValueError(f"Duplicate edge id {name!r}")
        seen.add(name)
        for endpoint in (source, target):
            if endpoint not in declared:
                raise ValueError(f"Edge {name!r} references undeclared vertex {endpoint!r}")
        length = to_fraction(length)
        if length <= 0:
            raise ValueError(f"Edge {name!r} must have a positive length, got {length}")
        built.append(Edge(name=name, source=source, target=target, length=length))
    if not built:
        raise ValueError("A metric graph needs at least one edge")

    incidence: Dict[str, List[HalfEdge]] = {v: [] for v in vertices}
    for edge in built:
        incidence[edge.source].append((edge.name, 0))
        incidence[edge.target].append((edge.name, 1))
    isolated = [v for v, half_edges in incidence.items() if not half_edges]
    if isolated:
        raise ValueError(f"Vertices without incident edges: {isolated}")

    return MetricGraph(
        vertices=vertices, edges=tuple(built), incidence={v: tuple(h) for v, h in incidence.items()}
    )


@dataclass(frozen=True, eq=False)
class DiscretizedGraph:
    graph: MetricGraph
    resolution: Dict[str, Fraction]
    """Demes per unit length L^e for every edge"""
    deme_edge: Tuple[str, ...]
    coordinates: Tuple[Fraction, ...]
    """Arclength of every deme from the source vertex of its edge"""
    edge_demes: Dict[str, Tuple[int, ...]]
    neighbors: Tuple[Tuple[int, ...], ...]
    vertex_demes: Dict[str, Tuple[Tuple[int, HalfEdge], ...]]
    """Demes adjacent to each vertex together with the half-edge they sit on"""

    @property
    def num_demes(self) -> int:
        return len(self.deme_edge)

    @property
    def eps(self) -> float:
        """Representative scale 1/min_e L^e."""
        return float(1 / min(self.resolution.values()))

    def resolution_of(self, deme: int) -> Fraction:
        return self.resolution[self.deme_edge[deme]]

    def spacing(self, deme: int) -> Fraction:
        return 1 / self.resolution_of(deme)

    @cached_property
    def measure(self) -> torch.Tensor:
        """m_n(x) = 1/L^e for x on e."""
        return torch.tensor([float(self.spacing(x)) for x in range(self.num_demes)], dtype=torch.float64)

    @cached_property
    def adjacent_vertex(self) -> Dict[int, Tuple[str, HalfEdge]]:
        return {
            deme: (vertex, half_edge) for vertex, entries in self.vertex_demes.items() for deme, half_edge in entries
        }

    def vertex_gap(self, deme: int) -> Fraction:
        """d(x, v) for a deme adjacent to vertex v."""
        if deme not in self.adjacent_vertex:
            raise ValueError(f"Deme {deme} is not adjacent to a vertex")
        (edge_name, end) = self.adjacent_vertex[deme][1]
        if end == 0:
            return self.coordinates[deme]
        return self.graph.edge(edge_name).length - self.coordinates[deme]

    @cached_property
    def pairs(self) -> Tuple[Tuple[int, int, Optional[str]], ...]:
        """Ordered neighbor pairs ``(x, y, vertex)``; ``vertex`` is None for same-edge neighbors."""
        out = []
        for x in range(self.num_demes):
            for y in self.neighbors[x]:
                # demes of one edge carry consecutive ids
                via = None
                if self.deme_edge[x] != self.deme_edge[y] or abs(x - y) != 1:
                    via = self.adjacent_vertex[x][0]
                out.append((x, y, via))
        return tuple(out)

    @cached_property
    def pair_index(self) -> Dict[Tuple[int, int], int]:
        return {(x, y): i for i, (x, y, _) in enumerate(self.pairs)}

    @cached_property
    def pair_tensor(self) -> torch.Tensor:
        """[P, 2] long tensor of ordered neighbor pairs."""
        return torch.tensor([(x, y) for x, y, _ in self.pairs], dtype=torch.long).reshape(-1, 2)


def discretize(graph: MetricGraph, resolution: Union[Number, Mapping[str, Number]]) -> DiscretizedGraph:
    """Places demes at k/L^e, k = 1..length·L^e - 1, on every edge.

    Arguments:
        graph: The metric graph.
        resolution: Demes per unit length, either one value for all edges or a mapping edge id -> value.
    """
    if isinstance(resolution, Mapping):
        missing = set(graph.edge_names) - set(resolution)
        if missing:
            raise ValueError(f"Missing resolution for edges {sorted(missing)}")
        per_edge = {name: to_fraction(resolution[name]) for name in graph.edge_names}
    else:
        per_edge = {name: to_fraction(resolution) for name in graph.edge_names}

    deme_edge: List[str] = []
    coordinates: List[Fraction] = []
    edge_demes: Dict[str, Tuple[int, ...]] = {}
    for edge in graph.edges:
        L = per_edge[edge.name]
        if L <= 0:
            raise ValueError(f"Resolution of edge {edge.name!r} must be positive, got {L}")
        cells = edge.length * L
        if cells.denominator != 1:
            raise ValueError(
                f"length·L must be an integer on edge {edge.name!r}, got {edge.length}·{L} = {float(cells)}"
            )
        if cells < 3:
            raise ValueError(f"length·L must be at least 3 on edge {edge.name!r}, got {cells}")
        if edge.is_loop and cells < 4:
            # both end demes would otherwise be neighbors along the edge and across the vertex
            raise ValueError(f"Self-loop {edge.name!r} needs length·L of at least 4, got {cells}")
        start = len(deme_edge)
        for k in range(1, int(cells)):
            deme_edge.append(edge.name)
            coordinates.append(Fraction(k) / L)
        edge_demes[edge.name] = tuple(range(start, len(deme_edge)))

    neighbors: List[set] = [set() for _ in deme_edge]
    for demes in edge_demes.values():
        for x, y in zip(demes[:-1], demes[1:]):
            neighbors[x].add(y)
            neighbors[y].add(x)

    vertex_demes: Dict[str, Tuple[Tuple[int, HalfEdge], ...]] = {}
    for vertex in graph.vertices:
        entries = []
        for edge_name, end in graph.incidence[vertex]:
            demes = edge_demes[edge_name]
            entries.append((demes[0] if end == 0 else demes[-1], (edge_name, end)))
        vertex_demes[vertex] = tuple(entries)
        for (x, _), (y, _) in combinations(entries, 2):
            neighbors[x].add(y)
            neighbors[y].add(x)

    return DiscretizedGraph(
        graph=graph,
        resolution=per_edge,
        deme_edge=tuple(deme_edge),
        coordinates=tuple(coordinates),
        edge_demes=edge_demes,
        neighbors=tuple(tuple(sorted(n)) for n in neighbors),
        vertex_demes=vertex_demes,
    )


def _deme_ends(dg: DiscretizedGraph, deme: int) -> List[Tuple[str, Fraction]]:
    edge = dg.graph.edge(dg.deme_edge[deme])
    s = dg.coordinates[deme]
    return [(edge.source, s), (edge.target, edge.length - s)]


def deme_distance(dg: DiscretizedGraph, x: int, y: int) -> Fraction:
    """Shortest-path arclength between two demes."""
    if x == y:
        return Fraction(0)
    vertex_distances = dg.graph.vertex_distances
    best = None
    if dg.deme_edge[x] == dg.deme_edge[y]:
        best = abs(dg.coordinates[x] - dg.coordinates[y])
    for v, dx in _deme_ends(dg, x):
        for w, dy in _deme_ends(dg, y):
            between = vertex_distances[v][w]
            if between is None:
                continue
            candidate = dx + between + dy
            if best is None or candidate < best:
                best = candidate
    if best is None:
        raise ValueError(f"Demes {x} and {y} lie on disconnected components")
    return best


def distance_matrix(dg: DiscretizedGraph) -> torch.Tensor:
    """All-pairs deme distances as a float64 [N, N] tensor (inf across components)."""
    vertices = dg.graph.vertices
    index = {v: i for i, v in enumerate(vertices)}
    dv = torch.full((len(vertices), len(vertices)), float("inf"), dtype=torch.float64)
    for v, row in dg.graph.vertex_distances.items():
        for w, d in row.items():
            if d is not None:
                dv[index[v], index[w]] = float(d)

    ends = [_deme_ends(dg, x) for x in range(dg.num_demes)]
    out = torch.full((dg.num_demes, dg.num_demes), float("inf"), dtype=torch.float64)
    for i in range(2):
        vi = torch.tensor([index[e[i][0]] for e in ends])
        di = torch.tensor([float(e[i][1]) for e in ends], dtype=torch.float64)
        for j in range(2):
            vj = torch.tensor([index[e[j][0]] for e in ends])
            dj = torch.tensor([float(e[j][1]) for e in ends], dtype=torch.float64)
            out = torch.minimum(out, di[:, None] + dv[vi][:, vj] + dj[None, :])
    coordinate = torch.tensor([float(c) for c in dg.coordinates], dtype=torch.float64)
    for demes in dg.edge_demes.values():
        idx = torch.tensor(demes)
        along = (coordinate[idx][:, None] - coordinate[idx][None, :]).abs()
        out[idx[:, None], idx[None, :]] = torch.minimum(out[idx[:, None], idx[None, :]], along)
    out.fill_diagonal_(0.0)
    return out


def total_mass(dg: DiscretizedGraph) -> Fraction:
    """Σ_x m_n(x), equal to Σ_e (length_e - 1/L^e) under the placement rule."""
    return sum((dg.spacing(x) for x in range(dg.num_demes)), Fraction(0))


@dataclass(frozen=True, eq=False)
class DensityField:
    """Deme values linearly interpolated along edges, with vertex values averaged from adjacent demes."""

    dg: DiscretizedGraph
    deme_values: torch.Tensor
    vertex_values: Dict[str, float] = field(default_factory=dict)

    def _nodes(self, edge_name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        edge = self.dg.graph.edge(edge_name)
        demes = self.dg.edge_demes[edge_name]
        positions = [0.0] + [float(self.dg.coordinates[x]) for x in demes] + [float(edge.length)]
        values = torch.cat(
            [
                torch.tensor([self.vertex_values[edge.source]], dtype=torch.float64),
                self.deme_values[list(demes)].to(torch.float64),
                torch.tensor([self.vertex_values[edge.target]], dtype=torch.float64),
            ]
        )
        return torch.tensor(positions, dtype=torch.float64), values

    def along_edge(self, edge_name: str, positions: Union[torch.Tensor, Sequence[float]]) -> torch.Tensor:
        """Evaluates the field at arclength positions measured from the edge's source vertex."""
        xs, ys = self._nodes(edge_name)
        positions = torch.as_tensor(positions, dtype=torch.float64)
        if positions.numel() and (positions.min() < 0 or positions.max() > xs[-1]):
            raise ValueError(f"Positions must lie in [0, {float(xs[-1])}] on edge {edge_name!r}")
        right = torch.searchsorted(xs, positions, right=True).clamp(1, len(xs) - 1)
        left = right - 1
        weight = (positions - xs[left]) / (xs[right] - xs[left])
        return ys[left] + weight * (ys[right] - ys[left])

    def __call__(self, edge_name: str, position: Number) -> float:
        return float(self.along_edge(edge_name, [float(to_fraction(position))])[0])

    def node_values(self) -> torch.Tensor:
        """Deme values followed by vertex values in graph order."""
        vertex = torch.tensor([self.vertex_values[v] for v in self.dg.graph.vertices], dtype=torch.float64)
        return torch.cat([self.deme_values.to(torch.float64), vertex])


def interpolate(dg: DiscretizedGraph, values: Union[torch.Tensor, Sequence[float]]) -> DensityField:
    values = torch.as_tensor(values, dtype=torch.float64)
    if values.shape != (dg.num_demes,):
        raise ValueError(f"Expected {dg.num_demes} deme values, got shape {tuple(values.shape)}")
    if not torch.isfinite(values).all() or values.min() < 0 or values.max() > 1:
        raise ValueError("Density values must lie in [0, 1]")
    vertex_values = {
        vertex: float(values[[x for x, _ in entries]].mean()) for vertex, entries in dg.vertex_demes.items()
    }
    return DensityField(dg=dg, deme_values=values, vertex_values=vertex_values)


def graph_norm(f: DensityField, g: Optional[DensityField] = None) -> float:
    """Sup norm of ``f`` (or of ``f - g``) over demes and vertices.

    Fields are piecewise linear between these nodes, so this is the supremum over the whole graph.
    """
    values = f.node_values()
    if g is not None:
        if g.dg.num_demes != f.dg.num_demes:
            raise ValueError("Fields live on different discretizations")
        values = values - g.node_values()
    return float(values.abs().max())


def constant_profile(dg: DiscretizedGraph, value: float) -> torch.Tensor:
    return torch.full((dg.num_demes,), float(value), dtype=torch.float64)


def step_profile(
    dg: DiscretizedGraph, edge_name: str, position: float, inside: float = 1.0, outside: float = 0.0
) -> torch.Tensor:
    """``inside`` on demes of ``edge_name`` with coordinate <= position, ``outside`` everywhere else."""
    dg.graph.edge(edge_name)
    values = constant_profile(dg, outside)
    for x in dg.edge_demes[edge_name]:
        if dg.coordinates[x] <= to_fraction(position):
            values[x] = inside
    return values
