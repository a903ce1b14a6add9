# Licensed under the Apache License 2.0, see LICENSE file.

"""Macroscopic SPDE coefficients, microscopic particle rates and the maps between them."""
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import pandas as pd
import torch
from typing_extensions import Self

from graphfkpp.metric_graph import DiscretizedGraph, HalfEdge, MetricGraph

ThetaKind = Literal["geometric", "power"]
# gamma = 0 edges: largest L^e/M^e accepted by the validator
ZERO_NOISE_MAX_RATIO = 0.05


def theta(a: float, b: float, kind: ThetaKind = "geometric", p: Optional[float] = None) -> float:
    """Symmetric mean Θ(a, b) used for conductances across a vertex.

    Arguments:
        a: First positive coefficient.
        b: Second positive coefficient.
        kind: ``"geometric"`` for √(ab) or ``"power"`` for ((a^p + b^p)/2)^(1/p).
        p: Exponent of the power mean. Required and nonzero when ``kind="power"``.
    """
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"Θ needs positive finite inputs, got ({a}, {b})")
    if kind == "power":
        if p is None or p == 0:
            raise ValueError("The power mean needs a nonzero exponent `p`")
    elif kind != "geometric":
        raise ValueError(f"Unknown mean {kind!r}. Choose from 'geometric', 'power'.")
    if a == b:
        return float(a)
    if kind == "geometric":
        value = math.sqrt(a * b)
    else:
        value = ((a**p + b**p) / 2) ** (1 / p)
    # keep betweenness exact under rounding
    return min(max(value, min(a, b)), max(a, b))


@dataclass
class MacroParams:
    """Piecewise-constant SPDE coefficients."""

    alpha: Dict[str, float]
    """Diffusion coefficient per edge"""
    beta: Dict[str, float]
    """Logistic growth rate per edge"""
    gamma: Dict[str, float]
    """Noise variance per edge"""
    vertex_growth: Dict[str, float] = field(default_factory=dict)
    """Boundary growth β̂ per vertex (missing vertices are 0)"""

    def __post_init__(self) -> None:
        issues = []
        edges = set(self.alpha)
        for name in ("beta", "gamma"):
            if set(getattr(self, name)) != edges:
                issues.append(f"`{name}` must be given for exactly the edges {sorted(edges)}")
        for name in ("alpha", "beta", "gamma", "vertex_growth"):
            for key, value in getattr(self, name).items():
                if not math.isfinite(value) or value < 0:
                    issues.append(f"`{name}[{key!r}]` must be finite and nonnegative, got {value}")
        for key, value in self.alpha.items():
            if value == 0:
                issues.append(f"`alpha[{key!r}]` must be strictly positive")
        if issues:
            raise ValueError("\n".join(issues))

    @classmethod
    def uniform(
        cls, graph: MetricGraph, alpha: float = 1.0, beta: float = 0.0, gamma: float = 0.0, vertex_growth: float = 0.0
    ) -> Self:
        edges = graph.edge_names
        return cls(
            alpha={e: alpha for e in edges},
            beta={e: beta for e in edges},
            gamma={e: gamma for e in edges},
            vertex_growth={v: vertex_growth for v in graph.vertices},
        )

    def growth_at(self, vertex: str) -> float:
        return self.vertex_growth.get(vertex, 0.0)


@dataclass
class MicroParams:
    """Particle-level rates on a discretized graph.

    ``conductance``, ``voter`` and ``bias`` are aligned with ``dg.pairs``: entry i belongs to the ordered pair
    (x, y) and, for ``voter``/``bias``, is the rate at which one site of deme x copies one site of deme y.
    """

    resolution: Dict[str, Fraction]
    capacity: Dict[str, int]
    conductance: torch.Tensor
    voter: torch.Tensor
    bias: torch.Tensor
    interior_bias: Dict[str, float]
    """B_e per edge"""
    vertex_bias: Dict[str, Dict[Tuple[HalfEdge, HalfEdge], float]]
    """B̂ per vertex, keyed by (target half-edge, source half-edge)"""
    theta_kind: ThetaKind = "geometric"
    theta_power: Optional[float] = None

    @property
    def eps(self) -> float:
        return float(1 / min(self.resolution.values()))

    def __post_init__(self) -> None:
        for name in ("conductance", "voter", "bias"):
            rates = getattr(self, name)
            if not torch.isfinite(rates).all() or (rates < 0).any():
                raise ValueError(f"`{name}` rates must be finite and nonnegative")
        for edge, m in self.capacity.items():
            if int(m) != m or m < 1:
                raise ValueError(f"Capacity of edge {edge!r} must be a positive integer, got {m}")

    def deme_capacity(self, dg: DiscretizedGraph) -> torch.Tensor:
        return torch.tensor([self.capacity[e] for e in dg.deme_edge], dtype=torch.long)


def conductances(
    dg: DiscretizedGraph, alpha: Mapping[str, float], kind: ThetaKind = "geometric", p: Optional[float] = None
) -> torch.Tensor:
    """Symmetric conductances over ``dg.pairs``.

    Same-edge pairs get L^e·α_e/2, pairs across a vertex get Θ(α_e, α_ẽ)/(2·(d(x,v) + d(v,y))).
    """
    values = []
    for x, y, via in dg.pairs:
        ex, ey = dg.deme_edge[x], dg.deme_edge[y]
        if via is None:
            values.append(float(dg.resolution[ex]) * alpha[ex] / 2)
        else:
            gap = dg.vertex_gap(x) + dg.vertex_gap(y)
            values.append(theta(alpha[ex], alpha[ey], kind, p) / (2 * float(gap)))
    return torch.tensor(values, dtype=torch.float64)


def _vertex_half_edges(dg: DiscretizedGraph, vertex: str) -> List[HalfEdge]:
    return [half_edge for _, half_edge in dg.vertex_demes[vertex]]


def _pair_bias(
    dg: DiscretizedGraph,
    interior_bias: Mapping[str, float],
    vertex_bias: Mapping[str, Mapping[Tuple[HalfEdge, HalfEdge], float]],
) -> torch.Tensor:
    values = []
    adjacent = dg.adjacent_vertex
    for x, y, via in dg.pairs:
        if y in adjacent:
            vertex, source_half = adjacent[y]
            target_half = source_half if via is None else adjacent[x][1]
            values.append(vertex_bias[vertex][(target_half, source_half)])
        else:
            values.append(interior_bias[dg.deme_edge[y]])
    return torch.tensor(values, dtype=torch.float64)


def _pair_voter(dg: DiscretizedGraph, conductance: torch.Tensor, capacity: Mapping[str, int]) -> torch.Tensor:
    scale = torch.tensor(
        [2 * float(dg.resolution[dg.deme_edge[y]]) / capacity[dg.deme_edge[y]] for _, y, _ in dg.pairs],
        dtype=torch.float64,
    )
    return conductance * scale


def micro_from_macro(
    macro: MacroParams,
    dg: DiscretizedGraph,
    capacity: Optional[Mapping[str, int]] = None,
    kind: ThetaKind = "geometric",
    p: Optional[float] = None,
) -> MicroParams:
    """Builds particle rates that satisfy the scaling conditions with zero slack at this resolution.

    Arguments:
        macro: Target SPDE coefficients.
        dg: The discretized graph.
        capacity: Sites per deme M^e for edges that override the derived value. Required for edges with gamma = 0.
        kind: Mean used for conductances across vertices.
        p: Exponent of the power mean.
    """
    capacity = dict(capacity or {})
    resolved: Dict[str, int] = {}
    for edge in dg.graph.edge_names:
        L = float(dg.resolution[edge])
        if edge in capacity:
            resolved[edge] = int(capacity[edge])
            continue
        gamma, alpha = macro.gamma[edge], macro.alpha[edge]
        if gamma == 0:
            raise ValueError(
                f"Edge {edge!r} has gamma=0, so its capacity is not determined by the scaling. Pass it in `capacity`."
            )
        if alpha == 0:
            raise ValueError(f"Edge {edge!r} has gamma>0 but alpha=0")
        m = round(4 * L * alpha / gamma)
        if m < 1:
            raise ValueError(f"Edge {edge!r}: 4·L·alpha/gamma = {4 * L * alpha / gamma} rounds to 0 sites per deme")
        resolved[edge] = m

    interior_bias = {edge: macro.beta[edge] / (2 * resolved[edge]) for edge in dg.graph.edge_names}
    vertex_bias: Dict[str, Dict[Tuple[HalfEdge, HalfEdge], float]] = {}
    for vertex in dg.graph.vertices:
        half_edges = _vertex_half_edges(dg, vertex)
        degree = len(half_edges)
        growth = macro.growth_at(vertex)
        shares = {}
        for target in half_edges:
            for source in half_edges:
                share = growth * float(dg.resolution[target[0]]) / (4 * degree**2 * resolved[source[0]])
                if target == source:
                    share += interior_bias[target[0]]
                shares[(target, source)] = share
        vertex_bias[vertex] = shares

    conductance = conductances(dg, macro.alpha, kind, p)
    return MicroParams(
        resolution=dict(dg.resolution),
        capacity=resolved,
        conductance=conductance,
        voter=_pair_voter(dg, conductance, resolved),
        bias=_pair_bias(dg, interior_bias, vertex_bias),
        interior_bias=interior_bias,
        vertex_bias=vertex_bias,
        theta_kind=kind,
        theta_power=p,
    )


def with_capacity(micro: MicroParams, dg: DiscretizedGraph, capacity: Mapping[str, int]) -> MicroParams:
    """Replaces M^e on some edges and rescales the voter rates, keeping every other rate as it is."""
    resolved = {**micro.capacity, **{edge: int(m) for edge, m in capacity.items()}}
    return MicroParams(
        resolution=micro.resolution,
        capacity=resolved,
        conductance=micro.conductance,
        voter=_pair_voter(dg, micro.conductance, resolved),
        bias=micro.bias,
        interior_bias=micro.interior_bias,
        vertex_bias=micro.vertex_bias,
        theta_kind=micro.theta_kind,
        theta_power=micro.theta_power,
    )


def _vertex_excess(micro: MicroParams, vertex: str) -> float:
    total = 0.0
    for (target, source), rate in micro.vertex_bias[vertex].items():
        if target == source:
            rate = rate - micro.interior_bias[target[0]]
        total += rate * micro.capacity[source[0]] / float(micro.resolution[target[0]])
    return 4 * total


def macro_from_micro(micro: MicroParams, dg: DiscretizedGraph) -> MacroParams:
    """Finite-resolution plug-in estimate of the SPDE coefficients."""
    alpha, beta, gamma = {}, {}, {}
    for edge in dg.graph.edge_names:
        demes = dg.edge_demes[edge]
        index = dg.pair_index[(demes[0], demes[1])]
        L = float(dg.resolution[edge])
        M = micro.capacity[edge]
        alpha[edge] = 2 * float(micro.conductance[index]) / L
        gamma[edge] = 4 * alpha[edge] * L / M
        beta[edge] = 2 * micro.interior_bias[edge] * M
    vertex_growth = {vertex: _vertex_excess(micro, vertex) for vertex in dg.graph.vertices}
    return MacroParams(alpha=alpha, beta=beta, gamma=gamma, vertex_growth=vertex_growth)


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    residual: float
    detail: str = ""


@dataclass
class ConditionReport:
    checks: List[ConditionCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, key: str) -> ConditionCheck:
        for check in self.checks:
            if check.name == key:
                return check
        raise KeyError(key)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "condition": [c.name for c in self.checks],
                "passed": [c.passed for c in self.checks],
                "residual": [c.residual for c in self.checks],
                "detail": [c.detail for c in self.checks],
            }
        )

    def __str__(self) -> str:
        lines = []
        for check in self.checks:
            status = "ok  " if check.passed else "FAIL"
            lines.append(f"[{status}] {check.name:<10} residual={check.residual:.3e}  {check.detail}")
        return "\n".join(lines)


def validate_conditions(
    micro: MicroParams, dg: DiscretizedGraph, macro: Optional[MacroParams] = None, tol: float = 1e-9
) -> ConditionReport:
    """Checks the scaling conditions (a)-(e) at one resolution and reports residuals.

    `validate_sequence` runs it over every level of a ladder.

    Arguments:
        micro: Particle rates to check.
        dg: The discretized graph they live on.
        macro: Target coefficients. Defaults to the plug-in estimate, which checks internal consistency only.
        tol: Largest residual that counts as a pass.
    """
    if macro is None:
        macro = macro_from_micro(micro, dg)
    checks = []

    # (a) 1/L <= d(x, v) < 2/L
    worst, offenders = 0.0, []
    for deme in dg.adjacent_vertex:
        gap, spacing = dg.vertex_gap(deme), dg.spacing(deme)
        violation = max(Fraction(0), spacing - gap, gap - 2 * spacing) / spacing
        if violation > 0 or gap == 2 * spacing:
            offenders.append(deme)
        worst = max(worst, float(violation))
    detail = f"demes out of range: {offenders}" if offenders else "all vertex gaps in [1/L, 2/L)"
    checks.append(ConditionCheck("(a)", not offenders, worst, detail))

    # (b) 4L/M = gamma/alpha, or L/M small on noiseless edges
    worst, ok = 0.0, True
    for edge in dg.graph.edge_names:
        L, M = float(dg.resolution[edge]), micro.capacity[edge]
        if macro.gamma[edge] > 0:
            residual = abs(4 * L / M - macro.gamma[edge] / macro.alpha[edge])
            ok &= residual <= tol
        else:
            residual = max(0.0, L / M - ZERO_NOISE_MAX_RATIO)
            ok &= residual == 0
        worst = max(worst, residual)
    checks.append(ConditionCheck("(b)", ok, worst, "|4L/M - gamma/alpha|"))

    # (c) conductance slack times L, and a = 2CL/M
    expected = conductances(dg, macro.alpha, micro.theta_kind, micro.theta_power)
    scale = torch.tensor([float(dg.resolution[dg.deme_edge[x]]) for x, _, _ in dg.pairs], dtype=torch.float64)
    slack = ((micro.conductance - expected).abs() * scale).max().item() if len(dg.pairs) else 0.0
    implied = micro.voter / _pair_voter(dg, torch.ones_like(micro.conductance), micro.capacity)
    voter_slack = ((implied - micro.conductance).abs() * scale).max().item() if len(dg.pairs) else 0.0
    worst = max(slack, voter_slack)
    checks.append(ConditionCheck("(c)", worst <= tol, worst, "|C - L^{e,e'}Θ/2|·L and |a·M/(2L) - C|·L"))

    # (d) 2BM = beta
    worst = max(abs(2 * micro.interior_bias[e] * micro.capacity[e] - macro.beta[e]) for e in dg.graph.edge_names)
    checks.append(ConditionCheck("(d)", worst <= tol, worst, "|2BM - beta|"))

    # (e) vertex budget
    worst = max(abs(_vertex_excess(micro, v) - macro.growth_at(v)) for v in dg.graph.vertices)
    checks.append(ConditionCheck("(e)", worst <= tol, worst, "|4ΣΣ B̂·M/L - β̂(v)|"))
    return ConditionReport(checks)


def validate_sequence(
    levels: Sequence[Tuple[MicroParams, DiscretizedGraph]], macro: Optional[MacroParams] = None, tol: float = 1e-9
) -> Dict[int, ConditionReport]:
    """Checks the scaling conditions along a sequence of discretizations, keyed by the finest edge resolution.

    The conditions are limits in L, so every level is checked on its own against the same ``macro``.
    """
    reports: Dict[int, ConditionReport] = {}
    for micro, dg in levels:
        key = int(max(dg.resolution.values()))
        if key in reports:
            raise ValueError(f"Two levels share the resolution L={key}")
        reports[key] = validate_conditions(micro, dg, macro, tol)
    return reports
