# Licensed under the Apache License 2.0, see LICENSE file.

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml
from typing_extensions import Self

from graphfkpp.metric_graph import DiscretizedGraph, MetricGraph, Number, build_graph, discretize
from graphfkpp.scaling import MacroParams, MicroParams, ThetaKind, micro_from_macro


@dataclass
class EdgeConfig:
    id: str
    source: str
    target: str
    length: str
    """Arclength as a decimal string, parsed exactly"""
    alpha: float = 1.0
    """Diffusion coefficient"""
    beta: float = 0.0
    """Logistic growth rate"""
    gamma: float = 0.0
    """Noise variance"""
    capacity: Optional[int] = None
    """Sites per deme. Derived from 4·L·alpha/gamma when unset; required when gamma is 0"""

    def __post_init__(self) -> None:
        self.id, self.source, self.target = str(self.id), str(self.source), str(self.target)
        self.length = str(self.length)


def _unknown_keys(cls: type, given: Mapping[str, Any], where: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(given) - known)
    if unknown:
        raise ValueError(f"Unknown keys {unknown} in {where}. Allowed keys: {sorted(known)}")


@dataclass
class GraphConfig:
    """A metric graph together with piecewise-constant SPDE coefficients."""

    name: str = ""
    vertices: List[str] = field(default_factory=list)
    edges: List[EdgeConfig] = field(default_factory=list)
    vertex_growth: Dict[str, float] = field(default_factory=dict)
    """Boundary growth β̂ per vertex; missing vertices are 0"""

    def __post_init__(self) -> None:
        edges = []
        for i, edge in enumerate(self.edges):
            if isinstance(edge, Mapping):
                _unknown_keys(EdgeConfig, edge, f"edge {i} of graph {self.name!r}")
                edge = EdgeConfig(**edge)
            edges.append(edge)
        self.edges = edges
        self.vertices = [str(v) for v in self.vertices]
        self.vertex_growth = {str(v): float(g) for v, g in self.vertex_growth.items()}
        undeclared = sorted(set(self.vertex_growth) - set(self.vertices))
        if undeclared:
            raise ValueError(f"`vertex_growth` names undeclared vertices {undeclared}")

    @classmethod
    def from_name(cls, name: str, **kwargs: Any) -> Self:
        if name not in name_to_config:
            raise ValueError(f"{name!r} is not a built-in graph. Choose from {sorted(name_to_config)}")
        conf_dict = dict(name_to_config[name])
        conf_dict.update(kwargs)
        return cls(**conf_dict)

    @classmethod
    def from_file(cls, path: Union[str, Path], **kwargs: Any) -> Self:
        with open(path, encoding="utf-8") as fp:
            file_kwargs = yaml.safe_load(fp)
            if file_kwargs is None:
                raise ValueError(f"{path} is empty which is likely unexpected.")
        if not isinstance(file_kwargs, dict):
            raise ValueError(f"{path} must hold a mapping at the top level")
        _unknown_keys(cls, file_kwargs, str(path))
        file_kwargs.update(kwargs)
        return cls(**file_kwargs)

    @classmethod
    def load(cls, source: Union[str, Path]) -> Self:
        """A graph file path, or the name of a built-in graph."""
        path = Path(source)
        if path.is_file():
            return cls.from_file(path)
        if str(source) in name_to_config:
            return cls.from_name(str(source))
        raise FileNotFoundError(
            f"{str(source)!r} is neither a graph file nor a built-in graph. Built-in graphs: {sorted(name_to_config)}"
        )

    def to_graph(self) -> MetricGraph:
        return build_graph(self.vertices, [(e.id, e.source, e.target, e.length) for e in self.edges])

    def macro(self) -> MacroParams:
        return MacroParams(
            alpha={e.id: float(e.alpha) for e in self.edges},
            beta={e.id: float(e.beta) for e in self.edges},
            gamma={e.id: float(e.gamma) for e in self.edges},
            vertex_growth={v: self.vertex_growth.get(v, 0.0) for v in self.vertices},
        )

    def capacity(self) -> Dict[str, int]:
        return {e.id: int(e.capacity) for e in self.edges if e.capacity is not None}

    def discretize(self, resolution: Union[Number, Mapping[str, Number]]) -> DiscretizedGraph:
        return discretize(self.to_graph(), resolution)

    def micro(self, dg: DiscretizedGraph, kind: ThetaKind = "geometric", p: Optional[float] = None) -> MicroParams:
        return micro_from_macro(self.macro(), dg, self.capacity(), kind, p)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _edge(id: str, source: str, target: str, length: str, **kwargs: Any) -> Dict[str, Any]:
    return dict(id=id, source=source, target=target, length=length, **kwargs)


configs = [
    # one unit interval
    dict(name="interval", vertices=["v0", "v1"], edges=[_edge("e0", "v0", "v1", "1", alpha=1.0, beta=1.0, gamma=1.0)]),
    dict(
        name="interval-4",
        vertices=["v0", "v1"],
        edges=[_edge("e0", "v0", "v1", "4", alpha=1.0, capacity=1000)],
    ),
    # three unit edges glued at a hub with boundary growth
    dict(
        name="star-3",
        vertices=["hub", "a", "b", "c"],
        edges=[
            _edge("e0", "hub", "a", "1", alpha=1.0, beta=1.0, gamma=1.0),
            _edge("e1", "hub", "b", "1", alpha=1.0, beta=1.0, gamma=1.0),
            _edge("e2", "hub", "c", "1", alpha=1.0, beta=1.0, gamma=1.0),
        ],
        vertex_growth={"hub": 1.0},
    ),
    dict(
        name="star-3-diffusion",
        vertices=["hub", "a", "b", "c"],
        edges=[
            _edge("e0", "hub", "a", "1", alpha=1.0, capacity=1000),
            _edge("e1", "hub", "b", "1", alpha=1.0, capacity=1000),
            _edge("e2", "hub", "c", "1", alpha=1.0, capacity=1000),
        ],
    ),
    # 12 demes at L=1 with 16 sites each
    dict(name="path-13", vertices=["v0", "v1"], edges=[_edge("e0", "v0", "v1", "13", alpha=1.0, gamma=0.25)]),
    dict(
        name="front-40",
        vertices=["left", "right"],
        edges=[_edge("e0", "left", "right", "40", alpha=1.0, beta=1.0, capacity=1000)],
    ),
    dict(
        name="front-40-noisy",
        vertices=["left", "right"],
        edges=[_edge("e0", "left", "right", "40", alpha=1.0, beta=1.0, gamma=0.5)],
    ),
    # exact-oracle sizes at L=1: 2 demes with 1 site, 3 demes with 2 sites
    dict(name="pair-2", vertices=["v0", "v1"], edges=[_edge("e0", "v0", "v1", "3", alpha=1.0, gamma=4.0)]),
    dict(name="tiny-3", vertices=["v0", "v1"], edges=[_edge("e0", "v0", "v1", "4", alpha=1.0, beta=1.0, gamma=2.0)]),
    dict(name="loop", vertices=["v0"], edges=[_edge("e0", "v0", "v0", "1", alpha=1.0, beta=1.0, gamma=1.0)]),
]

name_to_config = {config["name"]: config for config in configs}
