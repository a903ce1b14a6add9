# Licensed under the Apache License 2.0, see LICENSE file.
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

import torch

from graphfkpp.metric_graph import DiscretizedGraph, constant_profile, step_profile


@dataclass
class InitialCondition:
    """Initial density profile"""

    kind: Literal["constant", "step"] = "step"
    """``constant`` fills every deme with `value`; ``step`` is a left block on one edge"""
    value: float = 0.5
    """Density of the constant profile"""
    edge: Optional[str] = None
    """Edge carrying the step. Defaults to the first edge of the graph"""
    position: float = 0.5
    """Demes of `edge` at or left of this arclength get `inside`"""
    inside: float = 1.0
    """Density inside the step"""
    outside: float = 0.0
    """Density everywhere else"""

    def __post_init__(self) -> None:
        issues = []
        if self.kind not in ("constant", "step"):
            issues.append(f"`--initial.kind` must be 'constant' or 'step', got {self.kind!r}")
        for name in ("value", "inside", "outside"):
            if not 0 <= getattr(self, name) <= 1:
                issues.append(f"`--initial.{name}` must lie in [0, 1], got {getattr(self, name)}")
        if self.position < 0:
            issues.append(f"`--initial.position` must be nonnegative, got {self.position}")
        if issues:
            raise ValueError("\n".join(issues))

    def profile(self, dg: DiscretizedGraph) -> torch.Tensor:
        if self.kind == "constant":
            return constant_profile(dg, self.value)
        edge = self.edge if self.edge is not None else dg.graph.edge_names[0]
        return step_profile(dg, edge, self.position, self.inside, self.outside)


@dataclass
class ExperimentConfig:
    """A BVM versus SDE convergence study over a ladder of resolutions"""

    graph: str = "star-3"
    """Graph file path or built-in graph name"""
    ladder: List[int] = field(default_factory=lambda: [8, 16, 32])
    """Demes per unit length at every level, strictly increasing, each dividing the next"""
    t_end: float = 0.5
    """Time horizon"""
    samples: int = 5
    """Number of equally spaced sample times in [0, t_end]"""
    bvm_replicates: int = 400
    """BVM replicates per level"""
    sde_replicates: int = 400
    """SDE replicates per level, all driven by one shared white-noise lattice"""
    seed: int = 42
    """Master seed"""
    dt: Optional[float] = None
    """SDE step size shared by all levels. Defaults to the stability bound of the finest level"""
    kernel_times: List[float] = field(default_factory=lambda: [0.05, 0.1, 0.25, 0.5])
    """Times at which heat-kernel constants are fitted; empty skips the diagnostics"""
    num_workers: int = 0
    """Worker processes for BVM replicates"""
    out_dir: Path = Path("out/converge")
    """Directory for CSV artifacts, reports and logs"""
    initial: InitialCondition = field(default_factory=InitialCondition)

    def __post_init__(self) -> None:
        if isinstance(self.initial, dict):
            self.initial = InitialCondition(**self.initial)
        self.out_dir = Path(self.out_dir)
        issues = []
        if not self.ladder:
            issues.append("`--ladder` must name at least one resolution")
        elif any(b <= a for a, b in zip(self.ladder[:-1], self.ladder[1:])):
            issues.append(f"`--ladder` must be strictly increasing, got {self.ladder}")
        elif self.ladder[0] <= 0:
            issues.append(f"`--ladder` values must be positive, got {self.ladder}")
        elif any(b % a for a, b in zip(self.ladder[:-1], self.ladder[1:])):
            # shared noise and the level coupling both need nested deme intervals
            issues.append(f"`--ladder` values must each divide the next one, got {self.ladder}")
        if not self.t_end > 0:
            issues.append(f"`--t_end` must be positive, got {self.t_end}")
        if self.samples < 2:
            issues.append(f"`--samples` must be at least 2, got {self.samples}")
        for name in ("bvm_replicates", "sde_replicates"):
            if getattr(self, name) < 1:
                issues.append(f"`--{name}` must be at least 1, got {getattr(self, name)}")
        if self.dt is not None and self.dt <= 0:
            issues.append(f"`--dt` must be positive, got {self.dt}")
        if any(t <= 0 for t in self.kernel_times):
            issues.append(f"`--kernel_times` must be positive, got {self.kernel_times}")
        if self.seed < 0:
            issues.append(f"`--seed` must be nonnegative, got {self.seed}")
        if issues:
            raise ValueError("\n".join(issues))

    def sample_times(self) -> List[float]:
        return [self.t_end * i / (self.samples - 1) for i in range(self.samples)]
