# Licensed under the Apache License 2.0, see LICENSE file.

"""Interacting SDE approximation of the stochastic FKPP equation, driven by a shared white-noise lattice."""
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from graphfkpp.metric_graph import DensityField, DiscretizedGraph, MetricGraph, Number, to_fraction
from graphfkpp.random_walk import SPDE_TIME_SCALE, kernel, nested_deme_map, walk_rates
from graphfkpp.scaling import MacroParams, ThetaKind, conductances
from graphfkpp.trajectory import Trajectory

# dt <= STABILITY_FACTOR / max exit rate
STABILITY_FACTOR = 0.1


@dataclass(frozen=True, eq=False)
class WhiteNoiseLattice:
    """Space-time Gaussian white noise on atoms of width 1/(2·L^e) at the finest resolution.

    The masses of time step k come from a Philox stream whose counter starts at k·2^64, so any step can be
    regenerated on its own and every coarser deme interval is a union of atoms.
    """

    graph: MetricGraph
    resolution: Dict[str, Fraction]
    seed: int
    replicates: int = 1

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValueError(f"`replicates` must be at least 1, got {self.replicates}")
        if not 0 <= self.seed < 2**128:
            raise ValueError(f"The lattice seed must lie in [0, 2^128), got {self.seed}")

    @classmethod
    def for_graph(
        cls, graph: MetricGraph, resolution: Union[Number, Mapping[str, Number]], seed: int, replicates: int = 1
    ) -> "WhiteNoiseLattice":
        if isinstance(resolution, Mapping):
            per_edge = {name: to_fraction(resolution[name]) for name in graph.edge_names}
        else:
            per_edge = {name: to_fraction(resolution) for name in graph.edge_names}
        return cls(graph=graph, resolution=per_edge, seed=int(seed), replicates=replicates)

    @cached_property
    def offsets(self) -> Dict[str, int]:
        out, start = {}, 0
        for edge in self.graph.edges:
            out[edge.name] = start
            count = edge.length * 2 * self.resolution[edge.name]
            if count.denominator != 1:
                raise ValueError(f"Edge {edge.name!r} is not a whole number of lattice atoms")
            start += int(count)
        return out

    @cached_property
    def num_atoms(self) -> int:
        last = self.graph.edges[-1]
        return self.offsets[last.name] + int(last.length * 2 * self.resolution[last.name])

    @cached_property
    def widths(self) -> torch.Tensor:
        out = torch.empty(self.num_atoms, dtype=torch.float64)
        for edge in self.graph.edges:
            count = int(edge.length * 2 * self.resolution[edge.name])
            start = self.offsets[edge.name]
            out[start : start + count] = float(1 / (2 * self.resolution[edge.name]))
        return out

    def masses(self, step: int, dt: float) -> torch.Tensor:
        """[replicates, atoms] centered Gaussian masses with variance dt·|atom|."""
        rng = np.random.Generator(np.random.Philox(key=self.seed, counter=int(step) << 64))
        normals = torch.from_numpy(rng.standard_normal((self.replicates, self.num_atoms)))
        return normals * (dt * self.widths).sqrt()

    def aggregation(self, dg: DiscretizedGraph) -> torch.Tensor:
        """[atoms, demes] 0/1 matrix summing atoms into deme intervals I_x."""
        if [(e.name, e.length) for e in dg.graph.edges] != [(e.name, e.length) for e in self.graph.edges]:
            raise ValueError("The discretization belongs to a different metric graph")
        out = torch.zeros(self.num_atoms, dg.num_demes, dtype=torch.float64)
        for x, (lo, hi) in enumerate(deme_intervals(dg)):
            edge = dg.deme_edge[x]
            atoms_per_unit = 2 * self.resolution[edge]
            first, last = lo * atoms_per_unit, hi * atoms_per_unit
            if first.denominator != 1 or last.denominator != 1:
                raise ValueError(
                    f"Interval [{lo}, {hi}] of deme {x} on edge {edge!r} is not a union of lattice atoms"
                    f" (lattice L={self.resolution[edge]}, level L={dg.resolution[edge]})"
                )
            start = self.offsets[edge]
            out[start + int(first) : start + int(last), x] = 1.0
        return out


def deme_intervals(dg: DiscretizedGraph) -> List[Tuple[Fraction, Fraction]]:
    """I_x: the points of the edge closer to x than to any other deme, extended to the vertex for end demes."""
    out = []
    for x in range(dg.num_demes):
        edge = dg.graph.edge(dg.deme_edge[x])
        half = dg.spacing(x) / 2
        s = dg.coordinates[x]
        lo, hi = s - half, s + half
        if x in dg.adjacent_vertex:
            if dg.adjacent_vertex[x][1][1] == 0:
                lo = Fraction(0)
            else:
                hi = edge.length
        out.append((lo, hi))
    return out


def noise_scale(dg: DiscretizedGraph) -> torch.Tensor:
    """√L^e on interior demes, (1/(2L^e) + d(x, v))^(-1/2) on vertex-adjacent demes."""
    values = []
    for x in range(dg.num_demes):
        if x in dg.adjacent_vertex:
            values.append(float(1 / (dg.spacing(x) / 2 + dg.vertex_gap(x))) ** 0.5)
        else:
            values.append(float(dg.resolution_of(x)) ** 0.5)
    return torch.tensor(values, dtype=torch.float64)


def brownian_increments(lattice: WhiteNoiseLattice, dg: DiscretizedGraph, step: int, dt: float) -> torch.Tensor:
    """[replicates, demes] Brownian increments of variance dt built from the lattice masses of one step."""
    return (lattice.masses(step, dt) @ lattice.aggregation(dg)) * noise_scale(dg)


def interval_nesting(dg_fine: DiscretizedGraph, dg_coarse: DiscretizedGraph) -> torch.Tensor:
    """[fine demes, coarse demes] 0/1 matrix of I_fine ⊆ I_coarse. Errors if some fine interval straddles."""
    coarse = deme_intervals(dg_coarse)
    out = torch.zeros(dg_fine.num_demes, dg_coarse.num_demes, dtype=torch.float64)
    for x, (lo, hi) in enumerate(deme_intervals(dg_fine)):
        edge = dg_fine.deme_edge[x]
        owners = [y for y in dg_coarse.edge_demes[edge] if coarse[y][0] <= lo and hi <= coarse[y][1]]
        if len(owners) != 1:
            raise ValueError(f"Fine interval [{lo}, {hi}] on edge {edge!r} is not nested in a coarse interval")
        out[x, owners[0]] = 1.0
    return out


@dataclass
class SDEState:
    values: torch.Tensor
    """[replicates, demes] values in [0, 1]"""
    dt: float
    step: int = 0

    @property
    def time(self) -> float:
        return self.step * self.dt


class SDEScheme:
    """Euler-Maruyama stepping of

    dU_x = [𝓛U + β_e U(1-U) + 1_{x~v} L^e β̂(v) U(1-U)] dt + √(γ_e·scale_x²·U(1-U)) dB_x
    """

    def __init__(
        self,
        dg: DiscretizedGraph,
        macro: MacroParams,
        time_scale: float = SPDE_TIME_SCALE,
        kind: ThetaKind = "geometric",
        p: Optional[float] = None,
    ) -> None:
        self.dg = dg
        self.macro = macro
        self.generator = walk_rates(dg, conductances(dg, macro.alpha, kind, p), time_scale)
        growth, noise = [], []
        scale = noise_scale(dg)
        for x in range(dg.num_demes):
            edge = dg.deme_edge[x]
            rate = macro.beta[edge]
            if x in dg.adjacent_vertex:
                rate += float(dg.resolution_of(x)) * macro.growth_at(dg.adjacent_vertex[x][0])
            growth.append(rate)
            noise.append(macro.gamma[edge] * float(scale[x]) ** 2)
        self.growth = torch.tensor(growth, dtype=torch.float64)
        self.noise = torch.tensor(noise, dtype=torch.float64)

    @property
    def max_stable_dt(self) -> float:
        return STABILITY_FACTOR / self.generator.max_exit_rate

    @property
    def noiseless(self) -> bool:
        return bool((self.noise == 0).all())

    def check_dt(self, dt: float) -> None:
        if dt <= 0 or dt > self.max_stable_dt * (1 + 1e-12):
            raise ValueError(
                f"dt={dt:g} violates the stability guard"
                f" dt <= {STABILITY_FACTOR}/max exit rate = {self.max_stable_dt:g}"
            )

    def drift(self, values: torch.Tensor) -> torch.Tensor:
        return self.generator.apply(values) + self.growth * values * (1 - values)

    def step(self, state: SDEState, increments: Optional[torch.Tensor] = None) -> SDEState:
        self.check_dt(state.dt)
        u = state.values
        new = u + self.drift(u) * state.dt
        if increments is not None and not self.noiseless:
            new = new + (self.noise * (u * (1 - u)).clamp(min=0)).sqrt() * increments
        if not torch.isfinite(new).all():
            raise RuntimeError(f"Nonfinite SDE state at step {state.step + 1} (t={(state.step + 1) * state.dt:g})")
        return SDEState(values=new.clamp(0, 1), dt=state.dt, step=state.step + 1)

    def mild_step(self, state: SDEState, transition: torch.Tensor) -> SDEState:
        """Deterministic exponential-integrator step U <- P_dt(U + dt·F(U)) for noiseless runs."""
        u = state.values
        reaction = self.growth * u * (1 - u)
        new = (u + state.dt * reaction) @ transition.T
        return SDEState(values=new.clamp(0, 1), dt=state.dt, step=state.step + 1)

    def default_dt(self, t_end: float) -> float:
        return t_end / math.ceil(t_end / self.max_stable_dt)

    def run(
        self,
        u0: Union[DensityField, torch.Tensor],
        t_end: float,
        dt: float,
        lattice: Optional[WhiteNoiseLattice] = None,
        sample_times: Optional[Sequence[float]] = None,
        integrator: str = "euler",
    ) -> Trajectory:
        """Integrates from ``u0`` to ``t_end``.

        Arguments:
            u0: Initial values, shared by all replicates.
            t_end: Final time, a multiple of ``dt``.
            dt: Step size.
            lattice: Noise source; its replicate count sets the batch size. Required unless every γ_e is 0.
            sample_times: Multiples of ``dt`` in [0, t_end]. Defaults to (0, t_end).
            integrator: ``"euler"`` for Euler-Maruyama, ``"mild"`` for the noiseless exponential integrator.
        """
        if integrator == "euler":
            self.check_dt(dt)
        elif integrator == "mild":
            if not self.noiseless:
                raise ValueError("The exponential integrator is a noiseless oracle; every gamma must be 0")
        else:
            raise ValueError(f"Unknown integrator {integrator!r}. Choose from 'euler', 'mild'.")
        if lattice is None and not self.noiseless:
            raise ValueError("A white-noise lattice is required when some gamma is positive")
        num_steps = _steps(t_end, dt, "t_end")
        if sample_times is None:
            sample_times = (0.0, t_end)
        sample_steps = [_steps(t, dt, "sample time") for t in sample_times]
        if any(b <= a for a, b in zip(sample_steps[:-1], sample_steps[1:])) or sample_steps[-1] > num_steps:
            raise ValueError("`sample_times` must be strictly increasing and within [0, t_end]")

        values = u0.deme_values if isinstance(u0, DensityField) else torch.as_tensor(u0, dtype=torch.float64)
        if values.min() < 0 or values.max() > 1:
            raise ValueError("Initial values must lie in [0, 1]")
        replicates = lattice.replicates if lattice is not None else 1
        state = SDEState(values=values.expand(replicates, -1).clone(), dt=dt)
        aggregation = lattice.aggregation(self.dg) if (lattice is not None and not self.noiseless) else None
        scale = noise_scale(self.dg)
        transition = kernel(self.generator, self.dg, dt).transition if integrator == "mild" else None

        wanted = {s: i for i, s in enumerate(sample_steps)}
        snapshots = torch.empty(len(sample_steps), replicates, self.dg.num_demes, dtype=torch.float64)
        if 0 in wanted:
            snapshots[wanted[0]] = state.values
        for k in tqdm(range(num_steps), desc="SDE steps", disable=None, leave=False):
            if integrator == "mild":
                state = self.mild_step(state, transition)
            else:
                increments = None
                if aggregation is not None:
                    increments = (lattice.masses(k, dt) @ aggregation) * scale
                state = self.step(state, increments)
            if state.step in wanted:
                snapshots[wanted[state.step]] = state.values
        times = torch.tensor([s * dt for s in sample_steps], dtype=torch.float64)
        return Trajectory(self.dg, times, snapshots, seed=lattice.seed if lattice is not None else None)


def _steps(t: float, dt: float, name: str) -> int:
    steps = round(t / dt)
    if abs(steps * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"{name} {t:g} is not a multiple of dt={dt:g}")
    return steps


def run_sde(
    dg: DiscretizedGraph,
    macro: MacroParams,
    u0: Union[DensityField, torch.Tensor],
    t_end: float,
    dt: float,
    lattice: Optional[WhiteNoiseLattice] = None,
    sample_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    return SDEScheme(dg, macro).run(u0, t_end, dt, lattice, sample_times)


def coupling_distance(coarse: Trajectory, fine: Trajectory) -> float:
    """sup_t sup_x mean_r |U_coarse(t, x) - U_fine(t, x')|², x' the fine deme at the position of x."""
    if not torch.equal(coarse.times, fine.times) or coarse.replicates != fine.replicates:
        raise ValueError("Coupled trajectories need the same sample times and replicate count")
    mapping = nested_deme_map(coarse.dg, fine.dg)
    squared = (coarse.values - fine.values[..., mapping]) ** 2
    return float(squared.mean(dim=1).max())


def coupling_error(
    dg_coarse: DiscretizedGraph,
    dg_fine: DiscretizedGraph,
    macro: MacroParams,
    initial: Callable[[DiscretizedGraph], torch.Tensor],
    t_end: float,
    dt: float,
    lattice: WhiteNoiseLattice,
    sample_times: Optional[Sequence[float]] = None,
) -> float:
    """Worst mean squared discrepancy between two resolutions driven by the same white noise.

    Arguments:
        dg_coarse: Coarse discretization.
        dg_fine: Fine discretization of the same graph, nested in the lattice.
        macro: SPDE coefficients shared by both levels.
        initial: Builds the initial values of a discretization.
        t_end: Horizon.
        dt: Step size shared by both levels; must satisfy the guard at the fine level.
        lattice: Shared white noise; its replicate count is the number of coupled pairs.
        sample_times: Times at which the discrepancy is evaluated.
    """
    nested_deme_map(dg_coarse, dg_fine)
    coarse = SDEScheme(dg_coarse, macro).run(initial(dg_coarse), t_end, dt, lattice, sample_times)
    fine = SDEScheme(dg_fine, macro).run(initial(dg_fine), t_end, dt, lattice, sample_times)
    return coupling_distance(coarse, fine)
