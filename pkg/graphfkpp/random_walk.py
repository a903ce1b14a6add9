# Licensed under the Apache License 2.0, see LICENSE file.

"""The conductance random walk on a discretized graph: generator, transition kernel and heat-kernel diagnostics."""
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch

from graphfkpp.metric_graph import DiscretizedGraph, distance_matrix

# With this factor the walk generator equals alpha_e times the discrete Laplacian on interior demes
SPDE_TIME_SCALE = 2.0
MAX_KERNEL_DEMES = 5000
# largest Poisson mean of one uniformization piece before squaring
POISSON_MEAN_PER_PIECE = 4.0
DENSE_ORACLE_STATES = 4096


@dataclass(frozen=True, eq=False)
class WalkGenerator:
    """Off-diagonal jump rates λ(x, y) stored as a sparse list over ordered neighbor pairs."""

    origin: torch.Tensor
    destination: torch.Tensor
    rates: torch.Tensor
    num_demes: int
    time_scale: float = 1.0

    @cached_property
    def exit_rates(self) -> torch.Tensor:
        out = torch.zeros(self.num_demes, dtype=torch.float64)
        return out.index_add_(0, self.origin, self.rates)

    @property
    def max_exit_rate(self) -> float:
        return float(self.exit_rates.max()) if self.num_demes else 0.0

    def matrix(self) -> torch.Tensor:
        """Dense generator matrix Q with rows summing to zero."""
        q = torch.zeros(self.num_demes, self.num_demes, dtype=torch.float64)
        q.index_put_((self.origin, self.destination), self.rates, accumulate=True)
        q -= torch.diag(self.exit_rates)
        return q

    def apply(self, values: torch.Tensor) -> torch.Tensor:
        """(𝓛F)(x) = Σ_y λ(x, y)(F(y) - F(x)) along the last dimension."""
        values = values.to(torch.float64)
        diff = values[..., self.destination] - values[..., self.origin]
        out = torch.zeros_like(values)
        return out.index_add_(-1, self.origin, diff * self.rates)


def walk_rates(dg: DiscretizedGraph, conductance: torch.Tensor, time_scale: float = 1.0) -> WalkGenerator:
    """λ(x, y) = time_scale · C_xy · L^e for x on e, reversible with respect to m_n.

    Arguments:
        dg: The discretized graph.
        conductance: Conductances aligned with ``dg.pairs``.
        time_scale: Multiplies every rate. Use ``SPDE_TIME_SCALE`` to match the SPDE generator α_eΔ.
    """
    conductance = torch.as_tensor(conductance, dtype=torch.float64)
    if conductance.shape != (len(dg.pairs),):
        raise ValueError(f"Expected {len(dg.pairs)} conductances, got shape {tuple(conductance.shape)}")
    if len(dg.pairs):
        reverse = torch.tensor([dg.pair_index[(y, x)] for x, y, _ in dg.pairs])
        asymmetry = (conductance - conductance[reverse]).abs().max()
        if asymmetry > 1e-12 * conductance.abs().max():
            raise ValueError(f"Conductances must be symmetric, max asymmetry {float(asymmetry):.3e}")
    if time_scale <= 0:
        raise ValueError(f"`time_scale` must be positive, got {time_scale}")
    resolution = torch.tensor([float(dg.resolution_of(x)) for x, _, _ in dg.pairs], dtype=torch.float64)
    pairs = dg.pair_tensor
    return WalkGenerator(
        origin=pairs[:, 0],
        destination=pairs[:, 1],
        rates=time_scale * conductance * resolution,
        num_demes=dg.num_demes,
        time_scale=time_scale,
    )


def generator_apply(gen: WalkGenerator, values: torch.Tensor) -> torch.Tensor:
    return gen.apply(torch.as_tensor(values, dtype=torch.float64))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    t: float
    transition: torch.Tensor
    """exp(tQ)"""
    measure: torch.Tensor

    @cached_property
    def density(self) -> torch.Tensor:
        """p^n(t, x, y) = exp(tQ)[x, y] / m_n(y)."""
        return self.transition / self.measure[None, :]

    @property
    def max_asymmetry(self) -> float:
        return float((self.density - self.density.T).abs().max())

    @property
    def row_mass(self) -> torch.Tensor:
        return (self.density * self.measure[None, :]).sum(dim=1)


def _poisson_tail_bound(weight: float, mean: float, k: int) -> float:
    # Σ_{j>k} w_j with w_{j+1} = w_j·mean/(j+1), valid once k + 2 > mean
    ratio = mean / (k + 2)
    return weight * mean / (k + 1) / (1 - ratio)


def uniformized_exponential(q: torch.Tensor, t: float, tol: float = 1e-12) -> torch.Tensor:
    """exp(tQ) as a Poisson mixture of powers of the jump matrix, with scaling and squaring.

    The horizon is split into 2^s pieces whose Poisson mean is at most ``POISSON_MEAN_PER_PIECE``, each piece is
    truncated once its Poisson tail drops below ``tol / 2^s``, and the piece is squared s times. Every term is
    nonnegative.
    """
    n = q.shape[0]
    identity = torch.eye(n, dtype=torch.float64)
    rate = float((-q.diagonal()).max()) if n else 0.0
    if t == 0 or rate == 0:
        return identity
    squarings = max(0, math.ceil(math.log2(rate * t / POISSON_MEAN_PER_PIECE)))
    mean = rate * t / 2**squarings
    piece_tol = max(tol / 2**squarings, 1e-300)
    jump = identity + q / rate

    weight = math.exp(-mean)
    term = identity
    result = weight * identity
    k = 0
    while k + 2 <= mean or _poisson_tail_bound(weight, mean, k) > piece_tol:
        k += 1
        term = term @ jump
        weight *= mean / k
        result += weight * term
    for _ in range(squarings):
        result = result @ result
    return result


def kernel(gen: WalkGenerator, dg: DiscretizedGraph, t: float, tol: float = 1e-12) -> KernelMatrix:
    """Transition density p^n(t, ·, ·) against m_n, computed by uniformization.

    Arguments:
        gen: The walk generator.
        dg: The discretized graph providing m_n.
        t: Time, nonnegative.
        tol: Poisson tail cutoff.
    """
    if t < 0:
        raise ValueError(f"Time must be nonnegative, got {t}")
    if dg.num_demes > MAX_KERNEL_DEMES:
        raise ValueError(
            f"Kernel matrices are limited to {MAX_KERNEL_DEMES} demes, this graph has {dg.num_demes}."
            " Estimate transition probabilities from Monte Carlo paths instead."
        )
    return KernelMatrix(t=float(t), transition=uniformized_exponential(gen.matrix(), t, tol), measure=dg.measure)


def semigroup_apply(gen: WalkGenerator, dg: DiscretizedGraph, t: float, values: torch.Tensor) -> torch.Tensor:
    """P^n_t f(x) = Σ_y f(y) p^n(t, x, y) m_n(y)."""
    values = torch.as_tensor(values, dtype=torch.float64)
    if t == 0:
        return values.clone()
    return kernel(gen, dg, t).transition @ values


def dense_exponential(gen: WalkGenerator, t: float) -> torch.Tensor:
    """exp(tQ) by scaling-and-squaring Padé, independent of the uniformization path."""
    return torch.linalg.matrix_exp(gen.matrix() * t)


def expm_action(q: torch.Tensor, values: torch.Tensor, t: float, tol: float = 1e-13) -> torch.Tensor:
    """exp(tQ)·v for a dense or sparse CTMC generator Q."""
    values = values.to(torch.float64)
    if t == 0:
        return values.clone()
    n = q.shape[0]
    if not q.is_sparse and n <= DENSE_ORACLE_STATES:
        return torch.linalg.matrix_exp(q * t) @ values

    q = (q if q.is_sparse else q.to_sparse()).coalesce()
    rows, cols = q.indices()
    diagonal = q.values()[rows == cols]
    rate = float((-diagonal).max()) if diagonal.numel() else 0.0
    if rate == 0:
        return values.clone()
    mean = rate * t
    last = int(mean + 12 * math.sqrt(mean) + 40)
    matvec = values.unsqueeze(-1) if values.dim() == 1 else values
    term = matvec
    result = math.exp(-mean) * term
    for k in range(1, last + 1):
        term = term + torch.sparse.mm(q, term) / rate
        log_weight = -mean + k * math.log(mean) - math.lgamma(k + 1)
        result = result + math.exp(log_weight) * term
        if k > mean and math.exp(log_weight) < tol:
            break
    return result.squeeze(-1) if values.dim() == 1 else result


def chapman_kolmogorov_error(gen: WalkGenerator, dg: DiscretizedGraph, s: float, t: float) -> float:
    """max |p(s+t, x, y) - Σ_z p(s, x, z) p(t, z, y) m(z)|."""
    direct = kernel(gen, dg, s + t).density
    composed = kernel(gen, dg, s).density @ torch.diag(dg.measure) @ kernel(gen, dg, t).density
    return float((direct - composed).abs().max())


@dataclass
class HeatKernelConstants:
    resolution: float
    eps: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    sigma: float
    per_time: Dict[float, Dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in ("c1", "c2", "c3", "c4", "c5", "c6", "c7", "sigma")}


@dataclass
class HeatKernelReport:
    levels: List[HeatKernelConstants]

    def to_frame(self) -> pd.DataFrame:
        """Flat table with columns (resolution, t, constant, value). Constants fitted over all times have t = NaN."""
        rows = []
        for level in self.levels:
            for t, constants in sorted(level.per_time.items()):
                rows.extend((level.resolution, t, name, value) for name, value in constants.items())
            rows.extend((level.resolution, float("nan"), name, value) for name, value in level.as_dict().items())
        return pd.DataFrame(rows, columns=["resolution", "t", "constant", "value"])

    def spread(self, name: str) -> float:
        """max/min of one constant across resolutions."""
        values = [getattr(level, name) for level in self.levels]
        return max(values) / min(values)

    def summary(self) -> Dict[str, Dict[str, float]]:
        return {f"L={level.resolution:g}": level.as_dict() for level in self.levels}


def _on_edge_diffusivity(dg: DiscretizedGraph, gen: WalkGenerator) -> torch.Tensor:
    on_edge = torch.tensor([via is None for _, _, via in dg.pairs])
    spacing = torch.tensor([float(dg.spacing(x)) for x, _, _ in dg.pairs], dtype=torch.float64)
    return (gen.rates * spacing**2)[on_edge]


def _log_bound(density: torch.Tensor, scale: float, exponent_term: torch.Tensor) -> torch.Tensor:
    return torch.log(density) + math.log(scale) + exponent_term


def _fit_holder(increments: torch.Tensor, deltas: torch.Tensor, taus: torch.Tensor) -> Tuple[float, float]:
    keep = (increments > 0) & (deltas > 0)
    increments, deltas, taus = increments[keep], deltas[keep], taus[keep]
    if increments.numel() < 2:
        return float("nan"), float("nan")
    # log|Δp| + ½log τ = log C7 + σ(log δ - ½log τ)
    target = torch.log(increments) + 0.5 * torch.log(taus)
    regressor = torch.log(deltas) - 0.5 * torch.log(taus)
    design = torch.stack([torch.ones_like(regressor), regressor], dim=1)
    solution = torch.linalg.lstsq(design, target.unsqueeze(1)).solution.squeeze(1)
    sigma = float(solution[1])
    c7 = float((increments * taus ** ((1 + sigma) / 2) / deltas**sigma).max())
    return sigma, c7


def kernel_diagnostics(
    dgs: Sequence[DiscretizedGraph],
    generators: Sequence[WalkGenerator],
    times: Sequence[float],
    upper_exponent: Optional[float] = None,
    lower_exponent: Optional[float] = None,
    small_time_exponent: float = 1.0,
) -> HeatKernelReport:
    """Fits the constants of the uniform heat-kernel bounds at every resolution.

    Arguments:
        dgs: Two or more discretizations of the same metric graph.
        generators: One walk generator per discretization.
        times: Time grid in (0, T].
        upper_exponent: C₂ of the Gaussian upper bound. Defaults to 1/(8·D_max), D = on-edge diffusivity.
        lower_exponent: C₆ of the Gaussian lower bound. Defaults to 1/(2·D_min).
        small_time_exponent: C₄ of the sub-Gaussian bound for t <= ε_n.
    """
    if len(dgs) < 2:
        raise ValueError(f"Heat-kernel diagnostics need at least 2 resolutions, got {len(dgs)}")
    if len(dgs) != len(generators):
        raise ValueError("Pass one generator per discretization")
    reference = [(e.name, e.length) for e in dgs[0].graph.edges]
    for dg in dgs[1:]:
        if [(e.name, e.length) for e in dg.graph.edges] != reference:
            raise ValueError("All discretizations must come from the same metric graph")
    times = sorted(float(t) for t in times)
    if not times or times[0] <= 0:
        raise ValueError("Times must be positive")

    diffusivity = torch.cat([_on_edge_diffusivity(dg, gen) for dg, gen in zip(dgs, generators)])
    c2 = upper_exponent if upper_exponent is not None else 1 / (8 * float(diffusivity.max()))
    c6 = lower_exponent if lower_exponent is not None else 1 / (2 * float(diffusivity.min()))
    c4 = small_time_exponent

    levels = []
    for dg, gen in zip(dgs, generators):
        eps = dg.eps
        dist = distance_matrix(dg)
        densities = {t: kernel(gen, dg, t).density for t in times}
        per_time: Dict[float, Dict[str, float]] = {}
        c1, c5 = 0.0, math.inf
        for t, density in densities.items():
            scale = max(eps, math.sqrt(t))
            constants = {}
            if t >= eps:
                constants["c1"] = float(_log_bound(density, scale, c2 * dist**2 / t).max().exp())
                c1 = max(c1, constants["c1"])
            constants["c5"] = float(_log_bound(density, scale, c6 * dist**2 / t).min().exp())
            c5 = min(c5, constants["c5"])
            per_time[t] = constants

        c3 = 0.0
        for t in (eps / 4, eps / 2, eps):
            density = kernel(gen, dg, t).density
            value = float(_log_bound(density, max(eps, math.sqrt(t)), c4 * dist / math.sqrt(t)).max().exp())
            per_time.setdefault(t, {})["c3"] = value
            c3 = max(c3, value)

        increments, deltas, taus = [], [], []
        pairs = dg.pair_tensor
        for t, density in densities.items():
            increments.append((density[pairs[:, 0]] - density[pairs[:, 1]]).abs().flatten())
            step = dist[pairs[:, 0], pairs[:, 1]]
            deltas.append(step[:, None].expand(-1, dg.num_demes).flatten())
            taus.append(torch.full_like(increments[-1], t))
        for t, t_next in zip(times[:-1], times[1:]):
            increments.append((densities[t] - densities[t_next]).abs().flatten())
            deltas.append(torch.full_like(increments[-1], math.sqrt(t_next - t)))
            taus.append(torch.full_like(increments[-1], t))
        sigma, c7 = _fit_holder(torch.cat(increments), torch.cat(deltas), torch.cat(taus))
        if not math.isfinite(sigma):
            warnings.warn(f"Not enough distinct kernel increments to fit a Hölder exponent at L={1 / eps:g}")

        levels.append(
            HeatKernelConstants(
                resolution=1 / eps, eps=eps, c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, c6=c6, c7=c7, sigma=sigma,
                per_time=per_time,
            )
        )
    return HeatKernelReport(levels)


def nested_deme_map(dg_coarse: DiscretizedGraph, dg_fine: DiscretizedGraph, tol: float = 1e-9) -> torch.Tensor:
    """Index of the fine deme at the position of every coarse deme."""
    coarse_edges = [(e.name, e.length) for e in dg_coarse.graph.edges]
    if coarse_edges != [(e.name, e.length) for e in dg_fine.graph.edges]:
        raise ValueError("Resolutions must discretize the same metric graph")
    mapping = []
    for x in range(dg_coarse.num_demes):
        edge = dg_coarse.deme_edge[x]
        ratio = dg_fine.resolution[edge] / dg_coarse.resolution[edge]
        if abs(float(ratio) - round(float(ratio))) > tol or round(float(ratio)) < 1:
            raise ValueError(
                f"Resolutions are not nested on edge {edge!r}: fine/coarse ratio {float(ratio):.6g} is not an integer"
            )
        position = dg_coarse.coordinates[x] * dg_fine.resolution[edge]
        k = round(float(position))
        if abs(float(position) - k) > tol:
            raise ValueError(f"Coarse deme {x} has no fine counterpart on edge {edge!r}")
        mapping.append(dg_fine.edge_demes[edge][k - 1])
    return torch.tensor(mapping, dtype=torch.long)


def local_clt_error(
    dg_coarse: DiscretizedGraph,
    gen_coarse: WalkGenerator,
    dg_fine: DiscretizedGraph,
    gen_fine: WalkGenerator,
    t: float,
    region: Optional[Sequence[str]] = None,
) -> float:
    """sup |p_coarse(t, x, y) - p_fine(t, x', y')| over coarse demes in ``region`` (edge ids, default all).

    The fine kernel stands in for the diffusion kernel; x' is the fine deme at the position of x.
    """
    if t <= 0:
        raise ValueError(f"Time must be positive, got {t}")
    mapping = nested_deme_map(dg_coarse, dg_fine)
    ratio = min(float(dg_fine.resolution[e] / dg_coarse.resolution[e]) for e in dg_coarse.graph.edge_names)
    if 1 < ratio < 4:
        warnings.warn(f"The fine kernel is only {ratio:g}x finer than the coarse one; 4x or more is recommended")
    if region is None:
        selected = torch.arange(dg_coarse.num_demes)
    else:
        for edge in region:
            dg_coarse.graph.edge(edge)
        selected = torch.tensor([x for edge in region for x in dg_coarse.edge_demes[edge]], dtype=torch.long)
    coarse = kernel(gen_coarse, dg_coarse, t).density[selected][:, selected]
    fine_index = mapping[selected]
    fine = kernel(gen_fine, dg_fine, t).density[fine_index][:, fine_index]
    return float((coarse - fine).abs().max())
