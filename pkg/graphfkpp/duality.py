# Licensed under the Apache License 2.0, see LICENSE file.

"""The branching-coalescing dual of the biased voter model and checks of the duality identity.

Time runs backward along every BVM arrow. When site z copies site w through a voter arrow, the dual particle
on z jumps to w; when z takes type 1 from w through a bias arrow, the particle on z stays and a new particle
is placed on w. Particles landing on an occupied site merge with it.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from graphfkpp.bvm import MAX_SITES, BiasedVoterModel, assemble_generator, site_demes, site_generator
from graphfkpp.metric_graph import DensityField, DiscretizedGraph
from graphfkpp.random_walk import expm_action
from graphfkpp.scaling import MicroParams
from graphfkpp.utils import Seed, philox_generator, replicate_seeds

MAX_PARTICLES = 10**6
MIN_REPLICATES = 100
# (deme, slot)
Site = Tuple[int, int]


@dataclass
class DualState:
    particles: Dict[Site, None]
    """Occupied sites, in insertion order"""
    time: float
    rng: np.random.Generator
    events: int = 0
    branchings: int = 0
    coalescences: int = 0

    @property
    def count(self) -> int:
        return len(self.particles)

    def occupancy(self, num_demes: int) -> np.ndarray:
        out = np.zeros(num_demes, dtype=np.int64)
        for deme, _ in self.particles:
            out[deme] += 1
        return out


class DualProcess:
    """Event-driven simulation of the dual on the sites of a discretized graph."""

    def __init__(self, dg: DiscretizedGraph, micro: MicroParams) -> None:
        model = BiasedVoterModel(dg, micro)
        self.dg = dg
        self.indptr = model.indptr
        self.sources = model.sources
        self.capacity = model.capacity
        self.voter = model.voter
        self.bias = model.bias
        # per-pair total rate onto the whole source deme
        self.pair_rate = self.capacity[self.sources] * (self.voter + self.bias)
        self.deme_rate = np.array(
            [self.pair_rate[self.indptr[x] : self.indptr[x + 1]].sum() for x in range(dg.num_demes)]
        )

    def start(self, sites: Sequence[Site], seed: Seed = 0) -> DualState:
        """Places one particle per site. Repeated sites coalesce on the spot."""
        state = DualState(particles={}, time=0.0, rng=philox_generator(seed))
        for deme, slot in sites:
            deme, slot = int(deme), int(slot)
            if not 0 <= deme < self.dg.num_demes:
                raise ValueError(f"Deme {deme} is not on the graph (it has {self.dg.num_demes} demes)")
            if not 0 <= slot < self.capacity[deme]:
                raise ValueError(f"Slot {slot} is out of range for deme {deme} with {self.capacity[deme]} sites")
            if (deme, slot) in state.particles:
                state.coalescences += 1
            state.particles[(deme, slot)] = None
        return state

    def run(self, state: DualState, t_end: float) -> DualState:
        """Advances ``state`` in place to ``t_end``."""
        rng = state.rng
        while True:
            sites = list(state.particles)
            if not sites:
                break
            weights = np.cumsum(self.deme_rate[[deme for deme, _ in sites]])
            total = weights[-1]
            if total <= 0:
                break
            wait = rng.exponential(1 / total)
            if state.time + wait > t_end:
                break
            state.time += wait
            z = sites[min(int(np.searchsorted(weights, rng.random() * total, side="right")), len(sites) - 1)]
            x = z[0]
            lo, hi = self.indptr[x], self.indptr[x + 1]
            row = np.cumsum(self.pair_rate[lo:hi])
            j = lo + min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), hi - lo - 1)
            y = int(self.sources[j])
            w = (y, int(rng.integers(self.capacity[y])))
            branch = rng.random() * (self.voter[j] + self.bias[j]) >= self.voter[j]
            if not branch:
                del state.particles[z]
            else:
                state.branchings += 1
            if w in state.particles:
                state.coalescences += 1
            state.particles[w] = None
            state.events += 1
            if len(state.particles) > MAX_PARTICLES:
                raise RuntimeError(
                    f"The dual exceeded {MAX_PARTICLES} particles at t={state.time:g} after {state.events} events"
                    f" ({state.branchings} branchings, {state.coalescences} coalescences)"
                )
        state.time = float(t_end)
        return state


def run_dual(
    dg: DiscretizedGraph, micro: MicroParams, sites: Sequence[Site], t_end: float, seed: Seed = 0
) -> DualState:
    process = DualProcess(dg, micro)
    return process.run(process.start(sites, seed), t_end)


def hypergeometric_survival(counts: np.ndarray, capacity: np.ndarray, occupancy: np.ndarray) -> float:
    """Probability that ``occupancy[x]`` distinct sites of every deme x all hold type 0, when ``counts[x]`` of the
    ``capacity[x]`` sites are type 1 and placed uniformly: ∏_x (M_x - k_x)_(m_x) / (M_x)_(m_x)."""
    value = 1.0
    for k, m, n in zip(counts, capacity, occupancy):
        if n > m:
            raise ValueError(f"{n} particles cannot occupy distinct sites of a deme with {m} sites")
        for j in range(int(n)):
            value *= (m - k - j) / (m - j)
    return value


def rounded_counts(dg: DiscretizedGraph, micro: MicroParams, u0: Union[DensityField, torch.Tensor]) -> np.ndarray:
    return BiasedVoterModel(dg, micro).init_state(u0).counts


def _check_probes(dg: DiscretizedGraph, probes: Sequence[int]) -> List[int]:
    probes = [int(p) for p in probes]
    if not probes:
        raise ValueError("At least one probe deme is required")
    off_graph = [p for p in probes if not 0 <= p < dg.num_demes]
    if off_graph:
        raise ValueError(f"Probe demes {off_graph} are not on the graph (it has {dg.num_demes} demes)")
    if len(set(probes)) != len(probes):
        raise ValueError(f"Probe demes must be distinct, got {probes}")
    return probes


@dataclass
class DualityReport:
    lhs: float
    """E ∏_i (1 - u_T(x_i)) from the voter model"""
    rhs: float
    """E H(dual configuration at T) from the dual"""
    lhs_stderr: float = 0.0
    rhs_stderr: float = 0.0
    replicates: int = 0
    exact: Optional[Tuple[float, float]] = None
    """(lhs, rhs) from the exact generators, when the instance is small enough"""
    probes: List[int] = field(default_factory=list)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.lhs_stderr**2 + self.rhs_stderr**2)

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def exact_gap(self) -> Optional[float]:
        return None if self.exact is None else abs(self.exact[0] - self.exact[1])

    def as_dict(self) -> Dict[str, object]:
        out = {
            "probes": self.probes,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "stderr": self.stderr,
            "replicates": self.replicates,
        }
        if self.exact is not None:
            out.update(exact_lhs=self.exact[0], exact_rhs=self.exact[1], exact_gap=self.exact_gap)
        return out

    def __str__(self) -> str:
        text = f"lhs={self.lhs:.6f}  rhs={self.rhs:.6f}  gap={self.gap:.3e}  stderr={self.stderr:.3e}"
        text += f"  (R={self.replicates})"
        if self.exact is not None:
            text += f"\nexact lhs={self.exact[0]:.12f}  exact rhs={self.exact[1]:.12f}  exact gap={self.exact_gap:.3e}"
        return text


def duality_gap_mc(
    dg: DiscretizedGraph,
    micro: MicroParams,
    u0: Union[DensityField, torch.Tensor],
    probes: Sequence[int],
    t_end: float,
    replicates: int = 1000,
    seed: Seed = 0,
    num_workers: int = 0,
) -> DualityReport:
    """Monte Carlo estimates of both sides of the duality identity.

    Arguments:
        dg: The discretized graph.
        micro: Particle rates.
        u0: Initial density, rounded to counts as in ``BiasedVoterModel.init_state``.
        probes: Distinct deme ids. The dual starts on slot 0 of each.
        t_end: Horizon, positive.
        replicates: Runs per side, at least 100.
        seed: Master seed; the two sides use independent spawned streams.
        num_workers: Worker processes for the voter-model side.
    """
    probes = _check_probes(dg, probes)
    if replicates < MIN_REPLICATES:
        raise ValueError(f"`replicates` must be at least {MIN_REPLICATES}, got {replicates}")
    if t_end <= 0:
        raise ValueError(f"`t_end` must be positive, got {t_end}")
    master = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    forward_seed, dual_seed = master.spawn(2)

    model = BiasedVoterModel(dg, micro)
    final = model.simulate(u0, t_end, replicates=replicates, seed=forward_seed, num_workers=num_workers).values[-1]
    forward = torch.prod(1 - final[:, probes], dim=1).numpy()

    counts = model.init_state(u0).counts
    process = DualProcess(dg, micro)
    backward = np.empty(replicates)
    dual_seeds = replicate_seeds(dual_seed, replicates)
    for r in tqdm(range(replicates), desc="Dual replicates", disable=None, leave=False):
        state = process.run(process.start([(p, 0) for p in probes], dual_seeds[r]), t_end)
        backward[r] = hypergeometric_survival(counts, model.capacity, state.occupancy(dg.num_demes))

    return DualityReport(
        lhs=float(forward.mean()),
        rhs=float(backward.mean()),
        lhs_stderr=float(forward.std(ddof=1) / math.sqrt(replicates)),
        rhs_stderr=float(backward.std(ddof=1) / math.sqrt(replicates)),
        replicates=replicates,
        probes=probes,
    )


def _site_bits(num_sites: int) -> torch.Tensor:
    return (torch.arange(2**num_sites)[:, None] >> torch.arange(num_sites)) & 1


def dual_generator(dg: DiscretizedGraph, micro: MicroParams, sparse: bool = False) -> torch.Tensor:
    """Generator of the dual on subsets of sites; bit i of a state index marks a particle on site i."""
    owner = site_demes(dg, micro)
    num_sites = len(owner)
    if num_sites > MAX_SITES:
        raise ValueError(f"The dual state space is capped at 2^{MAX_SITES} states, this instance has 2^{num_sites}")
    states = torch.arange(2**num_sites)
    bits = _site_bits(num_sites).bool()
    rows, cols, vals = [], [], []
    for p, (x, y, _) in enumerate(dg.pairs):
        a, b = float(micro.voter[p]), float(micro.bias[p])
        for z in torch.nonzero(owner == x).flatten().tolist():
            for w in torch.nonzero(owner == y).flatten().tolist():
                if a > 0:
                    moving = states[bits[:, z]]
                    rows.append(moving)
                    cols.append((moving & ~(1 << z)) | (1 << w))
                    vals.append(torch.full((len(moving),), a, dtype=torch.float64))
                if b > 0:
                    branching = states[bits[:, z] & ~bits[:, w]]
                    rows.append(branching)
                    cols.append(branching | (1 << w))
                    vals.append(torch.full((len(branching),), b, dtype=torch.float64))
    if not rows:
        rows, cols, vals = [torch.zeros(0, dtype=torch.long)] * 2 + [torch.zeros(0, dtype=torch.float64)]
    return assemble_generator(torch.cat(rows), torch.cat(cols), torch.cat(vals), 2**num_sites, sparse)


def exact_duality(
    dg: DiscretizedGraph, micro: MicroParams, u0: Union[DensityField, torch.Tensor], probes: Sequence[int], t_end: float
) -> Tuple[float, float]:
    """Both sides of the duality identity from independent matrix exponentials.

    The voter side starts from the uniform law over site configurations with the rounded counts, the dual side
    from one particle on slot 0 of every probe deme.
    """
    probes = _check_probes(dg, probes)
    if t_end < 0:
        raise ValueError(f"`t_end` must be nonnegative, got {t_end}")
    owner = site_demes(dg, micro)
    num_sites = len(owner)
    if num_sites > MAX_SITES:
        raise ValueError(f"The exact oracle is capped at 2^{MAX_SITES} states, this instance has 2^{num_sites}")
    sparse = 2**num_sites > 4096
    capacity = micro.deme_capacity(dg)
    counts = torch.from_numpy(rounded_counts(dg, micro, u0))
    first_site = torch.cat([torch.zeros(1, dtype=torch.long), torch.cumsum(capacity, 0)[:-1]])
    bits = _site_bits(num_sites)
    occupancy = torch.zeros(2**num_sites, dg.num_demes, dtype=torch.long).index_add_(1, owner, bits)

    placements = torch.tensor([math.comb(int(m), int(k)) for m, k in zip(capacity, counts)], dtype=torch.float64)
    initial = (occupancy == counts).all(dim=1).to(torch.float64) / placements.prod()
    probe_bits = bits[:, first_site[probes]]
    all_clear = (probe_bits == 0).all(dim=1).to(torch.float64)
    lhs = float(initial @ expm_action(site_generator(dg, micro, sparse=sparse), all_clear, t_end))

    # H(B) for every subset B, deme by deme
    survival = torch.ones(2**num_sites, dtype=torch.float64)
    for x in range(dg.num_demes):
        m, k = int(capacity[x]), int(counts[x])
        table = torch.tensor([math.perm(m - k, n) / math.perm(m, n) for n in range(m + 1)], dtype=torch.float64)
        survival *= table[occupancy[:, x]]
    start = int(sum(1 << int(first_site[p]) for p in probes))
    rhs = float(expm_action(dual_generator(dg, micro, sparse=sparse), survival, t_end)[start])
    return lhs, rhs


def duality_gap_exact(
    dg: DiscretizedGraph, micro: MicroParams, u0: Union[DensityField, torch.Tensor], probes: Sequence[int], t_end: float
) -> float:
    lhs, rhs = exact_duality(dg, micro, u0, probes, t_end)
    return abs(lhs - rhs)
