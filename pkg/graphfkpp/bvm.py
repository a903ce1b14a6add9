# Licensed under the Apache License 2.0, see LICENSE file.

"""Exact event-driven simulation of the biased voter model through its lumped per-deme counts."""
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from numba import njit
from tqdm import tqdm

from graphfkpp.metric_graph import DensityField, DiscretizedGraph
from graphfkpp.random_walk import expm_action
from graphfkpp.scaling import MicroParams
from graphfkpp.trajectory import EnsembleTable, Trajectory
from graphfkpp.utils import Seed, philox_generator, replicate_seeds

# largest site count for the exact site-level generator (2^16 states)
MAX_SITES = 16


@njit(cache=True)
def _deme_rates(x, counts, indptr, sources, voter, bias, capacity):
    gain = 0.0
    loss = 0.0
    for j in range(indptr[x], indptr[x + 1]):
        y = sources[j]
        gain += counts[y] * (voter[j] + bias[j])
        loss += (capacity[y] - counts[y]) * voter[j]
    return (capacity[x] - counts[x]) * gain, counts[x] * loss


@njit(cache=True)
def _all_rates(counts, indptr, sources, voter, bias, capacity):
    n = counts.shape[0]
    up = np.empty(n)
    down = np.empty(n)
    for x in range(n):
        up[x], down[x] = _deme_rates(x, counts, indptr, sources, voter, bias, capacity)
    return up, down


@njit(cache=True)
def _gillespie(counts, indptr, sources, voter, bias, capacity, t, t_end, sample_times, snapshots, rng):
    n = counts.shape[0]
    up, down = _all_rates(counts, indptr, sources, voter, bias, capacity)
    num_samples = sample_times.shape[0]
    next_sample = 0
    events = 0
    while True:
        total = 0.0
        for x in range(n):
            total += up[x] + down[x]
        if not np.isfinite(total):
            return t, events, 1
        if total > 0.0:
            t_next = t - math.log(1.0 - rng.random()) / total
        else:
            t_next = np.inf
        # the state is constant on [t, t_next)
        while next_sample < num_samples and sample_times[next_sample] < t_next:
            snapshots[next_sample, :] = counts
            next_sample += 1
        if t_next > t_end:
            return t_end, events, 0

        target = rng.random() * total
        acc = 0.0
        chosen = -1
        grow = True
        for x in range(n):
            acc += up[x]
            if target < acc:
                chosen = x
                grow = True
                break
            acc += down[x]
            if target < acc:
                chosen = x
                grow = False
                break
        if chosen < 0:
            # rounding pushed the draw past the last bucket
            for x in range(n - 1, -1, -1):
                if down[x] > 0.0:
                    chosen = x
                    grow = False
                    break
                if up[x] > 0.0:
                    chosen = x
                    grow = True
                    break
        if grow:
            counts[chosen] += 1
        else:
            counts[chosen] -= 1

        up[chosen], down[chosen] = _deme_rates(chosen, counts, indptr, sources, voter, bias, capacity)
        for j in range(indptr[chosen], indptr[chosen + 1]):
            z = sources[j]
            up[z], down[z] = _deme_rates(z, counts, indptr, sources, voter, bias, capacity)
        t = t_next
        events += 1


@dataclass
class BVMState:
    counts: np.ndarray
    """Type-1 sites per deme"""
    capacity: np.ndarray
    """Sites per deme"""
    time: float
    rng: np.random.Generator
    events: int = 0

    def __post_init__(self) -> None:
        if self.counts.shape != self.capacity.shape:
            raise ValueError("`counts` and `capacity` must have the same shape")
        if (self.counts < 0).any() or (self.counts > self.capacity).any():
            raise ValueError("Counts must lie in [0, capacity] on every deme")

    @property
    def density(self) -> torch.Tensor:
        return torch.from_numpy(self.counts / self.capacity)


class BiasedVoterModel:
    """The lumped biased voter model on a discretized graph.

    Rates are stored in compressed rows by target deme: row x lists the neighbor demes y with the per-site-pair
    copy rates a_{x<-y} and b_{x<-y}.
    """

    def __init__(self, dg: DiscretizedGraph, micro: MicroParams) -> None:
        if len(micro.voter) != len(dg.pairs):
            raise ValueError("Micro parameters were built for a different discretization")
        self.dg = dg
        self.micro = micro
        pairs = dg.pair_tensor.numpy()
        self.indptr = np.zeros(dg.num_demes + 1, dtype=np.int64)
        np.add.at(self.indptr, pairs[:, 0] + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.sources = pairs[:, 1].astype(np.int64)
        self.voter = micro.voter.numpy().astype(np.float64)
        self.bias = micro.bias.numpy().astype(np.float64)
        self.capacity = micro.deme_capacity(dg).numpy().astype(np.int64)

    def init_state(self, u0: Union[DensityField, torch.Tensor], seed: Seed = 0, time: float = 0.0) -> BVMState:
        """k_x = round(u0(x)·M_x), halves rounded up."""
        values = u0.deme_values if isinstance(u0, DensityField) else torch.as_tensor(u0, dtype=torch.float64)
        values = values.numpy()
        if values.shape != self.capacity.shape or values.min() < 0 or values.max() > 1:
            raise ValueError("Initial density must give one value in [0, 1] per deme")
        counts = np.floor(values * self.capacity + 0.5).astype(np.int64)
        return BVMState(counts=counts, capacity=self.capacity.copy(), time=float(time), rng=philox_generator(seed))

    def lumped_rates(self, state: BVMState) -> Tuple[np.ndarray, np.ndarray]:
        """Per-deme rates of gaining and losing one type-1 site."""
        return _all_rates(state.counts, self.indptr, self.sources, self.voter, self.bias, self.capacity)

    def expected_event_rate(self, state: BVMState) -> float:
        up, down = self.lumped_rates(state)
        return float(up.sum() + down.sum())

    def run(self, state: BVMState, t_end: float, sample_times: Optional[Sequence[float]] = None) -> Trajectory:
        """Advances ``state`` in place to ``t_end`` and returns densities at the sample times.

        Arguments:
            state: Initial state, mutated.
            t_end: Final time.
            sample_times: Strictly increasing times in [state.time, t_end]. Defaults to (state.time, t_end).
        """
        if t_end <= state.time:
            raise ValueError(f"`t_end` must exceed the current time {state.time}, got {t_end}")
        times = _sample_grid(state.time, t_end, sample_times)
        snapshots = np.zeros((len(times), len(state.counts)), dtype=np.int64)
        t, events, status = _gillespie(
            state.counts, self.indptr, self.sources, self.voter, self.bias, self.capacity,
            float(state.time), float(t_end), times, snapshots, state.rng,
        )
        if status:
            raise RuntimeError(f"The total event rate became nonfinite at t={t} after {events} events")
        state.time = t
        state.events += events
        values = torch.from_numpy(snapshots / self.capacity[None, :])
        return Trajectory(self.dg, torch.from_numpy(times), values, events=events)

    def fixation(self, state: BVMState, t_max: float, chunk: float = 1.0) -> Optional[int]:
        """Runs until every site holds the same type. Returns that type, or None if ``t_max`` passes first."""
        while True:
            if not state.counts.any():
                return 0
            if (state.counts == self.capacity).all():
                return 1
            if state.time >= t_max:
                return None
            self.run(state, min(state.time + chunk, t_max))

    def _replicate(self, args: Tuple[torch.Tensor, Seed, float, np.ndarray]) -> Trajectory:
        u0, seed, t_end, times = args
        return self.run(self.init_state(u0, seed), t_end, times)

    def simulate(
        self,
        u0: Union[DensityField, torch.Tensor],
        t_end: float,
        sample_times: Optional[Sequence[float]] = None,
        replicates: int = 1,
        seed: Union[Seed, Sequence[Seed]] = 0,
        num_workers: int = 0,
    ) -> Trajectory:
        """Independent replicates stacked into one trajectory of shape [times, replicates, demes].

        Arguments:
            u0: Initial density.
            t_end: Final time.
            sample_times: Sample grid, see ``run``.
            replicates: Number of replicates.
            seed: Master seed, or one seed per replicate.
            num_workers: Worker processes for replicates. 0 runs them in this process.
        """
        if replicates < 1:
            raise ValueError(f"`replicates` must be at least 1, got {replicates}")
        seeds = replicate_seeds(seed, replicates)
        values = u0.deme_values if isinstance(u0, DensityField) else torch.as_tensor(u0, dtype=torch.float64)
        times = _sample_grid(0.0, t_end, sample_times)
        jobs = [(values, s, t_end, times) for s in seeds]
        if num_workers > 0:
            with ProcessPoolExecutor(max_workers=num_workers) as pool:
                runs: List[Trajectory] = list(pool.map(self._replicate, jobs))
        else:
            runs = [self._replicate(job) for job in tqdm(jobs, desc="BVM replicates", disable=None, leave=False)]
        stacked = torch.cat([run.values for run in runs], dim=1)
        return Trajectory(self.dg, runs[0].times, stacked, events=sum(run.events for run in runs))

    def ensemble(
        self,
        u0: Union[DensityField, torch.Tensor],
        t_end: float,
        sample_times: Optional[Sequence[float]] = None,
        replicates: int = 1,
        seed: Union[Seed, Sequence[Seed]] = 0,
        num_workers: int = 0,
    ) -> EnsembleTable:
        """Mean, variance and standard error per (time, deme) across replicates."""
        return EnsembleTable.from_trajectory(self.simulate(u0, t_end, sample_times, replicates, seed, num_workers))


def _sample_grid(start: float, t_end: float, sample_times: Optional[Sequence[float]]) -> np.ndarray:
    if sample_times is None:
        return np.array([start, t_end], dtype=np.float64)
    times = np.asarray(sample_times, dtype=np.float64)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("`sample_times` must be a non-empty 1-d sequence")
    if (np.diff(times) <= 0).any():
        raise ValueError("`sample_times` must be strictly increasing")
    if times[0] < start or times[-1] > t_end:
        raise ValueError(f"`sample_times` must lie in [{start}, {t_end}]")
    return times


def site_demes(dg: DiscretizedGraph, micro: MicroParams) -> torch.Tensor:
    """Deme of every site, sites of one deme numbered consecutively."""
    capacity = micro.deme_capacity(dg)
    return torch.repeat_interleave(torch.arange(dg.num_demes), capacity)


def site_generator(dg: DiscretizedGraph, micro: MicroParams, sparse: bool = False) -> torch.Tensor:
    """Generator of the site-level chain on {0,1}^sites; bit i of a state index is the type of site i.

    Site z copies site w (w in a neighbor deme) at rate a, and copies a type-1 w at extra rate b.
    """
    owner = site_demes(dg, micro)
    num_sites = len(owner)
    if num_sites > MAX_SITES:
        raise ValueError(
            f"The site-level state space is capped at 2^{MAX_SITES} states, this instance has 2^{num_sites}"
        )
    states = torch.arange(2**num_sites)
    bits = ((states[:, None] >> torch.arange(num_sites)) & 1).to(torch.float64)
    rows, cols, vals = [], [], []
    for p, (x, y, _) in enumerate(dg.pairs):
        a, b = float(micro.voter[p]), float(micro.bias[p])
        for z in torch.nonzero(owner == x).flatten().tolist():
            for w in torch.nonzero(owner == y).flatten().tolist():
                disagree = (bits[:, z] - bits[:, w]).abs()
                rate = a * disagree + b * bits[:, w] * (1 - bits[:, z])
                mask = rate > 0
                rows.append(states[mask])
                cols.append(states[mask] ^ (1 << z))
                vals.append(rate[mask])
    return assemble_generator(torch.cat(rows), torch.cat(cols), torch.cat(vals), 2**num_sites, sparse)


def assemble_generator(
    rows: torch.Tensor, cols: torch.Tensor, vals: torch.Tensor, size: int, sparse: bool
) -> torch.Tensor:
    exit_rates = torch.zeros(size, dtype=torch.float64).index_add_(0, rows, vals)
    diagonal = torch.arange(size)
    indices = torch.stack([torch.cat([rows, diagonal]), torch.cat([cols, diagonal])])
    values = torch.cat([vals, -exit_rates])
    q = torch.sparse_coo_tensor(indices, values, (size, size), check_invariants=False).coalesce()
    return q if sparse else q.to_dense()


def lumped_generator(dg: DiscretizedGraph, micro: MicroParams) -> Tuple[torch.Tensor, torch.Tensor]:
    """Generator of the count chain and the count vector of every state (mixed-radix order)."""
    model = BiasedVoterModel(dg, micro)
    capacity = model.capacity
    radix = np.concatenate([[1], np.cumprod(capacity[:-1] + 1)]).astype(np.int64)
    states = np.array(list(itertools.product(*[range(m + 1) for m in capacity[::-1]])))[:, ::-1].astype(np.int64)
    size = len(states)
    q = torch.zeros(size, size, dtype=torch.float64)
    for counts in states:
        index = int(counts @ radix)
        up, down = _all_rates(counts, model.indptr, model.sources, model.voter, model.bias, capacity)
        for x in range(len(counts)):
            if up[x] > 0:
                q[index, index + radix[x]] += up[x]
            if down[x] > 0:
                q[index, index - radix[x]] += down[x]
        q[index, index] = -(up.sum() + down.sum())
    return q, torch.from_numpy(states)


def lumping_error(dg: DiscretizedGraph, micro: MicroParams) -> float:
    """max |(Q_site·1_class)(η, k) - Q_lumped(k(η), k)| over site states η and count classes k."""
    site_q = site_generator(dg, micro)
    lumped_q, _ = lumped_generator(dg, micro)
    owner = site_demes(dg, micro)
    capacity = micro.deme_capacity(dg)
    radix = torch.cat([torch.ones(1, dtype=torch.long), torch.cumprod(capacity[:-1] + 1, 0)])
    num_sites = len(owner)
    bits = (torch.arange(2**num_sites)[:, None] >> torch.arange(num_sites)) & 1
    counts = torch.zeros(2**num_sites, dg.num_demes, dtype=torch.long).index_add_(1, owner, bits)
    # class index of every site state in the mixed-radix order of lumped_generator
    classes = counts @ radix
    indicator = torch.nn.functional.one_hot(classes, num_classes=lumped_q.shape[0]).to(torch.float64)
    projected = site_q @ indicator
    return float((projected - lumped_q[classes]).abs().max())


def voter_mean_generator(dg: DiscretizedGraph, micro: MicroParams) -> torch.Tensor:
    """Q_dual with q(x -> y) = M_y·a_{x<-y}: the pure voter mean solves d/dt E[u] = Q_dual E[u]."""
    capacity = micro.deme_capacity(dg).to(torch.float64)
    pairs = dg.pair_tensor
    q = torch.zeros(dg.num_demes, dg.num_demes, dtype=torch.float64)
    q.index_put_((pairs[:, 0], pairs[:, 1]), capacity[pairs[:, 1]] * micro.voter, accumulate=True)
    q -= torch.diag(q.sum(dim=1))
    return q


def voter_mean(dg: DiscretizedGraph, micro: MicroParams, u0: torch.Tensor, t: float) -> torch.Tensor:
    """exp(t·Q_dual)·u0, the exact mean density of the unbiased voter model."""
    return expm_action(voter_mean_generator(dg, micro), torch.as_tensor(u0, dtype=torch.float64), t)
