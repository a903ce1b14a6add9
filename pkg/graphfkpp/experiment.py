# Licensed under the Apache License 2.0, see LICENSE file.

"""Convergence studies across resolution ladders and front-speed estimation."""
import math
import pprint
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional

import lightning as L
import numpy as np
import pandas as pd
import torch

from graphfkpp.args import ExperimentConfig, InitialCondition
from graphfkpp.bvm import BiasedVoterModel
from graphfkpp.config import GraphConfig
from graphfkpp.metric_graph import graph_norm
from graphfkpp.random_walk import SPDE_TIME_SCALE, HeatKernelReport, kernel_diagnostics, walk_rates
from graphfkpp.scaling import conductances
from graphfkpp.sde import SDEScheme, WhiteNoiseLattice, coupling_distance
from graphfkpp.trajectory import EnsembleTable, Trajectory
from graphfkpp.utils import capture_hparams, choose_logger, init_out_dir, save_artifact, save_report


@dataclass
class LevelResult:
    resolution: int
    num_demes: int
    capacity: Dict[str, int]
    distance: float
    """Sup-norm distance between the BVM and SDE ensemble means at t_end"""
    pooled_stderr: float
    """Largest √(se_bvm² + se_sde²) over demes at t_end"""
    bvm_events: int
    seconds: float = 0.0
    """Wall-clock time of the level, kept out of every written file"""


@dataclass
class ConvergenceReport:
    levels: List[LevelResult]
    coupling: List[float]
    """SDE self-coupling error between consecutive levels"""
    dt: float
    kernel: Optional[HeatKernelReport] = None

    def distances(self) -> List[float]:
        return [level.distance for level in self.levels]

    def nonincreasing(self, sigmas: float = 2.0) -> bool:
        """Distances never grow by more than ``sigmas`` pooled standard errors from one level to the next."""
        for coarse, fine in zip(self.levels[:-1], self.levels[1:]):
            slack = sigmas * math.sqrt(coarse.pooled_stderr**2 + fine.pooled_stderr**2)
            if fine.distance > coarse.distance + slack:
                return False
        return True

    def to_frame(self) -> pd.DataFrame:
        coupling = self.coupling + [float("nan")]
        return pd.DataFrame(
            {
                "resolution": [level.resolution for level in self.levels],
                "num_demes": [level.num_demes for level in self.levels],
                "distance": self.distances(),
                "pooled_stderr": [level.pooled_stderr for level in self.levels],
                "coupling_to_next": coupling,
                "bvm_events": [level.bvm_events for level in self.levels],
            }
        )

    def as_dict(self) -> Dict[str, object]:
        levels = []
        for level in self.levels:
            entry = asdict(level)
            del entry["seconds"]
            levels.append(entry)
        out = {"dt": self.dt, "levels": levels, "coupling": list(self.coupling)}
        if self.kernel is not None:
            out["kernel"] = self.kernel.summary()
        return out


def _lattice_key(seed: np.random.SeedSequence) -> int:
    low, high = seed.generate_state(2, dtype=np.uint64)
    return int(low) | (int(high) << 64)


def shared_dt(schemes: List[SDEScheme], t_end: float, samples: int, dt: Optional[float] = None) -> float:
    """Largest step that satisfies every level's guard and puts the sample times on the step grid."""
    if dt is not None:
        return dt
    bound = min(scheme.max_stable_dt for scheme in schemes)
    interval = t_end / (samples - 1)
    return interval / math.ceil(interval / bound)


def run_experiment(config: ExperimentConfig, fabric: Optional[L.Fabric] = None) -> ConvergenceReport:
    """BVM and SDE ensembles at every ladder level, compared through the sup norm of their mean fields.

    Arguments:
        config: The experiment. Its ``out_dir`` receives one directory per level plus the summary tables.
        fabric: Used for seeding, printing and metric logging. A CPU Fabric with a CSV logger is created if omitted.
    """
    out_dir = init_out_dir(config.out_dir)
    if fabric is None:
        fabric = L.Fabric(accelerator="cpu", devices=1, loggers=[choose_logger("csv", out_dir)])
        fabric.launch()
    fabric.seed_everything(config.seed)
    hparams = asdict(config)
    hparams["out_dir"] = str(config.out_dir)

    graph_config = GraphConfig.load(config.graph)
    macro = graph_config.macro()
    dgs = [graph_config.discretize(level) for level in config.ladder]
    schemes = [SDEScheme(dg, macro) for dg in dgs]
    sample_times = config.sample_times()
    dt = shared_dt(schemes, config.t_end, config.samples, config.dt)
    fabric.print(f"Graph {graph_config.name or config.graph!r}, ladder {config.ladder}, dt={dt:.3e}")

    master = np.random.SeedSequence(config.seed)
    lattice_seed, *level_seeds = master.spawn(len(config.ladder) + 1)
    lattice = WhiteNoiseLattice.for_graph(
        dgs[-1].graph, config.ladder[-1], seed=_lattice_key(lattice_seed), replicates=config.sde_replicates
    )

    levels: List[LevelResult] = []
    sde_runs: List[Trajectory] = []
    for i, (resolution, dg, scheme) in enumerate(zip(config.ladder, dgs, schemes)):
        t0 = time.perf_counter()
        try:
            micro = graph_config.micro(dg)
        except ValueError as ex:
            raise ValueError(f"Level L={resolution}: {ex}") from ex
        u0 = config.initial.profile(dg)
        bvm = BiasedVoterModel(dg, micro).simulate(
            u0, config.t_end, sample_times, config.bvm_replicates, level_seeds[i], config.num_workers
        )
        sde = scheme.run(u0, config.t_end, dt, lattice, sample_times)
        sde_runs.append(sde)
        bvm_table, sde_table = EnsembleTable.from_trajectory(bvm), EnsembleTable.from_trajectory(sde)

        distance = graph_norm(bvm_table.mean_field(-1), sde_table.mean_field(-1))
        pooled = float((bvm_table.stderr[-1] ** 2 + sde_table.stderr[-1] ** 2).sqrt().max())
        level_dir = out_dir / f"level-L{resolution}"
        save_artifact(bvm_table.to_frame(), level_dir / "bvm_ensemble.csv", hparams, config.seed)
        save_artifact(sde_table.to_frame(), level_dir / "sde_ensemble.csv", hparams, config.seed)
        levels.append(
            LevelResult(
                resolution=resolution,
                num_demes=dg.num_demes,
                capacity=dict(micro.capacity),
                distance=distance,
                pooled_stderr=pooled,
                bvm_events=bvm.events,
                seconds=time.perf_counter() - t0,
            )
        )
        metrics = {"distance": distance, "pooled_stderr": pooled, "resolution": float(resolution)}
        if i > 0:
            metrics["coupling"] = coupling_distance(sde_runs[i - 1], sde)
        fabric.log_dict(metrics, step=i)
        fabric.print(
            f"L={resolution}: distance {distance:.4f} ± {pooled:.4f}, {bvm.events} BVM events,"
            f" {levels[-1].seconds:.2f}s"
        )

    coupling = [coupling_distance(coarse, fine) for coarse, fine in zip(sde_runs[:-1], sde_runs[1:])]
    kernel_report = None
    if config.kernel_times and len(dgs) > 1:
        generators = [walk_rates(dg, conductances(dg, macro.alpha), SPDE_TIME_SCALE) for dg in dgs]
        kernel_report = kernel_diagnostics(dgs, generators, config.kernel_times)
        save_artifact(kernel_report.to_frame(), out_dir / "kernel_constants.csv", hparams, config.seed)

    report = ConvergenceReport(levels=levels, coupling=coupling, dt=dt, kernel=kernel_report)
    save_artifact(report.to_frame(), out_dir / "convergence.csv", hparams, config.seed)
    save_report(report.as_dict(), out_dir / "report.yaml")
    fabric.logger.finalize("success")
    return report


def converge(
    graph: str = "star-3",
    ladder: List[int] = [8, 16, 32],
    t_end: float = 0.5,
    samples: int = 5,
    bvm_replicates: int = 400,
    sde_replicates: int = 400,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    kernel_times: List[float] = [0.05, 0.1, 0.25, 0.5],
    num_workers: int = 0,
    out_dir: Path = Path("out/converge"),
    initial: InitialCondition = InitialCondition(),
) -> None:
    """Compare BVM and SDE ensemble means over a ladder of resolutions.

    Arguments:
        graph: Graph file path or built-in graph name.
        ladder: Demes per unit length at every level, strictly increasing, each dividing the next.
        t_end: Time horizon.
        samples: Number of equally spaced sample times in [0, t_end].
        bvm_replicates: BVM replicates per level.
        sde_replicates: SDE replicates per level, driven by one shared white-noise lattice.
        seed: Master seed. Required.
        dt: SDE step size. Defaults to the stability bound of the finest level.
        kernel_times: Times for the heat-kernel constants. Pass ``[]`` to skip them.
        num_workers: Worker processes for BVM replicates.
        out_dir: Directory for CSV artifacts, the YAML report and logs.
        initial: Initial density profile. See ``graphfkpp.args.InitialCondition``.
    """
    pprint.pprint(locals())
    if seed is None:
        raise ValueError("`--seed` is required for simulations")
    config = ExperimentConfig(
        graph=graph,
        ladder=list(ladder),
        t_end=t_end,
        samples=samples,
        bvm_replicates=bvm_replicates,
        sde_replicates=sde_replicates,
        seed=seed,
        dt=dt,
        kernel_times=list(kernel_times),
        num_workers=num_workers,
        out_dir=out_dir,
        initial=initial,
    )
    report = run_experiment(config)
    trend = "nonincreasing" if report.nonincreasing() else "NOT nonincreasing"
    print(f"Distances {['%.4f' % d for d in report.distances()]} are {trend} within 2 pooled standard errors")
    if report.coupling:
        print(f"SDE self-coupling errors between consecutive levels: {['%.3e' % c for c in report.coupling]}")


@dataclass
class FrontSpeed:
    speed: float
    """Mean least-squares slope over replicates"""
    stderr: float
    per_replicate: List[float]
    threshold: float
    edge: str
    times: torch.Tensor
    positions: torch.Tensor
    """[times, replicates] rightmost crossing positions, NaN where the front is absent"""

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in range(self.positions.shape[1]):
            for t, x in zip(self.times.tolist(), self.positions[:, r].tolist()):
                rows.append((r, t, x))
        return pd.DataFrame(rows, columns=["replicate", "time", "position"])


def front_position(values: torch.Tensor, coordinates: torch.Tensor, threshold: float) -> float:
    """sup{x: u(x) >= c} along one edge with linear interpolation between demes; NaN if u < c everywhere."""
    above = torch.nonzero(values >= threshold).flatten()
    if not len(above):
        return float("nan")
    i = int(above[-1])
    if i == len(values) - 1:
        return float(coordinates[i])
    u_left, u_right = float(values[i]), float(values[i + 1])
    weight = (u_left - threshold) / (u_left - u_right)
    return float(coordinates[i] + weight * (coordinates[i + 1] - coordinates[i]))


def front_speed(
    trajectory: Trajectory, threshold: float = 0.5, edge: Optional[str] = None, window: float = 0.5
) -> FrontSpeed:
    """Least-squares slope of the front position against time over the last ``window`` of the horizon.

    Arguments:
        trajectory: Densities on a graph whose ``edge`` carries the front, coordinates from its source vertex.
        threshold: Level c in (0, 1) defining the front.
        edge: Edge id. Defaults to the first edge.
        window: Fraction of the horizon, counted back from the last sample, used for the fit.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"`threshold` must lie in (0, 1), got {threshold}")
    if not 0 < window <= 1:
        raise ValueError(f"`window` must lie in (0, 1], got {window}")
    dg = trajectory.dg
    edge = edge if edge is not None else dg.graph.edge_names[0]
    dg.graph.edge(edge)
    demes = list(dg.edge_demes[edge])
    coordinates = torch.tensor([float(dg.coordinates[x]) for x in demes], dtype=torch.float64)

    times = trajectory.times
    positions = torch.tensor(
        [
            [
                front_position(trajectory.values[i, r, demes], coordinates, threshold)
                for r in range(trajectory.replicates)
            ]
            for i in range(len(times))
        ],
        dtype=torch.float64,
    )
    start = times[0] + (1 - window) * (times[-1] - times[0])
    fitted = times >= start - 1e-12
    if int(fitted.sum()) < 2:
        raise ValueError("The fit window holds fewer than 2 sample times")

    slopes = []
    for r in range(trajectory.replicates):
        ts, xs = times[fitted], positions[fitted, r]
        formed = ~torch.isnan(xs)
        if int(formed.sum()) < 2:
            raise ValueError(
                f"The front at level {threshold} never forms on edge {edge!r} in replicate {r}: densities stay below it"
            )
        ts, xs = ts[formed], xs[formed]
        design = torch.stack([torch.ones_like(ts), ts], dim=1)
        slopes.append(float(torch.linalg.lstsq(design, xs.unsqueeze(1)).solution[1, 0]))
    speeds = torch.tensor(slopes, dtype=torch.float64)
    stderr = float(speeds.std(correction=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else 0.0
    return FrontSpeed(
        speed=float(speeds.mean()),
        stderr=stderr,
        per_replicate=slopes,
        threshold=threshold,
        edge=edge,
        times=times,
        positions=positions,
    )


def measure_front_speed(
    graph: str = "front-40",
    model: Literal["sde", "bvm"] = "sde",
    resolution: int = 16,
    t_end: float = 15.0,
    samples: int = 61,
    dt: Optional[float] = None,
    threshold: float = 0.5,
    edge: Optional[str] = None,
    replicates: int = 1,
    seed: Optional[int] = None,
    out_dir: Path = Path("out/front_speed"),
    initial: InitialCondition = InitialCondition(kind="step", position=4.0),
) -> FrontSpeed:
    """Estimate the asymptotic speed of a front moving along one edge.

    Arguments:
        graph: Graph file path or built-in graph name.
        model: ``sde`` integrates the SDE system (deterministic when every gamma is 0), ``bvm`` simulates the
            biased voter model.
        resolution: Demes per unit length.
        t_end: Time horizon.
        samples: Number of equally spaced sample times in [0, t_end].
        dt: SDE step size. Defaults to the stability bound.
        threshold: Density level c in (0, 1) tracked as the front.
        edge: Edge carrying the front. Defaults to the first edge.
        replicates: Independent replicates; the reported speed is their mean.
        seed: Master seed. Required.
        out_dir: Directory for the position table and the YAML report.
        initial: Initial density profile, normally a left block on ``edge``.
    """
    pprint.pprint(locals())
    if seed is None:
        raise ValueError("`--seed` is required for simulations")
    if samples < 3:
        raise ValueError(f"`--samples` must be at least 3, got {samples}")
    hparams = capture_hparams()
    out_dir = init_out_dir(out_dir)
    graph_config = GraphConfig.load(graph)
    dg = graph_config.discretize(resolution)
    u0 = initial.profile(dg)
    sample_times = [t_end * i / (samples - 1) for i in range(samples)]

    if model == "bvm":
        trajectory = BiasedVoterModel(dg, graph_config.micro(dg)).simulate(u0, t_end, sample_times, replicates, seed)
    elif model == "sde":
        scheme = SDEScheme(dg, graph_config.macro())
        step = shared_dt([scheme], t_end, samples, dt)
        lattice = None
        if not scheme.noiseless:
            lattice = WhiteNoiseLattice.for_graph(
                dg.graph, resolution, seed=_lattice_key(np.random.SeedSequence(seed)), replicates=replicates
            )
        trajectory = scheme.run(u0, t_end, step, lattice, sample_times)
    else:
        raise ValueError(f"`--model` must be 'sde' or 'bvm', got {model!r}")

    result = front_speed(trajectory, threshold, edge)
    save_artifact(result.to_frame(), out_dir / "front_positions.csv", hparams, seed)
    save_report(
        {"model": model, "speed": result.speed, "stderr": result.stderr, "per_replicate": result.per_replicate},
        out_dir / "front_speed.yaml",
    )
    print(f"Front speed at level {threshold} on edge {result.edge!r}: {result.speed:.4f} ± {result.stderr:.4f}")
    return result
