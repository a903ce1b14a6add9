# Licensed under the Apache License 2.0, see LICENSE file.

"""Single-resolution simulations of the biased voter model and of the SDE system."""
from pathlib import Path
from pprint import pprint
from typing import Literal, Optional

from graphfkpp.args import InitialCondition
from graphfkpp.bvm import BiasedVoterModel
from graphfkpp.config import GraphConfig
from graphfkpp.experiment import shared_dt
from graphfkpp.sde import SDEScheme, WhiteNoiseLattice
from graphfkpp.trajectory import EnsembleTable, Trajectory
from graphfkpp.utils import CLI, capture_hparams, init_out_dir, save_artifact


def _sample_times(t_end: float, samples: int) -> list:
    if not t_end > 0:
        raise ValueError(f"`--t_end` must be positive, got {t_end}")
    if samples < 2:
        raise ValueError(f"`--samples` must be at least 2, got {samples}")
    return [t_end * i / (samples - 1) for i in range(samples)]


def _save(trajectory: Trajectory, out_dir: Path, hparams: dict, seed: int) -> None:
    save_artifact(trajectory.to_frame(), out_dir / "trajectory.csv", hparams, seed)
    if trajectory.replicates > 1:
        save_artifact(EnsembleTable.from_trajectory(trajectory).to_frame(), out_dir / "ensemble.csv", hparams, seed)


def simulate_bvm(
    graph: str = "star-3",
    resolution: int = 8,
    t_end: float = 0.5,
    samples: int = 6,
    replicates: int = 1,
    seed: Optional[int] = None,
    num_workers: int = 0,
    out_dir: Path = Path("out/bvm"),
    initial: InitialCondition = InitialCondition(),
) -> None:
    """Simulate the biased voter model with rates derived from the graph's SPDE coefficients.

    Arguments:
        graph: Graph file path or built-in graph name.
        resolution: Demes per unit length.
        t_end: Final time.
        samples: Number of equally spaced sample times in [0, t_end].
        replicates: Independent replicates.
        seed: Master seed. Required.
        num_workers: Worker processes for replicates.
        out_dir: Directory for ``trajectory.csv`` (and ``ensemble.csv`` with several replicates).
        initial: Initial density profile, rounded to whole sites.
    """
    pprint(locals())
    if seed is None:
        raise ValueError("`--seed` is required for simulations")
    hparams = capture_hparams()
    out_dir = init_out_dir(out_dir)
    graph_config = GraphConfig.load(graph)
    dg = graph_config.discretize(resolution)
    model = BiasedVoterModel(dg, graph_config.micro(dg))
    trajectory = model.simulate(
        initial.profile(dg), t_end, _sample_times(t_end, samples), replicates, seed, num_workers
    )
    _save(trajectory, out_dir, hparams, seed)
    print(f"{trajectory.events} events over {replicates} replicate(s), saved to {str(out_dir)!r}")


def simulate_sde(
    graph: str = "star-3",
    resolution: int = 8,
    t_end: float = 0.5,
    samples: int = 6,
    dt: Optional[float] = None,
    replicates: int = 1,
    seed: Optional[int] = None,
    lattice_resolution: Optional[int] = None,
    integrator: Literal["euler", "mild"] = "euler",
    out_dir: Path = Path("out/sde"),
    initial: InitialCondition = InitialCondition(),
) -> None:
    """Integrate the interacting SDE system driven by a white-noise lattice.

    Arguments:
        graph: Graph file path or built-in graph name.
        resolution: Demes per unit length.
        t_end: Final time.
        samples: Number of equally spaced sample times in [0, t_end].
        dt: Step size. Defaults to the largest step under the stability guard that hits every sample time.
        replicates: Replicates, one white-noise realization each.
        seed: Lattice seed, an integer in [0, 2^64). Required.
        lattice_resolution: Resolution of the white-noise atoms. Defaults to ``resolution``; a multiple of it
            reproduces the increments another run at that resolution sees.
        integrator: ``euler`` (Euler-Maruyama) or ``mild`` (noiseless exponential integrator).
        out_dir: Directory for ``trajectory.csv`` (and ``ensemble.csv`` with several replicates).
        initial: Initial density profile.
    """
    pprint(locals())
    if seed is None:
        raise ValueError("`--seed` is required for simulations")
    hparams = capture_hparams()
    out_dir = init_out_dir(out_dir)
    graph_config = GraphConfig.load(graph)
    dg = graph_config.discretize(resolution)
    scheme = SDEScheme(dg, graph_config.macro())
    sample_times = _sample_times(t_end, samples)
    dt = shared_dt([scheme], t_end, samples, dt)
    lattice = WhiteNoiseLattice.for_graph(
        dg.graph, lattice_resolution or resolution, seed=seed, replicates=replicates
    )
    trajectory = scheme.run(initial.profile(dg), t_end, dt, lattice, sample_times, integrator=integrator)
    _save(trajectory, out_dir, hparams, seed)
    print(f"{round(t_end / dt)} steps of dt={dt:.3e} over {replicates} replicate(s), saved to {str(out_dir)!r}")


if __name__ == "__main__":
    CLI([simulate_bvm, simulate_sde])
