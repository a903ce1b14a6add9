# Licensed under the Apache License 2.0, see LICENSE file.

"""Transition densities of the conductance walk and their heat-kernel constants."""
from pathlib import Path
from pprint import pprint
from typing import List, Optional

import pandas as pd

from graphfkpp.config import GraphConfig
from graphfkpp.random_walk import kernel, kernel_diagnostics, walk_rates
from graphfkpp.scaling import ThetaKind, conductances
from graphfkpp.utils import CLI, capture_hparams, init_out_dir, save_artifact


def compute_kernel(
    graph: str = "star-3",
    resolution: int = 8,
    t: float = 0.5,
    time_scale: float = 1.0,
    theta: ThetaKind = "geometric",
    theta_power: Optional[float] = None,
    tol: float = 1e-12,
    ladder: Optional[List[int]] = None,
    times: List[float] = [0.1, 0.5, 1.0],
    out_dir: Path = Path("out/kernel"),
) -> None:
    """Write p^n(t, x, y) for every pair of demes and, optionally, heat-kernel constants over a ladder.

    Arguments:
        graph: Graph file path or built-in graph name.
        resolution: Demes per unit length.
        t: Time at which the kernel is evaluated.
        time_scale: Multiplies every jump rate. 2 matches the SPDE generator.
        theta: Mean used for conductances across vertices.
        theta_power: Exponent of the power mean.
        tol: Poisson tail cutoff of the uniformization.
        ladder: Resolutions for ``kernel_constants.csv``. Skipped unless two or more are given.
        times: Times at which the heat-kernel constants are fitted.
        out_dir: Directory for ``kernel.csv`` and ``kernel_constants.csv``.
    """
    pprint(locals())
    hparams = capture_hparams()
    out_dir = init_out_dir(out_dir)
    graph_config = GraphConfig.load(graph)
    alpha = graph_config.macro().alpha

    def generator(dg):
        return walk_rates(dg, conductances(dg, alpha, theta, theta_power), time_scale)

    dg = graph_config.discretize(resolution)
    result = kernel(generator(dg), dg, t, tol)
    density = result.density
    n = dg.num_demes
    frame = pd.DataFrame(
        {
            "x": [x for x in range(n) for _ in range(n)],
            "y": list(range(n)) * n,
            "edge_x": [dg.deme_edge[x] for x in range(n) for _ in range(n)],
            "edge_y": list(dg.deme_edge) * n,
            "density": density.flatten().tolist(),
        }
    )
    save_artifact(frame, out_dir / "kernel.csv", hparams, None)
    row_error = float((result.row_mass - 1).abs().max())
    print(f"{n} demes, t={t}: max asymmetry {result.max_asymmetry:.3e}, max |row mass - 1| {row_error:.3e}")

    if ladder is not None and len(ladder) >= 2:
        dgs = [graph_config.discretize(level) for level in ladder]
        report = kernel_diagnostics(dgs, [generator(level) for level in dgs], times)
        save_artifact(report.to_frame(), out_dir / "kernel_constants.csv", hparams, None)
        for name in ("c1", "c5"):
            print(f"{name} spread across {ladder}: {report.spread(name):.3f}")


if __name__ == "__main__":
    CLI(compute_kernel)
