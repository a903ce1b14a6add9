# Licensed under the Apache License 2.0, see LICENSE file.

"""Checks a discretization's particle rates against the scaling conditions."""
import sys
from pathlib import Path
from pprint import pprint
from typing import Dict, List, Optional

import pandas as pd

from graphfkpp.config import GraphConfig
from graphfkpp.scaling import ThetaKind, validate_sequence, with_capacity
from graphfkpp.utils import CLI, capture_hparams, init_out_dir, save_artifact


def validate(
    graph: str = "star-3",
    resolution: int = 8,
    ladder: Optional[List[int]] = None,
    capacity: Optional[Dict[str, int]] = None,
    theta: ThetaKind = "geometric",
    theta_power: Optional[float] = None,
    tol: float = 1e-9,
    out_dir: Optional[Path] = None,
) -> None:
    """Build particle rates from the graph's SPDE coefficients and report the residual of every scaling condition.

    Exits with status 1 if any condition fails at any level.

    Arguments:
        graph: Graph file path or built-in graph name.
        resolution: Demes per unit length.
        ladder: Several resolutions to check one after the other, e.g. ``'[8, 16, 32]'``. Replaces ``resolution``.
        capacity: Sites per deme to force on some edges after the rates are built, e.g. ``'{"e0": 10}'``.
        theta: Mean used for conductances across vertices.
        theta_power: Exponent of the power mean.
        tol: Largest residual that counts as a pass.
        out_dir: If set, the residuals are also written to ``conditions.csv`` there, one block per resolution.
    """
    pprint(locals())
    hparams = capture_hparams()
    graph_config = GraphConfig.load(graph)
    levels = []
    for L in ladder or [resolution]:
        dg = graph_config.discretize(L)
        micro = graph_config.micro(dg, theta, theta_power)
        if capacity:
            micro = with_capacity(micro, dg, capacity)
        levels.append((micro, dg))
    reports = validate_sequence(levels, graph_config.macro(), tol)

    frames = []
    for L, report in reports.items():
        print(f"L={L}")
        print(report)
        frame = report.to_frame()
        frame.insert(0, "resolution", L)
        frames.append(frame)
    if out_dir is not None:
        save_artifact(pd.concat(frames, ignore_index=True), init_out_dir(out_dir) / "conditions.csv", hparams, None)
    failed = [L for L, report in reports.items() if not report.passed]
    if failed:
        print(f"Scaling conditions failed at L={failed}.", file=sys.stderr)
        raise SystemExit(1)


if __name__ == "__main__":
    CLI(validate)
