# Licensed under the Apache License 2.0, see LICENSE file.

"""Checks the duality identity between the biased voter model and its branching-coalescing dual."""
from pathlib import Path
from pprint import pprint
from typing import List, Optional

from graphfkpp.args import InitialCondition
from graphfkpp.bvm import MAX_SITES
from graphfkpp.config import GraphConfig
from graphfkpp.duality import duality_gap_mc, exact_duality
from graphfkpp.utils import CLI, init_out_dir, save_report


def dual_check(
    graph: str = "tiny-3",
    resolution: int = 1,
    probes: List[int] = [0, 1],
    t_end: float = 0.5,
    replicates: int = 1000,
    seed: Optional[int] = None,
    exact: bool = True,
    num_workers: int = 0,
    out_dir: Path = Path("out/dual_check"),
    initial: InitialCondition = InitialCondition(kind="constant", value=0.5),
) -> None:
    """Estimate both sides of the duality identity, plus their exact values on tiny instances.

    Arguments:
        graph: Graph file path or built-in graph name.
        resolution: Demes per unit length.
        probes: Distinct deme ids at which the voter model is probed.
        t_end: Horizon.
        replicates: Monte Carlo runs per side, at least 100.
        seed: Master seed. Required.
        exact: Also compute both sides from exact generators when the instance has at most 16 sites.
        num_workers: Worker processes for the voter-model runs.
        out_dir: Directory for ``duality.yaml``.
        initial: Initial density profile, rounded to whole sites.
    """
    pprint(locals())
    if seed is None:
        raise ValueError("`--seed` is required for simulations")
    out_dir = init_out_dir(out_dir)
    graph_config = GraphConfig.load(graph)
    dg = graph_config.discretize(resolution)
    micro = graph_config.micro(dg)
    u0 = initial.profile(dg)

    report = duality_gap_mc(dg, micro, u0, probes, t_end, replicates, seed, num_workers)
    if exact:
        sites = int(micro.deme_capacity(dg).sum())
        if sites <= MAX_SITES:
            report.exact = exact_duality(dg, micro, u0, probes, t_end)
        else:
            print(f"Skipping the exact oracle: {sites} sites exceed the limit of {MAX_SITES}")
    save_report(report.as_dict(), out_dir / "duality.yaml")
    print(report)


if __name__ == "__main__":
    CLI(dual_check)
