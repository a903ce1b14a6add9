# Licensed under the Apache License 2.0, see LICENSE file.

from dataclasses import dataclass
from typing import Optional

import pandas as pd
import torch
from typing_extensions import Self

from graphfkpp.metric_graph import DensityField, DiscretizedGraph, interpolate


def _deme_columns(dg: DiscretizedGraph, times: torch.Tensor) -> dict:
    num_times = len(times)
    return {
        "time": times.repeat_interleave(dg.num_demes).tolist(),
        "deme": list(range(dg.num_demes)) * num_times,
        "edge": list(dg.deme_edge) * num_times,
        "coordinate": [float(c) for c in dg.coordinates] * num_times,
    }


@dataclass(eq=False)
class Trajectory:
    """Deme densities sampled on a time grid, for one or more replicates.

    ``values`` has shape [num_times, num_replicates, num_demes].
    """

    dg: DiscretizedGraph
    times: torch.Tensor
    values: torch.Tensor
    events: int = 0
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        self.times = torch.as_tensor(self.times, dtype=torch.float64)
        if self.values.dim() == 2:
            self.values = self.values.unsqueeze(1)
        if self.values.shape[0] != len(self.times) or self.values.shape[-1] != self.dg.num_demes:
            raise ValueError(f"Values of shape {tuple(self.values.shape)} do not match the time grid and demes")
        if len(self.times) > 1 and not bool((self.times[1:] > self.times[:-1]).all()):
            raise ValueError("Sample times must be strictly increasing")
        if self.values.numel() and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("Densities must lie in [0, 1]")

    @property
    def replicates(self) -> int:
        return self.values.shape[1]

    def to_frame(self) -> pd.DataFrame:
        """Columns (time, deme, edge, coordinate, density), plus a leading replicate column for batches."""
        frames = []
        for r in range(self.replicates):
            columns = _deme_columns(self.dg, self.times)
            columns["density"] = self.values[:, r].flatten().tolist()
            frame = pd.DataFrame(columns)
            if self.replicates > 1:
                frame.insert(0, "replicate", r)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


@dataclass(eq=False)
class EnsembleTable:
    """Per (time, deme) moments across independent replicates."""

    dg: DiscretizedGraph
    times: torch.Tensor
    mean: torch.Tensor
    var: torch.Tensor
    replicates: int

    @property
    def stderr(self) -> torch.Tensor:
        return (self.var / self.replicates).sqrt()

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory) -> Self:
        values = trajectory.values.to(torch.float64)
        replicates = values.shape[1]
        mean = values.mean(dim=1)
        var = values.var(dim=1, correction=1) if replicates > 1 else torch.zeros_like(mean)
        return cls(trajectory.dg, trajectory.times, mean, var, replicates)

    def mean_field(self, index: int = -1) -> DensityField:
        return interpolate(self.dg, self.mean[index].clamp(0, 1))

    def to_frame(self) -> pd.DataFrame:
        columns = _deme_columns(self.dg, self.times)
        columns["mean"] = self.mean.flatten().tolist()
        columns["var"] = self.var.flatten().tolist()
        columns["stderr"] = self.stderr.flatten().tolist()
        columns["replicates"] = self.replicates
        return pd.DataFrame(columns)
