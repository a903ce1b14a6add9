# Licensed under the Apache License 2.0, see LICENSE file.

import math

import pandas as pd
import pytest
import torch
import yaml

from graphfkpp.args import ExperimentConfig, InitialCondition
from graphfkpp.config import GraphConfig
from graphfkpp.experiment import (
    ConvergenceReport,
    LevelResult,
    converge,
    front_position,
    front_speed,
    measure_front_speed,
    run_experiment,
    shared_dt,
)
from graphfkpp.metric_graph import build_graph, discretize, graph_norm, interpolate, step_profile
from graphfkpp.random_walk import SPDE_TIME_SCALE, semigroup_apply, walk_rates
from graphfkpp.scaling import conductances
from graphfkpp.sde import SDEScheme
from graphfkpp.trajectory import Trajectory
from tests.conftest import RunIf


def _small_config(out_dir, **kwargs):
    kwargs = {
        "graph": "star-3",
        "ladder": [4, 8],
        "t_end": 0.1,
        "samples": 3,
        "bvm_replicates": 8,
        "sde_replicates": 8,
        "seed": 1234,
        "kernel_times": [0.05, 0.1],
        "out_dir": out_dir,
        **kwargs,
    }
    return ExperimentConfig(**kwargs)


def test_run_experiment_writes_artifacts(tmp_path):
    config = _small_config(tmp_path / "run")
    report = run_experiment(config)

    assert [level.resolution for level in report.levels] == [4, 8]
    assert [level.num_demes for level in report.levels] == [9, 21]
    assert report.levels[1].capacity == {"e0": 32, "e1": 32, "e2": 32}
    assert len(report.coupling) == 1
    assert report.kernel is not None

    out_dir = tmp_path / "run"
    for name in ("level-L4/bvm_ensemble", "level-L4/sde_ensemble", "level-L8/bvm_ensemble", "kernel_constants"):
        assert (out_dir / f"{name}.csv").is_file()
        metadata = yaml.safe_load((out_dir / f"{name}.meta.yaml").read_text())
        assert metadata["seed"] == 1234
        assert len(metadata["config_hash"]) == 64
    assert (out_dir / "logs").is_dir()

    summary = yaml.safe_load((out_dir / "report.yaml").read_text())
    assert [level["resolution"] for level in summary["levels"]] == [4, 8]
    assert "seconds" not in summary["levels"][0]
    assert set(summary["kernel"]) == {"L=4", "L=8"}

    frame = pd.read_csv(out_dir / "convergence.csv")
    assert frame["resolution"].tolist() == [4, 8]
    assert frame["distance"].tolist() == report.distances()
    assert math.isnan(frame["coupling_to_next"].iloc[-1])


def test_distance_can_be_recomputed_from_tables(tmp_path):
    config = _small_config(tmp_path, ladder=[4], kernel_times=[])
    report = run_experiment(config)
    dg = GraphConfig.load("star-3").discretize(4)

    means = []
    for name in ("bvm_ensemble", "sde_ensemble"):
        frame = pd.read_csv(tmp_path / "level-L4" / f"{name}.csv")
        last = frame[frame["time"] == frame["time"].max()].sort_values("deme")
        means.append(interpolate(dg, torch.tensor(last["mean"].to_numpy(), dtype=torch.float64)))
    assert graph_norm(*means) == pytest.approx(report.levels[0].distance, abs=1e-15)


def test_run_experiment_single_level(tmp_path):
    report = run_experiment(_small_config(tmp_path, ladder=[4]))
    assert report.coupling == []
    assert report.kernel is None
    assert not (tmp_path / "kernel_constants.csv").exists()
    assert report.nonincreasing()


def test_run_experiment_is_reproducible(tmp_path):
    run_experiment(_small_config(tmp_path / "a", kernel_times=[]))
    run_experiment(_small_config(tmp_path / "b", kernel_times=[]))
    for name in ("level-L4/bvm_ensemble.csv", "level-L8/sde_ensemble.csv", "convergence.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_experiment_respects_artifacts_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GRAPHFKPP_ARTIFACTS_DIR", str(tmp_path))
    run_experiment(_small_config("relative", ladder=[4], kernel_times=[]))
    assert (tmp_path / "relative" / "report.yaml").is_file()


def test_shared_dt_hits_sample_times():
    config = GraphConfig.from_name("star-3")
    schemes = [SDEScheme(config.discretize(L), config.macro()) for L in (4, 8)]
    dt = shared_dt(schemes, 0.5, 5)
    assert dt <= schemes[1].max_stable_dt
    steps = 0.125 / dt
    assert abs(steps - round(steps)) < 1e-9
    assert shared_dt(schemes, 0.5, 5, dt=1e-4) == 1e-4


def _level(distance, stderr):
    return LevelResult(resolution=1, num_demes=1, capacity={}, distance=distance, pooled_stderr=stderr, bvm_events=0)


def test_nonincreasing():
    assert ConvergenceReport([_level(0.3, 0.01), _level(0.2, 0.01)], [], 0.1).nonincreasing()
    # growth within two pooled standard errors is tolerated
    assert ConvergenceReport([_level(0.2, 0.03), _level(0.25, 0.03)], [], 0.1).nonincreasing()
    assert not ConvergenceReport([_level(0.2, 0.01), _level(0.25, 0.01)], [], 0.1).nonincreasing()


def test_front_position():
    coordinates = torch.tensor([1.0, 2.0, 3.0, 4.0], dtype=torch.float64)
    assert front_position(torch.tensor([1.0, 0.75, 0.25, 0.0]), coordinates, 0.5) == pytest.approx(2.5)
    assert front_position(torch.tensor([1.0, 1.0, 0.5, 0.0]), coordinates, 0.5) == 3.0
    assert front_position(torch.tensor([1.0, 1.0, 1.0, 0.9]), coordinates, 0.5) == 4.0
    assert math.isnan(front_position(torch.tensor([0.4, 0.3, 0.0, 0.0]), coordinates, 0.5))


def _diffusion_trajectory():
    graph = build_graph(["left", "right"], [("e0", "left", "right", 40)])
    dg = discretize(graph, 2)
    gen = walk_rates(dg, conductances(dg, {"e0": 1.0}), SPDE_TIME_SCALE)
    u0 = step_profile(dg, "e0", 20.0)
    times = torch.arange(0, 51, 5, dtype=torch.float64)
    values = torch.stack([semigroup_apply(gen, dg, float(t), u0).clamp(0, 1) for t in times])
    return Trajectory(dg, times, values)


def test_pure_diffusion_front_does_not_travel():
    result = front_speed(_diffusion_trajectory())
    assert abs(result.speed) <= 0.2
    assert result.stderr == 0.0
    assert result.edge == "e0"
    assert result.positions.shape == (11, 1)
    frame = result.to_frame()
    assert list(frame.columns) == ["replicate", "time", "position"]
    assert len(frame) == 11


def test_front_speed_errors():
    trajectory = _diffusion_trajectory()
    with pytest.raises(ValueError, match=r"\(0, 1\)"):
        front_speed(trajectory, threshold=1.0)
    with pytest.raises(ValueError, match="`window`"):
        front_speed(trajectory, window=0)
    with pytest.raises(ValueError, match="fewer than 2 sample times"):
        front_speed(trajectory, window=0.01)
    empty = Trajectory(trajectory.dg, trajectory.times, torch.zeros_like(trajectory.values))
    with pytest.raises(ValueError, match="never forms"):
        front_speed(empty)


def test_kpp_front_speed(tmp_path):
    # pulled fronts approach 2·√(αβ) from below with a logarithmic delay
    result = measure_front_speed(
        graph="front-40", model="sde", resolution=8, t_end=15.0, samples=61, seed=0, out_dir=tmp_path
    )
    assert 1.7 <= result.speed <= 2.2
    assert (tmp_path / "front_positions.csv").is_file()
    assert (tmp_path / "front_positions.meta.yaml").is_file()
    summary = yaml.safe_load((tmp_path / "front_speed.yaml").read_text())
    assert summary["model"] == "sde"
    assert summary["speed"] == result.speed


@RunIf(standalone=True)
def test_kpp_front_speed_at_resolution_16(tmp_path):
    result = measure_front_speed(graph="front-40", model="sde", resolution=16, t_end=15.0, seed=0, out_dir=tmp_path)
    assert abs(result.speed - 2.0) <= 0.3


def test_converge_rejects_non_nested_ladder_before_simulating(tmp_path):
    with pytest.raises(ValueError, match="must each divide the next one"):
        converge(ladder=[8, 12], seed=0, out_dir=tmp_path / "run")
    assert not (tmp_path / "run").exists()


@pytest.mark.parametrize(
    ("kwargs", "match"),
    [
        (dict(seed=None), "is required"),
        (dict(samples=2), "at least 3"),
        (dict(model="pde"), "must be 'sde' or 'bvm'"),
    ],
)
def test_measure_front_speed_errors(tmp_path, kwargs, match):
    kwargs = {"resolution": 2, "t_end": 1.0, "seed": 0, "out_dir": tmp_path, **kwargs}
    with pytest.raises(ValueError, match=match):
        measure_front_speed(**kwargs)


@RunIf(standalone=True)
def test_noise_slows_the_front(tmp_path):
    initial = InitialCondition(kind="step", position=4.0)
    noisy = measure_front_speed(
        graph="front-40-noisy",
        model="bvm",
        resolution=4,
        replicates=50,
        seed=42,
        out_dir=tmp_path / "bvm",
        initial=initial,
    )
    deterministic = measure_front_speed(
        graph="front-40", model="sde", resolution=4, seed=42, out_dir=tmp_path / "sde", initial=initial
    )
    assert noisy.stderr > 0
    assert noisy.speed + 2 * noisy.stderr < deterministic.speed


@RunIf(standalone=True)
def test_star_ladder_distances_shrink(tmp_path):
    config = ExperimentConfig(
        graph="star-3",
        ladder=[8, 16, 32],
        bvm_replicates=400,
        sde_replicates=400,
        seed=42,
        initial=InitialCondition(kind="step", edge="e0", position=0.5),
        out_dir=tmp_path,
    )
    report = run_experiment(config)
    assert report.nonincreasing()
    assert report.kernel is not None
