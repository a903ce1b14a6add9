# Licensed under the Apache License 2.0, see LICENSE file.

import numpy as np
import pytest
import torch

import graphfkpp.duality as duality
from graphfkpp.bvm import voter_mean
from graphfkpp.config import GraphConfig
from graphfkpp.duality import (
    DualityReport,
    DualProcess,
    dual_generator,
    duality_gap_exact,
    duality_gap_mc,
    exact_duality,
    hypergeometric_survival,
    rounded_counts,
    run_dual,
)
from graphfkpp.metric_graph import constant_profile
from tests.conftest import RunIf


def _instance(name):
    config = GraphConfig.from_name(name)
    dg = config.discretize(1)
    return dg, config.micro(dg)


def test_start_and_coalesce_on_the_spot():
    dg, micro = _instance("tiny-3")
    process = DualProcess(dg, micro)
    state = process.start([(0, 0), (0, 0), (2, 1)], seed=1)
    assert state.count == 2
    assert state.coalescences == 1
    assert state.occupancy(dg.num_demes).tolist() == [1, 0, 1]

    with pytest.raises(ValueError, match="not on the graph"):
        process.start([(3, 0)])
    with pytest.raises(ValueError, match="out of range"):
        process.start([(0, 2)])


def test_pure_voter_dual_coalesces_only():
    dg, micro = _instance("pair-2")
    process = DualProcess(dg, micro)
    # a single particle jumps at the total deme rate Σ_y M_y·a_{x<-y}
    capacity = micro.deme_capacity(dg).numpy()
    for x in range(dg.num_demes):
        expected = sum(capacity[y] * float(micro.voter[i]) for i, (z, y, _) in enumerate(dg.pairs) if z == x)
        assert process.deme_rate[x] == pytest.approx(expected)

    for seed in range(20):
        single = run_dual(dg, micro, [(0, 0)], 3.0, seed=seed)
        assert single.count == 1
        assert single.branchings == 0
        both = run_dual(dg, micro, [(0, 0), (1, 0)], 3.0, seed=seed)
        assert 1 <= both.count <= 2
        assert both.branchings == 0
        assert both.count == 2 - both.coalescences
        assert both.time == 3.0


def test_dual_branches_with_bias():
    dg, micro = _instance("tiny-3")
    state = run_dual(dg, micro, [(1, 0)], 20.0, seed=3)
    assert state.branchings > 0
    assert state.count <= int(micro.deme_capacity(dg).sum())


def test_dual_particle_cap(monkeypatch):
    dg, micro = _instance("tiny-3")
    monkeypatch.setattr(duality, "MAX_PARTICLES", 1)
    with pytest.raises(RuntimeError, match="exceeded 1 particles"):
        run_dual(dg, micro, [(1, 0)], 50.0, seed=0)


def test_hypergeometric_survival():
    capacity = np.array([4, 2])
    assert hypergeometric_survival(np.array([0, 0]), capacity, np.array([3, 2])) == 1.0
    assert hypergeometric_survival(np.array([1, 0]), capacity, np.array([2, 0])) == pytest.approx(3 / 4 * 2 / 3)
    assert hypergeometric_survival(np.array([2, 2]), capacity, np.array([0, 1])) == 0.0
    with pytest.raises(ValueError, match="cannot occupy"):
        hypergeometric_survival(np.array([0, 0]), capacity, np.array([5, 0]))


def test_rounded_counts():
    dg, micro = _instance("tiny-3")
    assert rounded_counts(dg, micro, torch.tensor([1.0, 0.5, 0.2], dtype=torch.float64)).tolist() == [2, 1, 0]


def test_dual_generator_rows_sum_to_zero():
    dg, micro = _instance("tiny-3")
    q = dual_generator(dg, micro)
    assert q.shape == (64, 64)
    torch.testing.assert_close(q.sum(dim=1), torch.zeros(64, dtype=torch.float64), rtol=0, atol=1e-12)
    # the empty configuration is absorbing
    assert not q[0].any()
    torch.testing.assert_close(dual_generator(dg, micro, sparse=True).to_dense(), q)


def test_exact_duality_pure_voter_pair():
    dg, micro = _instance("pair-2")
    u0 = torch.tensor([1.0, 0.0], dtype=torch.float64)
    lhs, rhs = exact_duality(dg, micro, u0, [1], 0.7)
    assert abs(lhs - rhs) <= 1e-8
    # with no bias the one-particle dual is the voter mean
    assert lhs == pytest.approx(1 - float(voter_mean(dg, micro, u0, 0.7)[1]), abs=1e-8)
    assert 0 < lhs < 1


def test_exact_duality_with_bias():
    dg, micro = _instance("tiny-3")
    assert (micro.bias > 0).all()
    u0 = torch.tensor([1.0, 0.5, 0.0], dtype=torch.float64)
    assert duality_gap_exact(dg, micro, u0, [0, 2], 0.5) <= 1e-8
    assert duality_gap_exact(dg, micro, u0, [1], 0.5) <= 1e-8
    # probe order does not matter
    assert exact_duality(dg, micro, u0, [0, 2], 0.5) == exact_duality(dg, micro, u0, [2, 0], 0.5)


def test_exact_duality_at_time_zero():
    dg, micro = _instance("tiny-3")
    u0 = torch.tensor([1.0, 0.5, 0.0], dtype=torch.float64)
    lhs, rhs = exact_duality(dg, micro, u0, [1, 2], 0.0)
    assert lhs == pytest.approx(0.5, abs=1e-15)
    assert abs(lhs - rhs) <= 1e-15


@pytest.mark.parametrize(
    ("probes", "match"), [([], "At least one"), ([5], "not on the graph"), ([1, 1], "must be distinct")]
)
def test_probe_validation(probes, match):
    dg, micro = _instance("tiny-3")
    u0 = constant_profile(dg, 0.5)
    with pytest.raises(ValueError, match=match):
        exact_duality(dg, micro, u0, probes, 0.5)
    with pytest.raises(ValueError, match=match):
        duality_gap_mc(dg, micro, u0, probes, 0.5, replicates=100)


def test_monte_carlo_argument_errors():
    dg, micro = _instance("tiny-3")
    u0 = constant_profile(dg, 0.5)
    with pytest.raises(ValueError, match="at least 100"):
        duality_gap_mc(dg, micro, u0, [0], 0.5, replicates=10)
    with pytest.raises(ValueError, match="must be positive"):
        duality_gap_mc(dg, micro, u0, [0], 0.0)


@pytest.mark.parametrize(("value", "expected"), [(0.0, 1.0), (1.0, 0.0)])
def test_monte_carlo_absorbing_initial_states(value, expected):
    dg, micro = _instance("tiny-3")
    report = duality_gap_mc(dg, micro, constant_profile(dg, value), [1], 0.5, replicates=100, seed=4)
    assert report.lhs == report.rhs == expected
    assert report.gap == 0.0
    assert report.stderr == 0.0


def _monte_carlo_check(replicates):
    dg, micro = _instance("tiny-3")
    u0 = torch.tensor([1.0, 0.5, 0.0], dtype=torch.float64)
    report = duality_gap_mc(dg, micro, u0, [0, 2], 0.5, replicates=replicates, seed=123)
    report.exact = exact_duality(dg, micro, u0, [0, 2], 0.5)
    exact = report.exact[0]
    assert abs(report.lhs - exact) <= 4 * report.lhs_stderr
    assert abs(report.rhs - exact) <= 4 * report.rhs_stderr
    assert report.exact_gap <= 1e-8
    return report


def test_monte_carlo_agrees_with_exact():
    report = _monte_carlo_check(2000)
    summary = report.as_dict()
    assert summary["probes"] == [0, 2]
    assert summary["replicates"] == 2000
    assert {"lhs", "rhs", "stderr", "exact_lhs", "exact_rhs", "exact_gap"} <= set(summary)
    assert "exact gap" in str(report)


@RunIf(standalone=True)
def test_monte_carlo_agrees_with_exact_full():
    _monte_carlo_check(10_000)


def test_report_without_exact_values():
    report = DualityReport(lhs=0.5, rhs=0.4, lhs_stderr=0.03, rhs_stderr=0.04, replicates=100, probes=[0])
    assert report.gap == pytest.approx(0.1)
    assert report.stderr == pytest.approx(0.05)
    assert report.exact_gap is None
    assert "exact_gap" not in report.as_dict()
