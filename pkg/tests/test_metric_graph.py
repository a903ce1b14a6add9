# Licensed under the Apache License 2.0, see LICENSE file.

from fractions import Fraction

import pytest
import torch

from graphfkpp.metric_graph import (
    build_graph,
    constant_profile,
    deme_distance,
    discretize,
    distance_matrix,
    graph_norm,
    interpolate,
    step_profile,
    to_fraction,
    total_mass,
)


def test_to_fraction():
    assert to_fraction("0.1") == Fraction(1, 10)
    assert to_fraction(0.1) == Fraction(1, 10)
    assert to_fraction(3) == 3
    with pytest.raises(ValueError, match="not a valid decimal"):
        to_fraction("one")
    with pytest.raises(ValueError):
        to_fraction(True)


def test_build_graph(interval_graph, star_graph):
    assert interval_graph.degree("v0") == interval_graph.degree("v1") == 1
    assert star_graph.degree("hub") == 3
    assert star_graph.edge_names == ("e0", "e1", "e2")
    assert star_graph.vertex_distances["a"]["b"] == 2

    loop = build_graph(["v"], [("e0", "v", "v", 2)])
    assert loop.degree("v") == 2


@pytest.mark.parametrize(
    ("vertices", "edges", "match"),
    [
        (["v0", "v1"], [("e0", "v0", "v1", -1)], "positive length"),
        (["v0", "v1"], [("e0", "v0", "v1", 0)], "positive length"),
        (["v0", "v0"], [("e0", "v0", "v0", 1)], "Duplicate vertex"),
        (["v0", "v1"], [("e0", "v0", "v1", 1), ("e0", "v1", "v0", 1)], "Duplicate edge"),
        (["v0", "v1"], [("e0", "v0", "v2", 1)], "undeclared vertex"),
        (["v0", "v1", "v2"], [("e0", "v0", "v1", 1)], "without incident edges"),
        (["v0"], [], "at least one edge"),
    ],
)
def test_build_graph_errors(vertices, edges, match):
    with pytest.raises(ValueError, match=match):
        build_graph(vertices, edges)


def test_discretize_interval(interval_graph):
    dg = discretize(interval_graph, 8)
    assert dg.num_demes == 7
    assert dg.coordinates[0] == Fraction(1, 8)
    assert dg.vertex_gap(0) == dg.vertex_gap(6) == Fraction(1, 8)
    assert dg.eps == 1 / 8
    torch.testing.assert_close(dg.measure, torch.full((7,), 1 / 8, dtype=torch.float64))
    assert total_mass(dg) == Fraction(7, 8)
    with pytest.raises(ValueError, match="not adjacent"):
        dg.vertex_gap(3)

    dg = discretize(interval_graph, 3)
    assert dg.num_demes == 2
    assert dg.vertex_gap(0) == dg.vertex_gap(1) == Fraction(1, 3)
    # the two demes are same-edge neighbors only
    assert [via for _, _, via in dg.pairs] == [None, None]


def test_discretize_star(star_graph):
    dg = discretize(star_graph, 4)
    hub_demes = [x for x, _ in dg.vertex_demes["hub"]]
    assert len({dg.deme_edge[x] for x in hub_demes}) == 3
    for x in hub_demes:
        for y in hub_demes:
            if x != y:
                assert y in dg.neighbors[x]
                assert dg.pairs[dg.pair_index[(x, y)]][2] == "hub"
    assert dg.pair_tensor.shape == (len(dg.pairs), 2)


def test_discretize_per_edge_resolution(star_graph):
    dg = discretize(star_graph, {"e0": 4, "e1": 8, "e2": "3"})
    assert len(dg.edge_demes["e0"]) == 3
    assert len(dg.edge_demes["e1"]) == 7
    assert dg.eps == 1 / 3
    with pytest.raises(ValueError, match="Missing resolution"):
        discretize(star_graph, {"e0": 4})


@pytest.mark.parametrize(
    ("length", "resolution", "match"),
    [("1", 2, "at least 3"), ("1", "2.5", "must be an integer"), ("1", 0, "must be positive")],
)
def test_discretize_errors(length, resolution, match):
    graph = build_graph(["v0", "v1"], [("e0", "v0", "v1", length)])
    with pytest.raises(ValueError, match=match):
        discretize(graph, resolution)


def test_discretize_self_loop():
    loop = build_graph(["v"], [("e0", "v", "v", 1)])
    with pytest.raises(ValueError, match="Self-loop"):
        discretize(loop, 3)
    dg = discretize(loop, 4)
    assert dg.neighbors[0] == (1, 2)
    assert deme_distance(dg, 0, 2) == Fraction(1, 2)


def test_deme_distance(star_graph):
    dg = discretize(star_graph, 8)
    a, b = dg.edge_demes["e0"][0], dg.edge_demes["e1"][0]
    assert deme_distance(dg, a, a + 1) == Fraction(1, 8)
    assert deme_distance(dg, a, b) == Fraction(1, 4)
    assert deme_distance(dg, a, a) == 0
    far = dg.edge_demes["e2"][-1]
    assert deme_distance(dg, a, far) == Fraction(1, 8) + Fraction(7, 8)

    matrix = distance_matrix(dg)
    for x, y in [(a, a + 1), (a, b), (a, far), (far, b)]:
        assert matrix[x, y].item() == pytest.approx(float(deme_distance(dg, x, y)), abs=1e-15)
    torch.testing.assert_close(matrix, matrix.T)


def test_deme_distance_disconnected():
    graph = build_graph(["a", "b", "c", "d"], [("e0", "a", "b", 1), ("e1", "c", "d", 1)])
    dg = discretize(graph, 4)
    with pytest.raises(ValueError, match="disconnected"):
        deme_distance(dg, 0, 3)
    assert distance_matrix(dg)[0, 3] == float("inf")


def test_interpolate(star_dg):
    field = interpolate(star_dg, constant_profile(star_dg, 1.0))
    assert field("e0", 0) == field("e1", "0.5") == field("e2", 1) == 1.0

    values = torch.zeros(star_dg.num_demes, dtype=torch.float64)
    hub = {edge: x for x, (edge, _) in star_dg.vertex_demes["hub"]}
    values[hub["e1"]] = 0.5
    values[hub["e2"]] = 1.0
    field = interpolate(star_dg, values)
    assert field.vertex_values["hub"] == 0.5

    dg = discretize(build_graph(["v0", "v1"], [("e0", "v0", "v1", 1)]), 4)
    field = interpolate(dg, torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64))
    assert field("e0", "0.375") == pytest.approx(0.5)
    torch.testing.assert_close(
        field.along_edge("e0", [0.0, 0.25, 1.0]), torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    )
    with pytest.raises(ValueError, match="Positions must lie"):
        field.along_edge("e0", [1.5])


def test_interpolate_errors(star_dg):
    with pytest.raises(ValueError, match="Expected 21 deme values"):
        interpolate(star_dg, torch.zeros(3))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        interpolate(star_dg, constant_profile(star_dg, 1.5))


def test_graph_norm(star_dg):
    field = interpolate(star_dg, constant_profile(star_dg, 0.7))
    assert graph_norm(field) == pytest.approx(0.7)
    assert graph_norm(field, field) == 0.0

    values = constant_profile(star_dg, 0.2)
    # an interior deme so no vertex average is moved
    values[star_dg.edge_demes["e1"][3]] = 0.5
    assert graph_norm(interpolate(star_dg, values), interpolate(star_dg, constant_profile(star_dg, 0.2))) == (
        pytest.approx(0.3)
    )


def test_step_profile(interval_graph):
    dg = discretize(interval_graph, 8)
    profile = step_profile(dg, "e0", 0.5)
    assert profile.tolist() == [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
    profile = step_profile(dg, "e0", "0.25", inside=0.5, outside=0.1)
    assert profile.tolist() == [0.5, 0.5, 0.1, 0.1, 0.1, 0.1, 0.1]
    with pytest.raises(ValueError, match="not an edge"):
        step_profile(dg, "e9", 0.5)
