# Licensed under the Apache License 2.0, see LICENSE file.

from pathlib import Path

import pytest
import yaml

from graphfkpp.config import EdgeConfig, GraphConfig, configs, name_to_config
from graphfkpp.scaling import validate_conditions


def test_name_to_config_is_complete():
    assert len(name_to_config) == len(configs)
    assert {"star-3", "interval", "path-13", "front-40", "pair-2", "tiny-3"} <= set(name_to_config)


@pytest.mark.parametrize("name", sorted(name_to_config))
def test_builtin_graphs_build(name):
    config = GraphConfig.from_name(name)
    assert config.name == name
    assert all(isinstance(edge, EdgeConfig) for edge in config.edges)
    graph = config.to_graph()
    # resolution 4 fits every built-in length
    dg = config.discretize(4)
    assert dg.graph.edge_names == graph.edge_names
    report = validate_conditions(config.micro(dg), dg, config.macro())
    assert report.passed, str(report)


def test_from_name_overrides():
    config = GraphConfig.from_name("star-3", vertex_growth={})
    assert config.macro().growth_at("hub") == 0.0
    with pytest.raises(ValueError, match="is not a built-in graph"):
        GraphConfig.from_name("mesh")


def test_builtin_sizes():
    config = GraphConfig.from_name("path-13")
    dg = config.discretize(1)
    assert dg.num_demes == 12
    assert config.micro(dg).capacity == {"e0": 16}

    config = GraphConfig.from_name("tiny-3")
    dg = config.discretize(1)
    micro = config.micro(dg)
    assert dg.num_demes == 3
    assert micro.capacity == {"e0": 2}

    config = GraphConfig.from_name("pair-2")
    dg = config.discretize(1)
    assert dg.num_demes == 2
    assert config.micro(dg).capacity == {"e0": 1}


def test_macro_and_capacity():
    config = GraphConfig.from_name("front-40")
    macro = config.macro()
    assert macro.alpha == {"e0": 1.0}
    assert macro.beta == {"e0": 1.0}
    assert macro.gamma == {"e0": 0.0}
    assert macro.vertex_growth == {"left": 0.0, "right": 0.0}
    assert config.capacity() == {"e0": 1000}


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "config_hub" / "graphs").glob("*.yaml")))
def test_graph_files(path):
    config = GraphConfig.from_file(path)
    assert config.name == path.stem
    dg = config.discretize(4)
    report = validate_conditions(config.micro(dg), dg, config.macro())
    assert report.passed, str(report)


def test_graph_file_matches_builtin(config_hub_dir):
    from_file = GraphConfig.from_file(config_hub_dir / "graphs" / "star-3.yaml")
    assert from_file.as_dict() == GraphConfig.from_name("star-3").as_dict()


def test_from_file_errors(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.touch()
    with pytest.raises(ValueError, match="is empty which is likely unexpected"):
        GraphConfig.from_file(empty)

    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n")
    with pytest.raises(ValueError, match="mapping at the top level"):
        GraphConfig.from_file(listing)

    typo = tmp_path / "typo.yaml"
    typo.write_text(yaml.safe_dump({"name": "x", "vertices": ["a", "b"], "edge": []}))
    with pytest.raises(ValueError, match=r"Unknown keys \['edge'\]"):
        GraphConfig.from_file(typo)

    edge_typo = tmp_path / "edge_typo.yaml"
    edge = {"id": "e0", "source": "a", "target": "b", "length": "1", "alpah": 1.0}
    edge_typo.write_text(yaml.safe_dump({"name": "x", "vertices": ["a", "b"], "edges": [edge]}))
    with pytest.raises(ValueError, match=r"Unknown keys \['alpah'\] in edge 0"):
        GraphConfig.from_file(edge_typo)

    undeclared = tmp_path / "undeclared.yaml"
    edge = {"id": "e0", "source": "a", "target": "b", "length": "1"}
    undeclared.write_text(yaml.safe_dump({"vertices": ["a", "b"], "edges": [edge], "vertex_growth": {"hub": 1}}))
    with pytest.raises(ValueError, match="undeclared vertices"):
        GraphConfig.from_file(undeclared)


def test_load(tmp_path, config_hub_dir):
    assert GraphConfig.load("interval").name == "interval"
    assert GraphConfig.load(config_hub_dir / "graphs" / "y-junction.yaml").name == "y-junction"
    with pytest.raises(FileNotFoundError, match="neither a graph file nor a built-in graph"):
        GraphConfig.load(tmp_path / "missing.yaml")


def test_lengths_are_exact():
    config = GraphConfig(
        vertices=["a", "b"], edges=[{"id": "e0", "source": "a", "target": "b", "length": 0.3, "gamma": 1.0}]
    )
    assert config.edges[0].length == "0.3"
    dg = config.discretize(10)
    assert dg.num_demes == 2


def test_zero_noise_edge_needs_capacity():
    config = GraphConfig(vertices=["a", "b"], edges=[{"id": "e0", "source": "a", "target": "b", "length": "1"}])
    dg = config.discretize(4)
    with pytest.raises(ValueError, match="Pass it in `capacity`"):
        config.micro(dg)
