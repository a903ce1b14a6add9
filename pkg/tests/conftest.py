# Licensed under the Apache License 2.0, see LICENSE file.

import os
from pathlib import Path
from typing import List

import pytest
from lightning.fabric.utilities.testing import _runif_reasons

from graphfkpp.config import GraphConfig
from graphfkpp.metric_graph import build_graph, discretize


@pytest.fixture()
def star_graph():
    return build_graph(
        ["hub", "a", "b", "c"], [("e0", "hub", "a", "1"), ("e1", "hub", "b", "1"), ("e2", "hub", "c", "1")]
    )


@pytest.fixture()
def star_dg(star_graph):
    return discretize(star_graph, 8)


@pytest.fixture()
def interval_graph():
    return build_graph(["v0", "v1"], [("e0", "v0", "v1", "1")])


@pytest.fixture()
def tiny_config():
    """3 demes with 2 sites each at L=1, voter and bias rates both positive."""
    return GraphConfig.from_name("tiny-3")


@pytest.fixture()
def config_hub_dir():
    return Path(__file__).parents[1] / "config_hub"


def RunIf(**kwargs):
    reasons, marker_kwargs = _runif_reasons(**kwargs)
    return pytest.mark.skipif(condition=len(reasons) > 0, reason=f"Requires: [{' + '.join(reasons)}]", **marker_kwargs)


# https://github.com/Lightning-AI/lightning/blob/6e517bd55b50166138ce6ab915abd4547702994b/tests/tests_fabric/conftest.py#L140
def pytest_collection_modifyitems(items: List[pytest.Function], config: pytest.Config) -> None:
    """With ``PL_RUN_STANDALONE_TESTS=1`` only the full-size experiments marked ``@RunIf(standalone=True)`` run."""
    if os.getenv("PL_RUN_STANDALONE_TESTS", "0") != "1":
        return
    initial_size = len(items)
    filtered, skipped = 0, 0
    for i, test in reversed(list(enumerate(items))):
        if any(marker.name == "skip" for marker in test.own_markers):
            items.pop(i)
            skipped += 1
            continue
        if not any(marker.name == "skipif" and marker.kwargs.get("standalone") for marker in test.own_markers):
            items.pop(i)
            filtered += 1

    if config.option.verbose >= 0 and (filtered or skipped):
        writer = config.get_terminal_writer()
        writer.write(
            f"\nThe number of tests has been filtered from {initial_size} to {initial_size - filtered} for the"
            f" standalone run.\n{skipped} tests are marked as unconditional skips.\nIn total, {len(items)} tests"
            " will run.\n",
            flush=True,
            bold=True,
        )
