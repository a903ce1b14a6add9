# Licensed under the Apache License 2.0, see LICENSE file.
import os
from dataclasses import asdict
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
import pytest
import yaml
from lightning.fabric.loggers import CSVLogger

from graphfkpp.args import InitialCondition
from graphfkpp.utils import (
    capture_hparams,
    choose_logger,
    config_hash,
    init_out_dir,
    philox_generator,
    replicate_seeds,
    save_artifact,
    save_report,
)


def test_init_out_dir(tmp_path):
    relative_path = Path("./out")
    absolute_path = tmp_path / "out"

    with mock.patch.dict(os.environ, {}, clear=True):
        assert init_out_dir(relative_path) == relative_path
        assert init_out_dir(absolute_path) == absolute_path
        assert init_out_dir("out/bvm") == Path("out/bvm")

    with mock.patch.dict(os.environ, {"GRAPHFKPP_ARTIFACTS_DIR": "prefix"}):
        assert init_out_dir(relative_path) == Path("prefix") / relative_path
        assert init_out_dir(absolute_path) == absolute_path


def test_capture_hparams():
    integer = 1
    string = "string"
    boolean = True
    none = None
    path = Path("/path")
    dataclass = InitialCondition(kind="constant", value=0.25)
    ladder = [4, 8]
    other = object()
    hparams = capture_hparams()
    assert hparams["integer"] == integer
    assert hparams["string"] == string
    assert hparams["boolean"] == boolean
    assert hparams["none"] == none
    assert hparams["path"] == "/path"
    assert hparams["dataclass"] == asdict(dataclass)
    assert hparams["ladder"] == [4, 8]
    assert hparams["other"].startswith("<object object")


def test_replicate_seeds():
    first = replicate_seeds(7, 3)
    assert len(first) == 3
    assert [s.entropy for s in first] == [7] * 3
    assert [s.spawn_key for s in first] == [(0,), (1,), (2,)]
    assert replicate_seeds([1, 2], 2) == [1, 2]
    with pytest.raises(ValueError, match="Got 1 seeds for 2 replicates"):
        replicate_seeds([1], 2)


def test_philox_generator():
    seed = np.random.SeedSequence(11)
    a = philox_generator(seed).random(5)
    b = philox_generator(np.random.SeedSequence(11)).random(5)
    assert (a == b).all()
    assert isinstance(philox_generator(3).bit_generator, np.random.Philox)


def test_save_artifact(tmp_path):
    frame = pd.DataFrame({"time": [0.0, 0.1], "value": [1 / 3, 2 / 3]})
    hparams = {"graph": "star-3", "ladder": [4, 8]}
    path = save_artifact(frame, tmp_path / "nested" / "table.csv", hparams, seed=9)
    assert path.read_text().splitlines()[0] == "time,value"
    # full precision survives the round trip
    assert pd.read_csv(path)["value"].tolist() == [1 / 3, 2 / 3]

    metadata = yaml.safe_load((tmp_path / "nested" / "table.meta.yaml").read_text())
    assert metadata["file"] == "table.csv"
    assert metadata["seed"] == 9
    assert metadata["config"] == hparams
    assert metadata["config_hash"] == config_hash(hparams)
    assert set(metadata["versions"]) == {"graphfkpp", "torch", "numpy", "numba", "pandas"}
    assert config_hash({"ladder": [4, 8], "graph": "star-3"}) == config_hash(hparams)
    assert config_hash({"graph": "star-3"}) != config_hash(hparams)


def test_save_report(tmp_path):
    path = save_report({"b": 1, "a": [0.5]}, tmp_path / "report.yaml")
    assert path.read_text() == "b: 1\na:\n- 0.5\n"


def test_choose_logger(tmp_path):
    assert isinstance(choose_logger("csv", out_dir=tmp_path, log_interval=5), CSVLogger)
    with pytest.raises(ValueError, match="`--logger_name=foo` is not a valid option."):
        choose_logger("foo", out_dir=tmp_path)


def test_license_headers():
    root = Path(__file__).parents[1]
    assert "Apache License" in (root / "LICENSE").read_text()
    header = "# Licensed under the Apache License 2.0, see LICENSE file."
    for path in (root / "graphfkpp").rglob("*.py"):
        text = path.read_text()
        assert not text or text.startswith(header), path
