# Licensed under the Apache License 2.0, see LICENSE file.

"""Utility functions for runs, seeds and artifacts."""
import hashlib
import inspect
import os
from dataclasses import asdict, is_dataclass
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from lightning.fabric.loggers import CSVLogger

Seed = Union[int, np.random.SeedSequence]


def init_out_dir(out_dir: Path) -> Path:
    if not isinstance(out_dir, Path):
        out_dir = Path(out_dir)
    if not out_dir.is_absolute() and "GRAPHFKPP_ARTIFACTS_DIR" in os.environ:
        return Path(os.getenv("GRAPHFKPP_ARTIFACTS_DIR")) / out_dir
    return out_dir


def CLI(*args: Any, **kwargs: Any) -> Any:
    from jsonargparse import CLI, set_config_read_mode, set_docstring_parse_options

    set_docstring_parse_options(attribute_docstrings=True)
    set_config_read_mode(urls_enabled=True)

    return CLI(*args, **kwargs)


def capture_hparams() -> Dict[str, Any]:
    """Captures the local variables ('hyperparameters') from where this function gets called."""
    caller_frame = inspect.currentframe().f_back
    locals_of_caller = caller_frame.f_locals
    hparams = {}
    for name, value in locals_of_caller.items():
        if value is None or isinstance(value, (int, float, str, bool)):
            hparams[name] = value
        elif isinstance(value, Path):
            hparams[name] = str(value)
        elif is_dataclass(value):
            hparams[name] = asdict(value)
        elif isinstance(value, (list, tuple)):
            hparams[name] = [v if isinstance(v, (int, float, str, bool)) else str(v) for v in value]
        else:
            hparams[name] = str(value)
    return hparams


def replicate_seeds(seed: Union[Seed, Sequence[Seed]], replicates: int) -> List[Seed]:
    """One independent seed per replicate, spawned from a master seed or taken from an explicit list."""
    if isinstance(seed, (int, np.integer, np.random.SeedSequence)):
        master = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
        return master.spawn(replicates)
    seeds = list(seed)
    if len(seeds) != replicates:
        raise ValueError(f"Got {len(seeds)} seeds for {replicates} replicates")
    return seeds


def philox_generator(seed: Seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def package_versions() -> Dict[str, str]:
    versions = {}
    for package in ("graphfkpp", "torch", "numpy", "numba", "pandas"):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def config_hash(hparams: Dict[str, Any]) -> str:
    payload = yaml.safe_dump(hparams, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def save_artifact(frame: pd.DataFrame, path: Path, hparams: Dict[str, Any], seed: Optional[int]) -> Path:
    """Writes ``frame`` as CSV with a header row and a ``<name>.meta.yaml`` sidecar next to it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    metadata = {
        "file": path.name,
        "config_hash": config_hash(hparams),
        "seed": seed,
        "versions": package_versions(),
        "config": hparams,
    }
    with open(path.with_suffix(".meta.yaml"), "w", encoding="utf-8") as fp:
        yaml.safe_dump(metadata, fp, sort_keys=True)
    return path


def save_report(report: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        yaml.safe_dump(report, fp, sort_keys=False)
    return path


def choose_logger(logger_name: Literal["csv"], out_dir: Path, log_interval: int = 1, **kwargs: Any):
    if logger_name == "csv":
        return CSVLogger(root_dir=(out_dir / "logs"), name="csv", flush_logs_every_n_steps=log_interval, **kwargs)
    raise ValueError(f"`--logger_name={logger_name}` is not a valid option. Choose from 'csv'.")
