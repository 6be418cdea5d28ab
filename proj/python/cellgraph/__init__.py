"""Cell-graph classification of multiplexed tissue images."""

import json

from ._core import (
    Error,
    compute_metrics,
    extract_features,
    knn_graph,
    propagate,
    reduce,
    run_cli,
    stratified_split,
)
from ._core import run_experiment as _run_experiment
from ._core import write_synthetic_dataset as _write_synthetic_dataset

__all__ = [
    "Error",
    "compute_metrics",
    "extract_features",
    "knn_graph",
    "propagate",
    "reduce",
    "run_cli",
    "run_experiment",
    "stratified_split",
    "write_synthetic_dataset",
]


def write_synthetic_dataset(out_dir, config=None):
    """Write a synthetic dataset to `out_dir`; `config` is a dict of generator settings."""
    return _write_synthetic_dataset(str(out_dir), json.dumps(config) if config else "")


def run_experiment(config=None, out_dir=""):
    """Run an experiment grid and return the parsed report."""
    return json.loads(_run_experiment(json.dumps(config or {}), str(out_dir)))
