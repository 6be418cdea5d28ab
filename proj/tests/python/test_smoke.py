import json

import numpy as np
import pytest

import cellgraph


SMALL = {"n_samples": 2, "n_melanoma": 1, "cells_per_sample": 40, "image_size": 96, "n_channels": 4, "seed": 3}


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    return cellgraph.write_synthetic_dataset(tmp_path_factory.mktemp("data"), SMALL)


def test_extract_expression(manifest):
    t = cellgraph.extract_features(manifest, "expression")
    assert t["features"].shape == (80, 4)
    assert len(t["label"]) == 80
    assert set(t["label"]) <= {0, 1}
    assert t["sample_id"] == sorted(t["sample_id"])


def test_extract_radiomics_has_more_columns(manifest):
    expr = cellgraph.extract_features(manifest, "expression")
    rad = cellgraph.extract_features(manifest, "radiomics", levels=8)
    assert rad["features"].shape[0] == 80
    assert rad["features"].shape[1] > expr["features"].shape[1]


def test_knn_graph_edge_count():
    x = np.random.default_rng(0).normal(size=(50, 3))
    edges = cellgraph.knn_graph(x, k=5)
    assert len(edges) == 250
    assert all(a != b for a, b in edges)


def test_propagate_matches_dense_powers():
    rng = np.random.default_rng(1)
    n = 12
    edges = [(i, (i + 1) % n) for i in range(n)]
    x = rng.normal(size=(n, 2))
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    a = d[:, None] * a * d[None, :]
    acc, power = x.copy(), np.eye(n)
    for _ in range(4):
        power = power @ a
        acc += power @ x
    np.testing.assert_allclose(cellgraph.propagate(n, edges, x, 4), acc / 5, atol=1e-12)


def test_split_and_metrics():
    labels = [0] * 10 + [1] * 10
    train, val, test = cellgraph.stratified_split(labels, seed=4)
    assert (len(train), len(val), len(test)) == (14, 2, 4)
    assert not set(train) & set(test)
    m = cellgraph.compute_metrics([0, 1, 1], [0.2, 0.9, 0.4])
    assert m["accuracy"] == pytest.approx(2 / 3)
    assert m["precision"] == 1.0


def test_reduce_shape_and_errors():
    x = np.random.default_rng(2).normal(size=(30, 6))
    assert cellgraph.reduce(x, "pca", 3).shape == (30, 3)
    with pytest.raises(cellgraph.Error):
        cellgraph.reduce(x, "nonsense", 2)


def test_run_experiment_is_deterministic(tmp_path):
    cfg = {
        "synth": SMALL,
        "feature_types": ["expression"],
        "reductions": ["none"],
        "models": ["random_forest", "grand_spatial_graph"],
        "grand": {"max_epochs": 10},
    }
    a = cellgraph.run_experiment(cfg, tmp_path / "a")
    b = cellgraph.run_experiment(cfg, tmp_path / "b")
    assert a == b
    assert [c["status"] for c in a["cells"]] == ["ok", "ok"]
    assert json.loads((tmp_path / "a" / "report.json").read_text()) == a


def test_cli_usage_error():
    code, _, err = cellgraph.run_cli(["train", "--features", "f.csv"])
    assert code == 2
    assert "--" in err
