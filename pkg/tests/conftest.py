import json

import numpy as np
import pytest

from augdf.cascade import CascadeParams
from augdf.data import from_arrays, save_csv, save_schema
from augdf.forest import ForestParams


def noisy_task(n=240, d=8, seed=0, noise=0.8, C=2):
    """Two informative features plus noise columns, with label noise."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    score = X[:, 0] + X[:, 1] * X[:, 2] + noise * rng.normal(size=n)
    if C == 2:
        y = (score > 0).astype(int)
    else:
        y = np.digitize(score, np.quantile(score, np.linspace(0, 1, C + 1)[1:-1]))
    return from_arrays(X, y)


@pytest.fixture
def small_ds():
    return noisy_task(n=150, d=6, seed=3)


@pytest.fixture
def tiny_params():
    return CascadeParams((ForestParams(6, "bagged"), ForestParams(6, "extra")), k_folds=3, max_layers=4)


@pytest.fixture
def csv_dataset(tmp_path):
    """A mixed continuous/categorical CSV with its schema sidecar."""
    rng = np.random.default_rng(11)
    n = 160
    X = np.column_stack([rng.normal(size=n), rng.normal(size=n), rng.integers(0, 3, n), rng.normal(size=n)])
    y = ((X[:, 0] + (X[:, 2] == 1) - 0.5 * X[:, 1] + 0.5 * rng.normal(size=n)) > 0.3).astype(int)
    ds = from_arrays(X, y, categorical=(2,), class_names=("no", "yes"), names=["a", "b", "colour", "c"],
                     label_column="target")
    data = tmp_path / "data.csv"
    schema = tmp_path / "schema.json"
    save_csv(ds, data)
    save_schema(ds.schema, schema)
    return ds, data, schema


@pytest.fixture
def run_config(tmp_path, csv_dataset):
    _, data, schema = csv_dataset

    def make(**overrides):
        cfg = {
            "data": str(data),
            "schema": str(schema),
            "mode": "vanilla",
            "seeds": [0, 1],
            "forests": [{"n_trees": 4, "kind": "bagged"}, {"n_trees": 4, "kind": "extra"}],
            "k_folds": 3,
            "max_layers": 3,
            "grid": {"P": [0.1, 0.4, 0.7], "M": [0.5, 1.0, 2.0]},
            "population": 4,
        }
        cfg.update(overrides)
        path = tmp_path / f"config_{len(list(tmp_path.glob('config_*')))}.json"
        path.write_text(json.dumps(cfg))
        return path

    return make


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
