import numpy as np
import pytest

from egfl_lab.config import ExperimentConfig
from egfl_lab.datagen import generate
from egfl_lab.federation import run_experiment
from egfl_lab.model import Model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return Model.initialize((3, 5, 1), rng)


@pytest.fixture
def toy_batch(rng):
    X = rng.normal(size=(24, 3))
    y = (X[:, 0] - 0.5 * X[:, 2] + 0.3 * rng.normal(size=24) > 0.4).astype(float)
    y[:2] = [1.0, 0.0]
    return X, y


@pytest.fixture(scope="session")
def tiny_grid():
    return generate(seed=7, K=3, N=3, D=150)


@pytest.fixture
def tiny_config():
    return ExperimentConfig(K=3, N=3, D=150, T=2, L=2, oracle_steps=5, ig_steps=8,
                            hidden=(6,), threads=1, seed=7)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_grid):
    """A finished two-variant run directory shared by the report and bound tests."""
    cfg = ExperimentConfig(K=3, N=3, D=150, T=2, L=2, oracle_steps=5, ig_steps=8, hidden=(6,),
                           threads=1, seed=7, R_lambda=10.0, variants=("EGFL-JS", "FL-vanilla"))
    run_dir = tmp_path_factory.mktemp("run")
    run_experiment(cfg, tiny_grid, run_dir)
    return run_dir, cfg
