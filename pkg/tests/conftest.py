import numpy as np
import pytest

from treeinner.data import Dataset
from treeinner.datagen import gen_simulated
from treeinner.gbt import GBTRegressor, TrainConfig, fit

# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# three-row toy problem: (x1, x2, y)
TOY_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
TOY_Y = np.array([0.0, 1.0, -1.0])


@pytest.fixture
def toy():
    return Dataset(TOY_X, TOY_Y, ["x1", "x2"])


@pytest.fixture
def toy_swapped():
    """Columns swapped so the lowest-index tie-break picks the original x2."""
    return Dataset(TOY_X[:, ::-1].copy(), TOY_Y, ["x2", "x1"])


@pytest.fixture
def structure1(toy):
    return fit(toy, TrainConfig(eta=1.0, reg_lambda=1.0, max_depth=1, num_boost_round=1))


@pytest.fixture
def structure2(toy_swapped):
    return fit(toy_swapped, TrainConfig(eta=1.0, reg_lambda=1.0, max_depth=1, num_boost_round=1))


@pytest.fixture(scope="session")
def sim_regression():
    train, valid, truth = gen_simulated(300, 300, "regression", seed=11)
    return train, valid, truth


@pytest.fixture(scope="session")
def sim_classification():
    train, valid, truth = gen_simulated(300, 300, "classification", seed=12)
    return train, valid, truth


@pytest.fixture(scope="session")
def small_models(sim_regression, sim_classification):
    """A handful of fitted models over both losses and several lambdas."""
    models = []
    for (train, _valid, _truth), loss in ((sim_regression, "squared_error"), (sim_classification, "logistic")):
        for lam, depth in ((0.0, 3), (1.0, 4), (10.0, 6)):
            cfg = TrainConfig(eta=0.1, reg_lambda=lam, max_depth=depth, num_boost_round=30, loss=loss)
            models.append((fit(train, cfg), train))
    return models


def continuous_data(n=200, p=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, 0] - 0.5 * X[:, 1] ** 2 + 0.3 * rng.normal(size=n)
    return X, y


@pytest.fixture
def continuous_model():
    X, y = continuous_data()
    return GBTRegressor(eta=0.3, max_depth=3, num_boost_round=20).fit(X, y), X, y
