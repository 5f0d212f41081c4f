import numpy as np
import pytest

from classes.Dataset import Normalizer, fit_normalizer, gen_syn_linear, gen_syn_nonlinear, split
from classes.Mlp import Architecture, Layer, MlpModel, TrainConfig, mlp_init, train
from classes.Oracle import CfConfig, CfOracle


def linear_model(theta, bias):
    """One-layer sigmoid model sigma(theta . x + bias)."""
    theta = np.asarray(theta, dtype=float)
    return MlpModel([Layer(theta.reshape(1, -1), np.array([bias], dtype=float), "sigmoid")], theta.shape[0])


def train_cloud(dataset, hidden, epochs, seed=0):
    splits = split(dataset, seed)
    normalizer = fit_normalizer(splits.train)
    arch = Architecture.from_hidden(dataset.dim, hidden)
    cfg = TrainConfig(learning_rate=0.005, batch_size=32, epochs=epochs, seed=seed)
    model = train(mlp_init(arch, seed), normalizer.apply(splits.train.features), splits.train.labels, cfg)
    return splits, model, normalizer


@pytest.fixture
def boundary_model():
    """theta = (1, 0), b = -3: boundary at x1 = 3."""
    return linear_model([1.0, 0.0], -3.0)


@pytest.fixture
def linear_oracle(boundary_model):
    return CfOracle(boundary_model, CfConfig(), Normalizer.identity(2))


@pytest.fixture(scope="session")
def syn_linear_cloud():
    """(splits, model, normalizer) of a cloud model trained on synthetic-linear data with the default cloud settings."""
    return train_cloud(gen_syn_linear(2000, 0), [10], 200)


@pytest.fixture(scope="session")
def syn_nonlinear_cloud():
    return train_cloud(gen_syn_nonlinear(2000, 0), [20, 10], 500)


@pytest.fixture
def make_linear():
    return linear_model
