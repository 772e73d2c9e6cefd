"""
Test configuration and fixtures for layerwise
"""

from typing import List

import numpy as np
import pytest

from layerwise.core.logging import setup_logging
from layerwise.models.layers import LayerKind, LayerSpec
from layerwise.models.network import LayeredModel, build_model
from layerwise.schemas.common import TaskKind
from layerwise.schemas.experiments import DatasetSpec, GeneratorParams
from layerwise.schemas.training import OptimizerConfig, TrainConfig
from layerwise.services.datasets import SequenceDataset, TaskData, prepare_task
from layerwise.services.training import FitResult, fit


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run multi-seed trend tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """Keep test output readable; logs go to stderr"""
    setup_logging("WARNING")


# Model specs

def spec(kind: str, n_in: int, n_out: int, **kwargs) -> LayerSpec:
    return LayerSpec(kind=LayerKind(kind), input_dim=n_in, output_dim=n_out, **kwargs)


@pytest.fixture
def seq_specs() -> List[LayerSpec]:
    """4-layer sequence classifier over a 4-token vocabulary"""
    return [
        spec("embedding", 4, 4),
        spec("tanh_rnn", 4, 6),
        spec("dense", 6, 6, activation="tanh"),
        spec("output", 6, 2),
    ]


@pytest.fixture
def lstm_specs() -> List[LayerSpec]:
    """4-layer character model: embedding, lstm, dense, output"""
    return [
        spec("embedding", 5, 3),
        spec("lstm", 3, 4),
        spec("dense", 4, 4, activation="tanh"),
        spec("output", 4, 5),
    ]


@pytest.fixture
def dense_specs() -> List[LayerSpec]:
    return [
        spec("dense", 3, 4, activation="tanh"),
        spec("dense", 4, 4, activation="tanh"),
        spec("dense", 4, 4, activation="tanh"),
        spec("output", 4, 3),
    ]


# Data

@pytest.fixture
def tiny_dataset_spec() -> DatasetSpec:
    return DatasetSpec(
        kind=TaskKind.SEQ_CLASSIFY,
        generator=GeneratorParams(seq_len=4, vocab_size=4, num_samples=120),
        dev_fraction=0.2,
        test_fraction=0.2,
        subset_fractions=[0.25, 0.5],
        unseen_fraction=0.5,
        seed=3,
    )


@pytest.fixture
def tiny_task(tiny_dataset_spec) -> TaskData:
    return prepare_task(tiny_dataset_spec)


@pytest.fixture
def separable_set() -> SequenceDataset:
    """Labels equal to the first token: learnable in a few epochs"""
    rng = np.random.default_rng(0)
    inputs = rng.integers(0, 4, size=(32, 3))
    labels = (inputs[:, 0] >= 2).astype(np.int64)
    return SequenceDataset(inputs, labels, TaskKind.SEQ_CLASSIFY)


# Training

@pytest.fixture
def fast_config() -> TrainConfig:
    return TrainConfig(
        optimizer=OptimizerConfig(name="adam", lr=0.05),
        batch_size=16,
        max_epochs=3,
        patience=2,
        seed=11,
    )


@pytest.fixture
def trained(seq_specs, tiny_task, fast_config) -> tuple:
    """(model, fit result) of a short joint run"""
    model = build_model(seq_specs, seed=5, task=TaskKind.SEQ_CLASSIFY, vocab_size=4)
    result = fit(model, tiny_task.pool, tiny_task.dev, fast_config)
    return model, result


@pytest.fixture
def trained_model(trained) -> LayeredModel:
    return trained[0]


@pytest.fixture
def fit_result(trained) -> FitResult:
    return trained[1]


# Assertion helpers

class Helpers:
    @staticmethod
    def assert_layers_identical(a: LayeredModel, b: LayeredModel, layers) -> None:
        for index in layers:
            pa, pb = a.layers[index].params, b.layers[index].params
            assert set(pa) == set(pb), f"layer {index} parameter names differ"
            for name in pa:
                assert pa[name].tobytes() == pb[name].tobytes(), f"layer {index}.{name} changed"

    @classmethod
    def assert_frozen_unchanged(cls, before: LayeredModel, after: LayeredModel) -> None:
        frozen = [i for i, flag in enumerate(after.frozen_flags) if flag]
        assert frozen, "expected at least one frozen layer"
        cls.assert_layers_identical(before, after, frozen)

    @staticmethod
    def snapshot(model: LayeredModel) -> LayeredModel:
        return model.copy()


@pytest.fixture
def helpers() -> Helpers:
    return Helpers()
