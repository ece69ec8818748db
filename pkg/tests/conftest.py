"""Configuration file for pytest containing customizations and fixtures.

See https://stackoverflow.com/questions/34466027/in-pytest-what-is-the-use-of-conftest-py-files
"""

from __future__ import annotations

import copy
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
import pytest
from src.invlab.autodiff.nn import Mlp, Module
from src.invlab.autodiff.tensor import Tape, Tensor
from src.invlab.data.dataset import Batch, DatasetSplits, generate
from src.invlab.data.factors import FactorSpec
from src.invlab.data.renderers import build_factor_spec
from src.invlab.pipelines.bundle import Method, TrainConfig

from tests.const import CONFIG_TINY_DICT, GRAD_ATOL, GRAD_RTOL, TINY_DATA, TINY_TRAIN_KWARGS


def numeric_gradient(
    fn: Callable[[np.ndarray], float], point: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + step
        upper = fn(point)
        point[index] = original - step
        lower = fn(point)
        point[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def assert_gradients(
    build_loss: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    *,
    rtol: float = GRAD_RTOL,
    atol: float = GRAD_ATOL,
) -> None:
    """Compare tape gradients of ``build_loss(*tensors)`` with finite differences."""
    leaves = [Tensor(a, requires_grad=True, name=f"arg{k}") for k, a in enumerate(arrays)]
    with Tape() as tape:
        loss = build_loss(*leaves)
    grads = tape.backward(loss, leaves)

    for k, leaf in enumerate(leaves):

        def evaluate(values: np.ndarray, k: int = k) -> float:
            args = [Tensor(values) if j == k else Tensor(a) for j, a in enumerate(arrays)]
            return build_loss(*args).item()

        expected = numeric_gradient(evaluate, leaf.data)
        np.testing.assert_allclose(grads[leaf].data, expected, rtol=rtol, atol=atol)


def assert_parameter_gradients(
    build_loss: Callable[[], Tensor],
    modules: Sequence[Module],
    *,
    rtol: float = GRAD_RTOL,
    atol: float = GRAD_ATOL,
) -> None:
    """Compare tape gradients of ``build_loss()`` in every module parameter with finite differences."""
    params = [param for module in modules for param in module.parameters()]
    with Tape() as tape:
        loss = build_loss()
    grads = tape.backward(loss, params)

    for param in params:

        def evaluate(values: np.ndarray, param: Tensor = param) -> float:
            saved = param.data.copy()
            param.data[...] = values
            try:
                return build_loss().item()
            finally:
                param.data[...] = saved

        expected = numeric_gradient(evaluate, param.data)
        np.testing.assert_allclose(
            grads[param].data, expected, rtol=rtol, atol=atol, err_msg=param.name
        )


def random_problem(
    seed: int, *, size: int = 6, num_classes: int = 3, dim: int = 4, hidden: int = 4
) -> tuple[Mlp, Batch]:
    """Small random network and a batch covering every class and two contexts."""
    rng = np.random.default_rng(seed)
    batch = Batch(
        ids=np.arange(size),
        x=rng.normal(size=(size, dim)),
        y=rng.permutation(np.arange(size) % num_classes),
        c=rng.permutation(np.arange(size) % 2),
    )
    return Mlp([dim, hidden, num_classes], rng=rng, name="net"), batch


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec() -> FactorSpec:
    """Three classes, three contexts, four-dimensional blocks."""
    return build_factor_spec(
        "vector_concat",
        num_classes=TINY_DATA["num_classes"],
        num_contexts=TINY_DATA["num_contexts"],
        noise_std=TINY_DATA["noise_std"],
        seed=TINY_DATA["seed"],
        class_dim=TINY_DATA["class_dim"],
        context_dim=TINY_DATA["context_dim"],
    )


@pytest.fixture(scope="session")
def tiny_splits(tiny_spec: FactorSpec) -> DatasetSplits:
    """Small biased dataset shared by the pipeline tests."""
    return generate(tiny_spec, TINY_DATA["bias_ratio"], TINY_DATA["sizes"], TINY_DATA["seed"])


@pytest.fixture
def tiny_config() -> Callable[..., TrainConfig]:
    """Factory of small training configurations."""

    def make(method: Method | str = Method.ERM, **overrides: Any) -> TrainConfig:
        return TrainConfig(method=Method(method), **{**TINY_TRAIN_KWARGS, **overrides})

    return make


@pytest.fixture
def config_dict_tiny() -> dict:
    """Fixture for the tiny experiment configuration dictionary."""
    return copy.deepcopy(CONFIG_TINY_DICT)
