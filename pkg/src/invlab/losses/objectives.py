"""Classification objectives: cross entropy, GCE, the IRM penalty and weighted ERM."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np

from ..autodiff.tensor import ShapeError, Tensor, as_tensor
from ..data.dataset import Batch, EnvironmentBatch
from .const import DEFAULT_GCE_Q, SIMPLEX_TOLERANCE, THETA_VALUE
from .weights import WeightTable

_LOGGER = logging.getLogger(__name__)

type Model = Callable[[Any], Tensor]
# per-sample CE values and sample ids to raw weights
type WeightFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class PenaltyForm(StrEnum):
    """How per-sample dummy-scale derivatives become one environment penalty."""

    PER_SAMPLE_SQUARED = "per_sample_squared"
    MEAN_SQUARED = "mean_squared"
    MEAN_ABS = "mean_abs"
    PER_SAMPLE_ABS = "per_sample_abs"


@dataclass(frozen=True)
class DummyTheta:
    """Fixed scalar multiplying logits or similarities; never optimized."""

    value: float = THETA_VALUE

    def __call__(self, values: Tensor) -> Tensor:
        """Scale ``values`` by the dummy classifier."""
        return values.scale(self.value)


def _labels(y: Any, logits: Tensor) -> np.ndarray:
    labels = np.asarray(y, dtype=np.int64)
    num_classes = logits.shape[-1]
    expected = logits.shape[:-1]
    if labels.shape != expected:
        msg = f"Labels of shape {labels.shape} do not match logits of shape {logits.shape}"
        raise ShapeError(msg)
    if np.any((labels < 0) | (labels >= num_classes)):
        msg = f"Class labels must be in [0, {num_classes}), got {labels.min()}..{labels.max()}"
        raise ValueError(msg)
    return labels


def _pick(values: Tensor, labels: np.ndarray) -> Tensor:
    """``values[..., y]`` for a vector or per row of a matrix."""
    if values.ndim == 1:
        return values[int(labels)]
    return values[np.arange(len(labels)), labels]


def one_hot(y: Any, num_classes: int) -> np.ndarray:
    """Indicator rows of class labels."""
    return np.eye(num_classes)[np.asarray(y, dtype=np.int64)]


def cross_entropy(logits: Tensor, y: Any) -> Tensor:
    """``-log_softmax(logits)[y]``.

    :param logits: Vector of ``n`` logits, or an ``N x n`` matrix.
    :param y: Class index, or ``N`` class indices.
    :return: Scalar for a vector, per-sample losses of shape ``(N,)`` for a matrix.
    """
    logits = as_tensor(logits)
    labels = _labels(y, logits)
    return -_pick(logits.log_softmax(axis=-1), labels)


def gce(probs: Tensor, y: Any, q: float = DEFAULT_GCE_Q) -> Tensor:
    """Generalized cross entropy ``(1 - p_y^q) / q`` on probabilities.

    :param probs: Simplex vector, or a matrix of simplex rows.
    :param y: Class index or indices.
    :param q: Exponent in ``(0, 1]``.
    """
    _check_q(q)
    probs = as_tensor(probs)
    labels = _labels(y, probs)
    sums = probs.data.sum(axis=-1)
    if np.any(probs.data < -SIMPLEX_TOLERANCE) or np.any(
        np.abs(sums - 1.0) > SIMPLEX_TOLERANCE
    ):
        msg = "gce expects probabilities on the simplex"
        raise ValueError(msg)
    return (1.0 - _pick(probs, labels) ** q).scale(1.0 / q)


def gce_from_logits(logits: Tensor, y: Any, q: float = DEFAULT_GCE_Q) -> Tensor:
    """:func:`gce` of ``softmax(logits)``, evaluated as ``exp(q * log p_y)``."""
    _check_q(q)
    logits = as_tensor(logits)
    labels = _labels(y, logits)
    log_py = _pick(logits.log_softmax(axis=-1), labels)
    return (1.0 - log_py.scale(q).exp()).scale(1.0 / q)


def _check_q(q: float) -> None:
    if not 0.0 < q <= 1.0:
        msg = f"GCE exponent q must be in (0, 1], got {q}"
        raise ValueError(msg)


def erm_loss(model: Model, batch: Batch) -> Tensor:
    """Mean cross entropy of ``model`` over ``batch``."""
    if len(batch) == 0:
        msg = "erm_loss needs a non-empty batch"
        raise ValueError(msg)
    return cross_entropy(model(batch.x), batch.y).mean()


def theta_grad_ce(logits: Tensor, y: Any, theta: DummyTheta | None = None) -> Tensor:
    """Derivative of ``CE(y, softmax(theta * z))`` with respect to ``theta``.

    Closed form ``sum_k (softmax(theta z)_k - y_k) z_k``, differentiable in ``z``.

    :param logits: Vector ``z`` or a matrix of per-sample logits.
    :param y: Class index or indices.
    :param theta: Dummy classifier; defaults to ``1``.
    :return: Scalar, or per-sample derivatives of shape ``(N,)``.
    """
    theta = theta or DummyTheta()
    logits = as_tensor(logits)
    labels = _labels(y, logits)
    residual = theta(logits).softmax(axis=-1) - one_hot(labels, logits.shape[-1])
    return (residual * logits).sum(axis=-1)


def environment_penalty(grads: Tensor, form: PenaltyForm) -> Tensor:
    """Reduce per-sample dummy-scale derivatives of one environment to a penalty."""
    match PenaltyForm(form):
        case PenaltyForm.PER_SAMPLE_SQUARED:
            return grads.square().mean()
        case PenaltyForm.MEAN_SQUARED:
            return grads.mean().square()
        case PenaltyForm.MEAN_ABS:
            return grads.mean().abs()
        case PenaltyForm.PER_SAMPLE_ABS:
            return grads.abs().mean()


def irm_loss(
    model: Model,
    envs: Sequence[EnvironmentBatch],
    lam: float,
    *,
    form: PenaltyForm = PenaltyForm.PER_SAMPLE_SQUARED,
    theta: DummyTheta | None = None,
) -> Tensor:
    """Sum over environments of mean CE plus ``lam`` times the dummy-scale penalty.

    With ``lam == 0`` the penalty is not evaluated, so the value and its
    gradient equal the environment-summed ERM loss exactly.

    :param model: Logit-producing model.
    :param envs: At least two non-empty environments.
    :param lam: Penalty weight, ``>= 0``.
    :param form: Penalty reduction.
    :param theta: Dummy classifier.
    """
    if len(envs) < 2:
        msg = f"irm_loss needs at least two environments, got {len(envs)}"
        raise ValueError(msg)
    if lam < 0:
        msg = f"Penalty weight must be >= 0, got {lam}"
        raise ValueError(msg)

    total: Tensor | None = None
    for env in envs:
        if len(env) == 0:
            msg = f"Environment {env.env_id} is empty"
            raise ValueError(msg)
        logits = model(env.x)
        term = cross_entropy(logits, env.y).mean()
        if lam > 0:
            penalty = environment_penalty(theta_grad_ce(logits, env.y, theta), form)
            term = term + penalty.scale(lam)
        total = term if total is None else total + term
    return total


def normalized_weights(raw: np.ndarray) -> np.ndarray:
    """Rescale batch weights to mean one."""
    raw = np.asarray(raw, dtype=np.float64)
    mean = raw.mean() if raw.size else 0.0
    if not mean > 0:
        msg = "Cannot rescale weights whose mean is not positive"
        raise ValueError(msg)
    return raw / mean


def weighted_ce(logits: Tensor, y: Any, raw_weights: np.ndarray) -> Tensor:
    """Mean of per-sample CE times mean-one rescaled ``raw_weights``."""
    return (cross_entropy(logits, y) * normalized_weights(raw_weights)).mean()


def ipw_erm_loss(
    model: Model, batch: Batch, weights: WeightTable | np.ndarray | WeightFn
) -> Tensor:
    """Inverse-probability weighted ERM.

    :param model: Logit-producing model.
    :param batch: Non-empty batch.
    :param weights: Table keyed by sample id, raw weights aligned with
        ``batch``, or a :data:`WeightFn` called with the detached per-sample
        CE of ``model`` and the batch ids.
    :raises KeyError: If a batch sample has no weight in the table.
    """
    if len(batch) == 0:
        msg = "ipw_erm_loss needs a non-empty batch"
        raise ValueError(msg)
    logits = model(batch.x)
    if isinstance(weights, WeightTable):
        raw = weights.lookup(batch.ids)
    elif callable(weights):
        raw = weights(cross_entropy(logits.detach(), batch.y).data, batch.ids)
    else:
        raw = np.asarray(weights, dtype=np.float64)
    if len(raw) != len(batch):
        msg = f"Got {len(raw)} weights for a batch of {len(batch)}"
        raise ShapeError(msg)
    return weighted_ce(logits, batch.y, raw)
