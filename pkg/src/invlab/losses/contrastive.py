"""Intra-environment contrastive loss and the invariance-as-context objective.

For an environment of ``M`` samples, anchor ``i`` gets one row of logits
``[s+, s_i1, ..., s_iM]`` where ``s+ = phi(x_i) . phi(Aug(x_i))`` and the
remaining entries are similarities to the other members of the environment
(the anchor itself is included only with ``include_self``). The per-anchor
loss is ``logsumexp(theta * row) - theta * s+``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

import numpy as np

from ..autodiff.nn import Module
from ..autodiff.tensor import Tensor, as_tensor, concatenate, dot
from ..data.augment import Augmenter
from ..data.dataset import EnvironmentBatch
from .objectives import DummyTheta, PenaltyForm, environment_penalty

_LOGGER = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12


def _first(rows: Tensor) -> Tensor:
    return rows[0] if rows.ndim == 1 else rows[:, 0]


def _normalize(features: Tensor) -> Tensor:
    norms = (features.square().sum(axis=-1, keepdims=True) + _NORM_FLOOR).sqrt()
    return features / norms


def negative_index(size: int, *, include_self: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the negative similarities of each anchor."""
    cols = np.tile(np.arange(size), (size, 1))
    if not include_self:
        cols = cols[~np.eye(size, dtype=bool)].reshape(size, size - 1)
    rows = np.repeat(np.arange(size)[:, None], cols.shape[1], axis=1)
    return rows, cols


def similarity_logits(
    features: Tensor,
    aug_features: Tensor,
    *,
    include_self: bool = False,
    normalize: bool = False,
    temperature: float = 1.0,
) -> Tensor:
    """Per-anchor similarity rows, positive in column 0.

    :param features: ``phi(x)`` of the environment, ``M x k``.
    :param aug_features: ``phi(Aug(x))``, same shape.
    :param include_self: Also include ``s_ii`` among the negatives.
    :param normalize: L2-normalize features first.
    :param temperature: Divide similarities by this value.
    :return: Matrix of shape ``M x M`` (``M x (M + 1)`` with ``include_self``).
    """
    features = as_tensor(features)
    aug_features = as_tensor(aug_features)
    if temperature <= 0:
        msg = f"temperature must be positive, got {temperature}"
        raise ValueError(msg)
    if normalize:
        features = _normalize(features)
        aug_features = _normalize(aug_features)

    size = features.shape[0]
    positive = dot(features, aug_features).reshape(size, 1)
    rows, cols = negative_index(size, include_self=include_self)
    negatives = (features @ features.T)[rows, cols]
    logits = concatenate([positive, negatives], axis=1)
    return logits if temperature == 1.0 else logits.scale(1.0 / temperature)


def contrastive_from_logits(logits: Tensor, theta: DummyTheta | None = None) -> Tensor:
    """Per-anchor loss ``logsumexp(theta * row) - theta * row[0]``."""
    theta = theta or DummyTheta()
    scaled = theta(as_tensor(logits))
    return scaled.logsumexp(axis=-1) - _first(scaled)


def theta_grad_contrastive(logits: Tensor, theta: DummyTheta | None = None) -> Tensor:
    """Derivative of the per-anchor loss in ``theta``: ``sum_j p_j s_j - s+``.

    ``p`` is the softmax of the ``theta``-scaled row; the result is
    differentiable in the similarities.

    :param logits: One anchor's row ``[s+, s_1, ...]`` or a matrix of rows.
    :param theta: Dummy scale; defaults to ``1``.
    """
    theta = theta or DummyTheta()
    logits = as_tensor(logits)
    probs = theta(logits).softmax(axis=-1)
    return (probs * logits).sum(axis=-1) - _first(logits)


def environment_logits(
    phi: Module,
    env: EnvironmentBatch,
    augmenter: Augmenter,
    aug_seed: Any,
    **similarity: Any,
) -> Tensor:
    """Similarity rows of one environment, augmenting with a generator seeded by ``aug_seed``."""
    if len(env) < 2:
        msg = f"Environment {env.env_id} needs at least two samples, got {len(env)}"
        raise ValueError(msg)
    x_aug = augmenter(env.x, np.random.default_rng(aug_seed))
    return similarity_logits(phi(env.x), phi(x_aug), **similarity)


def intra_class_contrastive(
    phi: Module,
    env: EnvironmentBatch,
    augmenter: Augmenter,
    aug_seed: Any,
    *,
    theta: DummyTheta | None = None,
    include_self: bool = False,
    normalize: bool = False,
    temperature: float = 1.0,
) -> Tensor:
    """Mean over anchors of the intra-environment contrastive loss.

    :param phi: Feature extractor.
    :param env: Environment with at least two samples.
    :param augmenter: Produces ``Aug(x)``.
    :param aug_seed: Seed of the augmentation draws.
    :param theta: Dummy scale.
    """
    logits = environment_logits(
        phi,
        env,
        augmenter,
        aug_seed,
        include_self=include_self,
        normalize=normalize,
        temperature=temperature,
    )
    return contrastive_from_logits(logits, theta).mean()


def irmcon_loss(
    phi: Module,
    class_envs: Sequence[EnvironmentBatch],
    lam: float,
    augmenter: Augmenter,
    aug_seed: int,
    *,
    theta: DummyTheta | None = None,
    form: PenaltyForm = PenaltyForm.MEAN_ABS,
    include_self: bool = False,
    normalize: bool = False,
    temperature: float = 1.0,
) -> Tensor:
    """Invariance-as-context objective over class environments.

    ``sum_e (1/|e|) [L_ct(e) + lam * penalty(e)]`` where ``L_ct`` is the
    anchor-mean contrastive loss of environment ``e`` and the penalty reduces
    the per-anchor ``theta`` derivatives (default: absolute value of their mean).
    Environment ``e`` is augmented with seed ``[aug_seed, env_id]``.
    With ``lam == 0`` each term is :func:`intra_class_contrastive` and the
    penalty is not evaluated.

    :param phi: Context feature extractor.
    :param class_envs: At least two environments, each with two or more samples.
    :param lam: Penalty weight, ``>= 0``.
    :param augmenter: Produces ``Aug(x)``.
    :param aug_seed: Base seed of the augmentation draws.
    """
    if len(class_envs) < 2:
        msg = f"irmcon_loss needs at least two environments, got {len(class_envs)}"
        raise ValueError(msg)
    if lam < 0:
        msg = f"Penalty weight must be >= 0, got {lam}"
        raise ValueError(msg)

    similarity = {
        "include_self": include_self,
        "normalize": normalize,
        "temperature": temperature,
    }
    total: Tensor | None = None
    for env in class_envs:
        seed = [aug_seed, env.env_id]
        if lam > 0:
            logits = environment_logits(phi, env, augmenter, seed, **similarity)
            penalty = environment_penalty(theta_grad_contrastive(logits, theta), form)
            term = contrastive_from_logits(logits, theta).mean() + penalty.scale(lam)
        else:
            term = intra_class_contrastive(phi, env, augmenter, seed, theta=theta, **similarity)
        term = term.scale(1.0 / len(env))
        total = term if total is None else total + term
    return total
