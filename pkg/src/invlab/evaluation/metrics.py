"""Accuracy on balanced data, split by bias alignment."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..autodiff.tensor import Tensor, as_tensor
from ..data.dataset import Batch, SyntheticDataset

_LOGGER = logging.getLogger(__name__)

EVAL_CHUNK = 4096


@dataclass(frozen=True)
class AccuracyBreakdown:
    """Exact accuracy counts.

    ``overall`` is the sample-weighted mean of ``aligned`` and ``conflicting``.
    A subset without samples reports ``nan``.
    """

    overall: float
    per_class: np.ndarray = field(repr=False)
    aligned: float
    conflicting: float
    num_samples: int
    num_aligned: int
    num_conflicting: int

    def as_metrics(self) -> dict[str, float]:
        """Scalar metrics keyed by the names used in ``metrics.csv``."""
        return {
            "accuracy": self.overall,
            "aligned_accuracy": self.aligned,
            "conflicting_accuracy": self.conflicting,
        }


def predict(model: Callable[[Any], Tensor], x: np.ndarray) -> np.ndarray:
    """Argmax class predictions, evaluated in chunks without recording."""
    preds = [
        np.argmax(as_tensor(model(x[start : start + EVAL_CHUNK])).data, axis=-1)
        for start in range(0, len(x), EVAL_CHUNK)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _fraction(hits: np.ndarray) -> float:
    return float(hits.mean()) if hits.size else float("nan")


def accuracy_breakdown(
    predictions: np.ndarray, batch: Batch, num_classes: int
) -> AccuracyBreakdown:
    """Break accuracy of ``predictions`` down by class and alignment."""
    hits = np.asarray(predictions) == batch.y
    aligned = batch.aligned
    per_class = np.array(
        [_fraction(hits[batch.y == k]) for k in range(num_classes)], dtype=np.float64
    )
    return AccuracyBreakdown(
        overall=_fraction(hits),
        per_class=per_class,
        aligned=_fraction(hits[aligned]),
        conflicting=_fraction(hits[~aligned]),
        num_samples=int(hits.size),
        num_aligned=int(aligned.sum()),
        num_conflicting=int((~aligned).sum()),
    )


def unbiased_accuracy(
    model: Callable[[Any], Tensor],
    dataset: SyntheticDataset,
    *,
    strict: bool = True,
) -> AccuracyBreakdown:
    """Accuracy of ``model`` on a context-balanced dataset.

    :param model: Logit-producing model.
    :param dataset: Evaluation split.
    :param strict: Reject an unbalanced dataset instead of warning.
    :return: Overall, per-class, aligned and conflicting accuracy.
    """
    if not dataset.is_balanced():
        msg = f"The {dataset.split} split is not context-balanced"
        if strict:
            raise ValueError(msg)
        _LOGGER.warning("%s; reporting accuracy anyway", msg)
    return accuracy_breakdown(
        predict(model, dataset.data.x), dataset.data, dataset.num_classes
    )
