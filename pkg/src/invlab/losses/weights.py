"""Inverse-probability sample weights and the table that stores them."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
import pandas as pd

from ..autodiff.tensor import Tensor
from .const import DEFAULT_EPSILON

_LOGGER = logging.getLogger(__name__)

WEIGHT_COLUMNS = ["sample_id", "ce_main", "ce_bias", "weight", "provenance"]


class Provenance(StrEnum):
    """Which bias estimate produced the weights."""

    LFF = "lff"
    IRMCON = "irmcon"


def _check_non_negative(label: str, value: Tensor | np.ndarray | float) -> None:
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    if np.any(data < 0):
        msg = f"{label} must be non-negative, got minimum {float(np.min(data))}"
        raise ValueError(msg)


def lff_weight(
    ce_main: Tensor | np.ndarray | float,
    ce_bias: Tensor | np.ndarray | float,
    epsilon: float = DEFAULT_EPSILON,
) -> Tensor | np.ndarray | float:
    """Relative difficulty weight ``(ce_b + eps) / (ce_m + ce_b + 2 eps)``.

    Works elementwise on floats, arrays and tensors; with tensor inputs the
    result is differentiable.

    :param ce_main: Cross entropy of the main classifier.
    :param ce_bias: Cross entropy of the bias classifier.
    :param epsilon: Clamp against a vanishing bias cross entropy.
    :return: Weight in ``(0, 1]``.
    """
    _check_non_negative("ce_main", ce_main)
    _check_non_negative("ce_bias", ce_bias)
    if isinstance(ce_main, Tensor) or isinstance(ce_bias, Tensor):
        bias = ce_bias + epsilon
        return bias / (ce_main + bias + epsilon)
    weight = (np.asarray(ce_bias) + epsilon) / (
        np.asarray(ce_main) + np.asarray(ce_bias) + 2.0 * epsilon
    )
    return float(weight) if weight.ndim == 0 else weight


def irmcon_weight(
    ce_main: Tensor | np.ndarray | float,
    ce_bias_on_xt: Tensor | np.ndarray | float,
    epsilon: float = DEFAULT_EPSILON,
) -> Tensor | np.ndarray | float:
    """Same fraction as :func:`lff_weight`, fed with the bias CE of ``f_b(phi_t(x))``."""
    return lff_weight(ce_main, ce_bias_on_xt, epsilon)


@dataclass(eq=False)
class WeightTable:
    """Per-sample weights keyed by sample id.

    :param frame: Indexed by ``sample_id`` with columns ``ce_main``,
        ``ce_bias`` and ``weight``.
    :param provenance: Bias estimate behind ``ce_bias``.
    :param epsilon: Clamp used by the weight formula.
    """

    frame: pd.DataFrame
    provenance: Provenance
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        self.provenance = Provenance(self.provenance)
        if not self.frame.index.is_unique:
            msg = "WeightTable sample ids must be unique"
            raise ValueError(msg)
        weights = self.frame["weight"].to_numpy()
        if np.isnan(weights).any() or np.any(weights <= 0) or np.any(weights > 1):
            msg = "WeightTable weights must lie in (0, 1] without NaN"
            raise ValueError(msg)

    @classmethod
    def from_losses(
        cls,
        ids: np.ndarray,
        ce_main: np.ndarray,
        ce_bias: np.ndarray,
        provenance: Provenance,
        epsilon: float = DEFAULT_EPSILON,
    ) -> WeightTable:
        """Compute weights from per-sample cross entropies."""
        ce_main = np.asarray(ce_main, dtype=np.float64)
        ce_bias = np.asarray(ce_bias, dtype=np.float64)
        frame = pd.DataFrame(
            {
                "ce_main": ce_main,
                "ce_bias": ce_bias,
                "weight": np.atleast_1d(lff_weight(ce_main, ce_bias, epsilon)),
            },
            index=pd.Index(np.asarray(ids, dtype=np.int64), name="sample_id"),
        )
        return cls(frame=frame, provenance=provenance, epsilon=epsilon)

    def __len__(self) -> int:
        return len(self.frame)

    def __contains__(self, sample_id: object) -> bool:
        return sample_id in self.frame.index

    @property
    def weights(self) -> pd.Series:
        """Weights indexed by sample id."""
        return self.frame["weight"]

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        """Weights of ``ids`` in the given order.

        :raises KeyError: If any id has no weight.
        """
        ids = np.asarray(ids, dtype=np.int64)
        missing = ~np.isin(ids, self.frame.index.to_numpy())
        if missing.any():
            msg = f"No weight for sample ids {ids[missing][:5].tolist()}"
            raise KeyError(msg)
        return self.frame["weight"].reindex(ids).to_numpy()

    def to_csv(self, path: Path) -> Path:
        """Write ``sample_id, ce_main, ce_bias, weight, provenance`` rows."""
        frame = self.frame.reset_index()
        frame["provenance"] = str(self.provenance)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame[WEIGHT_COLUMNS].to_csv(path, index=False, lineterminator="\n")
        _LOGGER.debug("Wrote %d %s weights to %s", len(frame), self.provenance, path)
        return path

    @classmethod
    def from_csv(cls, path: Path, epsilon: float = DEFAULT_EPSILON) -> WeightTable:
        """Read a table written by :meth:`to_csv`."""
        if not path.is_file():
            msg = f"Weight file {path} not found."
            raise FileNotFoundError(msg)
        frame = pd.read_csv(path, float_precision="round_trip")
        provenances = frame["provenance"].unique()
        if len(provenances) != 1:
            msg = f"Weight file {path} mixes provenances {list(provenances)}"
            raise ValueError(msg)
        frame = frame.drop(columns="provenance").set_index("sample_id")
        return cls(frame=frame, provenance=Provenance(provenances[0]), epsilon=epsilon)
