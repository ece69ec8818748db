"""Ground-truth factor specification of the synthetic generative process."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

import numpy as np

from .const import FACTOR_SPEC_SCHEMA, PROTOTYPE_SEPARATION

_LOGGER = logging.getLogger(__name__)


class GeneratorKind(StrEnum):
    """How ``x = g(x_c, x_t)`` is rendered."""

    VECTOR_CONCAT = "vector_concat"
    COLOR_GRID = "color_grid"


def min_pairwise_distance(points: np.ndarray) -> float:
    """Smallest L2 distance between any two rows; ``inf`` for a single row."""
    if len(points) < 2:
        return float("inf")
    diffs = points[:, None, :] - points[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))
    upper = np.triu_indices(len(points), k=1)
    return float(dists[upper].min())


def _readonly(values: Any) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FactorSpec:
    """Class and context prototypes plus rendering parameters.

    Class ``k`` is rendered from ``class_prototypes[k]`` (``x_c``) and context
    ``j`` from ``context_prototypes[j]`` (``x_t``).

    :param kind: Rendering function.
    :param class_prototypes: ``n x d_c`` matrix.
    :param context_prototypes: ``m x d_t`` matrix.
    :param noise_std: Standard deviation of the rendering noise.
    :param image_size: Side length ``p`` of ``color_grid`` images.
    """

    kind: GeneratorKind
    class_prototypes: np.ndarray = field(repr=False)
    context_prototypes: np.ndarray = field(repr=False)
    noise_std: float
    image_size: int | None = None

    def __post_init__(self) -> None:
        """Validate shapes and prototype separation."""
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        object.__setattr__(self, "class_prototypes", _readonly(self.class_prototypes))
        object.__setattr__(
            self, "context_prototypes", _readonly(self.context_prototypes)
        )
        if self.noise_std < 0:
            msg = f"noise_std must be non-negative, got {self.noise_std}"
            raise ValueError(msg)
        for label, protos in (
            ("class", self.class_prototypes),
            ("context", self.context_prototypes),
        ):
            if protos.ndim != 2 or protos.shape[0] < 1:
                msg = f"{label} prototypes must be a non-empty matrix, got {protos.shape}"
                raise ValueError(msg)
            separation = min_pairwise_distance(protos)
            if separation <= PROTOTYPE_SEPARATION * self.noise_std:
                msg = (
                    f"{label} prototypes are too close: minimum distance "
                    f"{separation:.4f} must exceed "
                    f"{PROTOTYPE_SEPARATION * self.noise_std:.4f}"
                )
                raise ValueError(msg)

        if self.kind is GeneratorKind.COLOR_GRID:
            size = self.image_size
            if size is None or self.class_dim != size * size or self.context_dim != 3:
                msg = (
                    "color_grid specs need image_size p, p*p-pixel glyphs and RGB "
                    f"colors; got image_size={size}, glyph width {self.class_dim}, "
                    f"color width {self.context_dim}"
                )
                raise ValueError(msg)

    @property
    def num_classes(self) -> int:
        """Number of classes ``n``."""
        return self.class_prototypes.shape[0]

    @property
    def num_contexts(self) -> int:
        """Number of contexts ``m``."""
        return self.context_prototypes.shape[0]

    @property
    def class_dim(self) -> int:
        """Width of a class prototype."""
        return self.class_prototypes.shape[1]

    @property
    def context_dim(self) -> int:
        """Width of a context prototype."""
        return self.context_prototypes.shape[1]

    @property
    def observation_dim(self) -> int:
        """Length of a rendered observation vector."""
        if self.kind is GeneratorKind.COLOR_GRID:
            return self.class_dim * 3
        return self.class_dim + self.context_dim

    def to_dict(self) -> dict[str, Any]:
        """Serialize to plain Python types."""
        return {
            "kind": str(self.kind),
            "class_prototypes": self.class_prototypes.tolist(),
            "context_prototypes": self.context_prototypes.tolist(),
            "noise_std": float(self.noise_std),
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FactorSpec:
        """Inverse of :meth:`to_dict`."""
        validated = FACTOR_SPEC_SCHEMA(data)
        return cls(
            kind=GeneratorKind(validated["kind"]),
            class_prototypes=np.asarray(validated["class_prototypes"]),
            context_prototypes=np.asarray(validated["context_prototypes"]),
            noise_std=validated["noise_std"],
            image_size=validated["image_size"],
        )
