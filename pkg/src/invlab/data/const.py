"""Constants for the synthetic data component of invlab."""

from __future__ import annotations

from typing import Final

import voluptuous as vol

DEFAULT_NUM_CLASSES: Final = 10
DEFAULT_NUM_CONTEXTS: Final = 10
DEFAULT_CLASS_DIM: Final = 8
DEFAULT_CONTEXT_DIM: Final = 8
DEFAULT_IMAGE_SIZE: Final = 8
DEFAULT_VECTOR_NOISE: Final = 0.25
DEFAULT_GRID_NOISE: Final = 0.05
DEFAULT_SIZES: Final = {"train": 5000, "val": 2000, "test": 8000}

DEFAULT_AUG_NOISE: Final = 0.05
DEFAULT_FLIP_PROB: Final = 0.5
DEFAULT_NOISE_PROB: Final = 0.5

# prototypes must be further apart than this many noise standard deviations
PROTOTYPE_SEPARATION: Final = 4.0
PROTOTYPE_MAX_ATTEMPTS: Final = 1000

DATASET_FORMAT: Final = "invlab-dataset"
DATASET_VERSION: Final = 1
SPLIT_FILES: Final = {"train": "train.csv", "val": "val.csv", "test": "test.csv"}


def _matrix(data: list) -> list:
    """Validate a non-empty rectangular list of float rows."""
    if not data or len({len(row) for row in data}) != 1:
        msg = "prototype matrix must be non-empty and rectangular"
        raise vol.Invalid(msg)
    return data


FACTOR_SPEC_SCHEMA: Final = vol.Schema(
    {
        vol.Required("kind"): vol.In(["vector_concat", "color_grid"]),
        vol.Required("class_prototypes"): vol.All([[vol.Coerce(float)]], _matrix),
        vol.Required("context_prototypes"): vol.All([[vol.Coerce(float)]], _matrix),
        vol.Required("noise_std"): vol.All(vol.Coerce(float), vol.Range(min=0)),
        vol.Optional("image_size", default=None): vol.Any(None, vol.All(int, vol.Range(min=1))),
    },
    extra=vol.PREVENT_EXTRA,
)

DATASET_HEADER_SCHEMA: Final = vol.Schema(
    {
        vol.Required("format"): DATASET_FORMAT,
        vol.Required("version"): DATASET_VERSION,
        vol.Required("spec"): FACTOR_SPEC_SCHEMA,
        vol.Required("bias_ratio"): vol.All(vol.Coerce(float), vol.Range(min=0, max=1)),
        vol.Required("seed"): int,
        vol.Required("split"): vol.In(list(SPLIT_FILES)),
    },
    extra=vol.PREVENT_EXTRA,
)
