"""Constants."""

from __future__ import annotations

from typing import Final

DEFAULT_OUTPUT: Final = "runs"
DEFAULT_SEEDS: Final = (0, 1, 2)
DEFAULT_SUMMARY_METRICS: Final = ("test_accuracy",)

# sweep axis shorthands and the configuration keys they set
AXIS_ALIASES: Final = {
    "method": "method.name",
    "rho": "data.bias_ratio",
    "seed": "method.seed",
}

THREADS_ENV: Final = "INVLAB_THREADS"
