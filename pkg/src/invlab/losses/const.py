"""Constants for the losses component of invlab."""

from __future__ import annotations

from typing import Final

DEFAULT_GCE_Q: Final = 0.7
DEFAULT_EPSILON: Final = 1e-8
THETA_VALUE: Final = 1.0
SIMPLEX_TOLERANCE: Final = 1e-6
