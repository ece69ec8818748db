"""Constants for the training pipelines of invlab."""

from __future__ import annotations

from typing import Final

DEFAULT_EPOCHS: Final = 100
DEFAULT_PRELIM_BIAS_EPOCHS: Final = 10
DEFAULT_BATCH_SIZE: Final = 128
DEFAULT_ENV_BATCH_SIZE: Final = 32
DEFAULT_LR: Final = 0.001
DEFAULT_LAMBDA: Final = 1.0
DEFAULT_LAMBDA_WARMUP: Final = 0.2
DEFAULT_HIDDEN_DIM: Final = 64
DEFAULT_FEATURE_DIM: Final = 32
DEFAULT_CONTEXT_FEATURE_DIM: Final = 16

# floor of the bias model's probability when turning it into a sampling score
SCORE_PROB_FLOOR: Final = 1e-4

# independent random streams derived from the method seed
STREAM_MODELS: Final = 0
STREAM_BATCHES: Final = 1
STREAM_AUGMENT: Final = 2
STREAM_PRELIM: Final = 3
STREAM_CONTEXT: Final = 4
STREAM_BIAS: Final = 5

COMPONENTS: Final = ("phi_c", "f", "phi_b", "f_b", "phi_t", "f_b_on_xt", "aux_head")
