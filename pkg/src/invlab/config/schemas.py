"""Experiment configuration validation schemas (Voluptuous)."""

from __future__ import annotations

from typing import Any, Final

from voluptuous import (
    All,
    Any as AnyOf,
    Boolean,
    Coerce,
    In,
    Invalid,
    Length,
    Optional,
    Range,
    Required,
    Schema,
)

from ..data import color_grid, vector_concat  # noqa: F401  # register generators
from ..data.factors import GeneratorKind
from ..data.renderers import RENDERER_FACTORY
from ..evaluation.probe import (
    DEFAULT_CLASS_LEAK_MARGIN,
    DEFAULT_CONTEXT_THRESHOLD,
    DEFAULT_PROBE_BATCH_SIZE,
    DEFAULT_PROBE_EPOCHS,
    DEFAULT_PROBE_LR,
)
from ..losses.const import DEFAULT_EPSILON, DEFAULT_GCE_Q
from ..losses.objectives import PenaltyForm
from ..pipelines.bundle import Method
from ..pipelines.const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CONTEXT_FEATURE_DIM,
    DEFAULT_ENV_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_LAMBDA,
    DEFAULT_LAMBDA_WARMUP,
    DEFAULT_LR,
    DEFAULT_PRELIM_BIAS_EPOCHS,
)
from .const import DEFAULT_OUTPUT, DEFAULT_SEEDS, DEFAULT_SUMMARY_METRICS


def _positive_int(msg: str = "must be a positive integer") -> All:
    return All(Coerce(int), Range(min=1, msg=msg))


def _non_negative_int(msg: str = "must be a non-negative integer") -> All:
    return All(Coerce(int), Range(min=0, msg=msg))


def _positive_float(msg: str = "must be positive") -> All:
    return All(Coerce(float), Range(min=0.0, min_included=False, msg=msg))


def _probability(name: str) -> All:
    return All(Coerce(float), Range(0.0, 1.0, msg=f"{name} must be between 0 and 1"))


def _choice(options: list[str]) -> All:
    return All(str, In(options, msg=f"must be one of {options}"))


STR: Final = All(str, Length(min=1, msg="cannot be empty"))
OPTIONAL_EPOCHS: Final = AnyOf(None, _non_negative_int())
PENALTY: Final = _choice([str(form) for form in PenaltyForm])

METHOD_SCHEMA: Final = Schema(
    {
        Required("name"): _choice([str(method) for method in Method]),
        Optional("epochs", default=DEFAULT_EPOCHS): _non_negative_int(),
        Optional("context_epochs", default=None): OPTIONAL_EPOCHS,
        Optional("bias_epochs", default=None): OPTIONAL_EPOCHS,
        Optional("prelim_bias_epochs", default=DEFAULT_PRELIM_BIAS_EPOCHS): _non_negative_int(),
        Optional("batch_size", default=DEFAULT_BATCH_SIZE): _positive_int(),
        Optional("env_batch_size", default=DEFAULT_ENV_BATCH_SIZE): _positive_int(),
        Optional("optimizer", default="adam"): _choice(["adam", "sgd"]),
        Optional("lr", default=DEFAULT_LR): _positive_float("lr must be positive"),
        Optional("lambda", default=DEFAULT_LAMBDA): All(
            Coerce(float), Range(min=0.0, msg="lambda must be >= 0")
        ),
        Optional("lambda_warmup", default=DEFAULT_LAMBDA_WARMUP): _probability("lambda_warmup"),
        Optional("irm_penalty", default=str(PenaltyForm.PER_SAMPLE_SQUARED)): PENALTY,
        Optional("irmcon_penalty", default=str(PenaltyForm.MEAN_ABS)): PENALTY,
        Optional("reset_optimizer_on_warmup", default=False): Boolean(),
        Optional("q", default=DEFAULT_GCE_Q): All(
            Coerce(float), Range(0.0, 1.0, min_included=False, msg="q must be in (0, 1]")
        ),
        Optional("epsilon", default=DEFAULT_EPSILON): _positive_float("epsilon must be positive"),
        Optional("aug_noise_std", default=0.05): All(Coerce(float), Range(min=0.0)),
        Optional("aug_flip_prob", default=0.5): _probability("aug_flip_prob"),
        Optional("aug_noise_prob", default=0.5): _probability("aug_noise_prob"),
        Optional("include_self", default=False): Boolean(),
        Optional("normalize_features", default=False): Boolean(),
        Optional("temperature", default=1.0): _positive_float("temperature must be positive"),
        Optional("aux_gce_on_context", default=False): Boolean(),
        Optional("weighted_sampling", default=False): Boolean(),
        Optional("hidden_dim", default=DEFAULT_HIDDEN_DIM): _positive_int(),
        Optional("feature_dim", default=DEFAULT_FEATURE_DIM): _positive_int(),
        Optional("context_feature_dim", default=DEFAULT_CONTEXT_FEATURE_DIM): _positive_int(),
        Optional("eval_every", default=1): _positive_int(),
        Optional("seed", default=0): Coerce(int),
    },
    extra=False,
)

EVAL_SCHEMA: Final = Schema(
    {
        Optional("probe_epochs", default=DEFAULT_PROBE_EPOCHS): _positive_int(),
        Optional("probe_lr", default=DEFAULT_PROBE_LR): _positive_float("probe_lr must be positive"),
        Optional("probe_batch_size", default=DEFAULT_PROBE_BATCH_SIZE): _positive_int(),
        Optional("context_threshold", default=DEFAULT_CONTEXT_THRESHOLD): _probability(
            "context_threshold"
        ),
        Optional("class_leak_margin", default=DEFAULT_CLASS_LEAK_MARGIN): _probability(
            "class_leak_margin"
        ),
        Optional("strict_balance", default=True): Boolean(),
    },
    extra=False,
)

SWEEP_SCHEMA: Final = Schema(
    {
        Optional("methods"): All([_choice([str(method) for method in Method])], Length(min=1)),
        Optional("bias_ratios"): All([_probability("bias_ratio")], Length(min=1)),
        Optional("seeds", default=list(DEFAULT_SEEDS)): All([Coerce(int)], Length(min=1)),
        Optional("axes", default=dict): {STR: All(list, Length(min=1))},
        Optional("summary_metrics", default=list(DEFAULT_SUMMARY_METRICS)): All(
            [STR], Length(min=1)
        ),
        Optional("n_jobs", default=1): _positive_int(),
    },
    extra=False,
)


def data_schema(value: Any) -> dict[str, Any]:
    """Validate a ``data:`` section with the schema of its generator."""
    if not isinstance(value, dict):
        msg = "expected a dictionary"
        raise Invalid(msg)
    kind = value.get("generator", str(GeneratorKind.VECTOR_CONCAT))
    try:
        schema = RENDERER_FACTORY.get_schema(kind)
    except ValueError as exc:
        msg = (
            f"unknown generator {kind!r}, valid options: "
            f"{RENDERER_FACTORY.get_renderer_list_str()}"
        )
        raise Invalid(msg, path=["generator"]) from exc
    return schema(value)


EXPERIMENT_SCHEMA: Final = Schema(
    {
        Optional("data", default=dict): data_schema,
        Required("method"): METHOD_SCHEMA,
        Optional("eval", default=dict): EVAL_SCHEMA,
        Optional("output", default=DEFAULT_OUTPUT): STR,
        Optional("sweep"): SWEEP_SCHEMA,
    },
    extra=False,
)
