"""Training configuration, model bundle, model selection and run records."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from ..autodiff.nn import Classifier, Linear, Mlp, Module
from ..autodiff.tensor import Tensor
from ..data.augment import Augmenter
from ..data.dataset import SyntheticDataset
from ..data.renderers import Renderer
from ..evaluation.metrics import unbiased_accuracy
from ..losses.const import DEFAULT_EPSILON, DEFAULT_GCE_Q
from ..losses.objectives import DummyTheta, PenaltyForm
from ..losses.weights import WeightTable
from .const import (
    COMPONENTS,
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
    STREAM_MODELS,
)

_LOGGER = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "split", "metric", "value"]

# configuration keys whose attribute name differs
_RENAMED = {"name": "method", "lambda": "lam"}


class Method(StrEnum):
    """Training methods."""

    ERM = "erm"
    IRM = "irm"
    LFF_IPW = "lff_ipw"
    IRMCON_IPW = "irmcon_ipw"


def method_stream(seed: int, stream: int) -> np.random.SeedSequence:
    """Seed sequence of one independent random stream of a run."""
    return np.random.SeedSequence([seed, stream])


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run; see the ``method:`` config section."""

    method: Method = Method.ERM
    epochs: int = DEFAULT_EPOCHS
    context_epochs: int | None = None
    bias_epochs: int | None = None
    prelim_bias_epochs: int = DEFAULT_PRELIM_BIAS_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    env_batch_size: int = DEFAULT_ENV_BATCH_SIZE
    optimizer: str = "adam"
    lr: float = DEFAULT_LR
    lam: float = DEFAULT_LAMBDA
    lambda_warmup: float = DEFAULT_LAMBDA_WARMUP
    irm_penalty: PenaltyForm = PenaltyForm.PER_SAMPLE_SQUARED
    irmcon_penalty: PenaltyForm = PenaltyForm.MEAN_ABS
    reset_optimizer_on_warmup: bool = False
    q: float = DEFAULT_GCE_Q
    epsilon: float = DEFAULT_EPSILON
    aug_noise_std: float = 0.05
    aug_flip_prob: float = 0.5
    aug_noise_prob: float = 0.5
    include_self: bool = False
    normalize_features: bool = False
    temperature: float = 1.0
    aux_gce_on_context: bool = False
    weighted_sampling: bool = False
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    feature_dim: int = DEFAULT_FEATURE_DIM
    context_feature_dim: int = DEFAULT_CONTEXT_FEATURE_DIM
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate ranges the schema cannot express."""
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "irm_penalty", PenaltyForm(self.irm_penalty))
        object.__setattr__(self, "irmcon_penalty", PenaltyForm(self.irmcon_penalty))
        if self.lam < 0:
            msg = f"lambda must be >= 0, got {self.lam}"
            raise ValueError(msg)
        if not 0.0 < self.q <= 1.0:
            msg = f"q must be in (0, 1], got {self.q}"
            raise ValueError(msg)
        if not 0.0 <= self.lambda_warmup <= 1.0:
            msg = f"lambda_warmup must be in [0, 1], got {self.lambda_warmup}"
            raise ValueError(msg)
        if self.epochs < 0:
            msg = f"epochs must be >= 0, got {self.epochs}"
            raise ValueError(msg)
        if self.eval_every < 1:
            msg = f"eval_every must be >= 1, got {self.eval_every}"
            raise ValueError(msg)
        if self.method is Method.IRMCON_IPW and min(self.batch_size, self.env_batch_size) < 2:
            msg = "Contrastive training needs batch sizes of at least 2"
            raise ValueError(msg)

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any]) -> TrainConfig:
        """Build from a validated ``method:`` configuration section."""
        return cls(**{_RENAMED.get(key, key): value for key, value in section.items()})

    def to_dict(self) -> dict[str, Any]:
        """Inverse of :meth:`from_mapping`, with plain-typed values."""
        inverse = {attr: key for key, attr in _RENAMED.items()}
        section: dict[str, Any] = {}
        for item in dataclasses.fields(self):
            value = getattr(self, item.name)
            section[inverse.get(item.name, item.name)] = (
                str(value) if isinstance(value, StrEnum) else value
            )
        return section

    @property
    def context_stage_epochs(self) -> int:
        """Epochs of context extractor training."""
        return self.epochs if self.context_epochs is None else self.context_epochs

    @property
    def bias_stage_epochs(self) -> int:
        """Epochs of bias model training."""
        return self.epochs if self.bias_epochs is None else self.bias_epochs

    def warmup_epochs(self, total: int) -> int:
        """Leading epochs trained with the penalty switched off."""
        return int(round(self.lambda_warmup * total))

    def augmenter(self, renderer: Renderer) -> Augmenter:
        """Augmentation operator configured by this run."""
        return Augmenter(
            renderer,
            noise_std=self.aug_noise_std,
            flip_prob=self.aug_flip_prob,
            noise_prob=self.aug_noise_prob,
        )


@dataclass(eq=False)
class ModelBundle:
    """Every learnable piece of the pipelines plus the fixed dummy scale.

    ``phi_c``/``f`` form the main classifier, ``phi_b``/``f_b`` the biased
    classifier, ``phi_t`` the context extractor, ``f_b_on_xt`` the bias head
    on context features and ``aux_head`` the optional class head on them.
    """

    phi_c: Mlp
    f: Linear
    phi_b: Mlp
    f_b: Linear
    phi_t: Mlp
    f_b_on_xt: Linear
    aux_head: Linear
    theta: DummyTheta = field(default_factory=DummyTheta)

    @classmethod
    def build(cls, input_dim: int, num_classes: int, config: TrainConfig) -> ModelBundle:
        """Initialize every component from its own seed stream.

        :param input_dim: Observation length ``d``.
        :param num_classes: Number of classes ``n``.
        :param config: Supplies widths and the seed.
        """
        rngs = dict(
            zip(
                COMPONENTS,
                (
                    np.random.default_rng(child)
                    for child in method_stream(config.seed, STREAM_MODELS).spawn(
                        len(COMPONENTS)
                    )
                ),
                strict=True,
            )
        )
        hidden, feat, ctx = config.hidden_dim, config.feature_dim, config.context_feature_dim
        return cls(
            phi_c=Mlp([input_dim, hidden, hidden, feat], rng=rngs["phi_c"], name="phi_c"),
            f=Linear(feat, num_classes, rng=rngs["f"], name="f"),
            phi_b=Mlp([input_dim, hidden, hidden, feat], rng=rngs["phi_b"], name="phi_b"),
            f_b=Linear(feat, num_classes, rng=rngs["f_b"], name="f_b"),
            phi_t=Mlp([input_dim, hidden, hidden, ctx], rng=rngs["phi_t"], name="phi_t"),
            f_b_on_xt=Linear(ctx, num_classes, rng=rngs["f_b_on_xt"], name="f_b_on_xt"),
            aux_head=Linear(ctx, num_classes, rng=rngs["aux_head"], name="aux_head"),
        )

    @property
    def main(self) -> Classifier:
        """The debiased classifier ``f(phi_c(x))``."""
        return Classifier(self.phi_c, self.f)

    @property
    def bias(self) -> Classifier:
        """The biased classifier ``f_b(phi_b(x))``."""
        return Classifier(self.phi_b, self.f_b)

    def component(self, name: str) -> Module:
        """Component by name."""
        if name not in COMPONENTS:
            msg = f"Unknown component: {name}. Valid options: {list(COMPONENTS)}"
            raise KeyError(msg)
        return getattr(self, name)


class SelectionTracker:
    """Record per-epoch metrics and keep the state with the best validation accuracy.

    :param modules: Modules whose state is snapshotted at the best epoch.
    :param val: Balanced validation split used for selection.
    :param test: Balanced test split, reported but never used for selection.
    :param strict_balance: Reject unbalanced evaluation splits.
    """

    def __init__(
        self,
        modules: Sequence[Module],
        val: SyntheticDataset,
        test: SyntheticDataset,
        *,
        strict_balance: bool = True,
    ) -> None:
        """Class constructor."""
        self.modules = list(modules)
        self.val = val
        self.test = test
        self.strict_balance = strict_balance
        self._rows: list[tuple[int, str, str, float]] = []
        self._best_state: list[dict[str, np.ndarray]] | None = None
        self._selected: dict[str, float] = {}

    def add(self, epoch: int, split: str, metrics: Mapping[str, float]) -> None:
        """Append metric rows without evaluating."""
        self._rows.extend((epoch, split, name, float(value)) for name, value in metrics.items())

    def record(
        self,
        epoch: int,
        model: Callable[[Any], Tensor],
        losses: Mapping[str, float] | None = None,
    ) -> float:
        """Evaluate ``model`` and update the selection.

        :param epoch: Epoch index, ``0`` for the initial model.
        :param model: Classifier being selected.
        :param losses: Training losses of the epoch.
        :return: Validation accuracy.
        """
        if losses:
            self.add(epoch, "train", losses)
        val = unbiased_accuracy(model, self.val, strict=self.strict_balance)
        test = unbiased_accuracy(model, self.test, strict=self.strict_balance)
        self.add(epoch, "val", {"accuracy": val.overall})
        self.add(epoch, "test", test.as_metrics())
        _LOGGER.debug(
            "Epoch %d: val accuracy %.4f, test accuracy %.4f", epoch, val.overall, test.overall
        )

        if self._best_state is None or val.overall > self._selected["val_accuracy"]:
            self._best_state = [module.state_dict() for module in self.modules]
            self._selected = {
                "epoch": epoch,
                "val_accuracy": val.overall,
                **{f"test_{name}": value for name, value in test.as_metrics().items()},
            }
        return val.overall

    def restore(self) -> dict[str, float]:
        """Load the selected state into the tracked modules.

        :return: Metrics of the selected epoch.
        """
        if self._best_state is None:
            msg = "No epoch has been recorded yet."
            raise ValueError(msg)
        for module, state in zip(self.modules, self._best_state, strict=True):
            module.load_state_dict(state)
        _LOGGER.info(
            "Selected epoch %d (val accuracy %.4f, test accuracy %.4f)",
            self._selected["epoch"],
            self._selected["val_accuracy"],
            self._selected["test_accuracy"],
        )
        return dict(self._selected)

    @property
    def frame(self) -> pd.DataFrame:
        """All rows as an ``epoch, split, metric, value`` frame."""
        return pd.DataFrame(self._rows, columns=METRIC_COLUMNS)


@dataclass(eq=False)
class RunRecord:
    """Outcome of one training run.

    :param config: Hyperparameters of the run.
    :param metrics: ``epoch, split, metric, value`` rows.
    :param selected: Validation and test metrics of the selected epoch.
    :param bundle: Trained models, selected state loaded.
    :param trained: Names of the components this method trained.
    :param weights: Final sample weights of reweighting methods.
    :param wall_clock: Training time in seconds.
    :param extras: Method-specific facts, e.g. the context extractor hash.
    :param checkpoints: Component checkpoints once written to a run directory.
    """

    config: TrainConfig
    metrics: pd.DataFrame
    selected: dict[str, float]
    bundle: ModelBundle = field(repr=False)
    trained: tuple[str, ...] = ()
    weights: WeightTable | None = None
    wall_clock: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)
    checkpoints: dict[str, Path] = field(default_factory=dict)

    @property
    def selected_epoch(self) -> int:
        """Epoch chosen by validation accuracy."""
        return int(self.selected["epoch"])

    @property
    def test_accuracy(self) -> float:
        """Unbiased test accuracy at the selected epoch."""
        return float(self.selected["test_accuracy"])
