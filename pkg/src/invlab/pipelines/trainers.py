"""Training pipelines: ERM, IRM, biased-classifier IPW and IRMCon-IPW."""

from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from collections.abc import Callable, Iterable, Sequence
from typing import ClassVar

import numpy as np
import pandas as pd

from ..autodiff.nn import Classifier, Linear, Mlp, Module
from ..autodiff.optim import Optimizer, make_optimizer
from ..autodiff.tensor import GradientMap, Tape, Tensor
from ..data.dataset import Batch, DatasetSplits, EnvironmentBatch, EnvKind, split_environments
from ..data.renderers import RENDERER_FACTORY
from ..losses.contrastive import irmcon_loss
from ..losses.objectives import (
    cross_entropy,
    erm_loss,
    gce_from_logits,
    ipw_erm_loss,
    irm_loss,
    weighted_ce,
)
from ..losses.weights import Provenance, WeightTable, irmcon_weight, lff_weight
from .bundle import Method, ModelBundle, RunRecord, SelectionTracker, TrainConfig, method_stream
from .const import (
    SCORE_PROB_FLOOR,
    STREAM_AUGMENT,
    STREAM_BATCHES,
    STREAM_BIAS,
    STREAM_CONTEXT,
    STREAM_PRELIM,
)
from .sampler import EnvironmentSampler, shuffled_batches, steps_per_epoch

_LOGGER = logging.getLogger(__name__)


def _params(modules: Iterable[Module]) -> list[Tensor]:
    return [param for module in modules for param in module.parameters()]


def _optimizer(config: TrainConfig, modules: Iterable[Module]) -> Optimizer:
    return make_optimizer(config.optimizer, _params(modules), config.lr)


def _check_excluded(grads: GradientMap, frozen: Sequence[Tensor]) -> None:
    if any(param in grads for param in frozen):
        msg = "Gradient map contains frozen context extractor parameters"
        raise RuntimeError(msg)


def descend(objective: Callable[[], Tensor], optimizers: Sequence[Optimizer]) -> float:
    """Record ``objective`` on a fresh tape and step every optimizer.

    :return: The loss value before the update.
    """
    params = [param for optimizer in optimizers for param in optimizer.params]
    with Tape() as tape:
        loss = objective()
    grads = tape.backward(loss, params)
    for optimizer in optimizers:
        optimizer.step(grads)
    return loss.item()


def fresh_bias_classifier(
    input_dim: int, num_classes: int, config: TrainConfig, stream: int
) -> Classifier:
    """A biased classifier initialized from its own seed stream."""
    rng = np.random.default_rng(method_stream(config.seed, stream))
    hidden = config.hidden_dim
    phi = Mlp([input_dim, hidden, hidden, config.feature_dim], rng=rng, name="phi_b")
    head = Linear(config.feature_dim, num_classes, rng=rng, name="f_b")
    return Classifier(phi, head)


def train_bias_model(
    splits: DatasetSplits,
    config: TrainConfig,
    *,
    classifier: Classifier | None = None,
    epochs: int | None = None,
    stream: int = STREAM_BIAS,
    tracker: SelectionTracker | None = None,
) -> Classifier:
    """Train ``f_b(phi_b(x))`` with GCE on raw observations, amplifying the bias.

    :param splits: Dataset; only the train split is used.
    :param config: Supplies ``q``, optimizer and batch size.
    :param classifier: Model to train; a fresh one is built when omitted.
    :param epochs: Overrides the configured bias-stage epochs.
    :param stream: Random stream of initialization and batching.
    :param tracker: Receives ``bias_loss`` rows when given.
    :return: The trained classifier (``features`` is ``phi_b``, ``head`` is ``f_b``).
    """
    train = splits.train
    if classifier is None:
        classifier = fresh_bias_classifier(
            train.spec.observation_dim, train.num_classes, config, stream
        )
    epochs = config.bias_stage_epochs if epochs is None else epochs
    optimizer = _optimizer(config, [classifier])
    rng = np.random.default_rng(method_stream(config.seed, stream).spawn(1)[0])
    for epoch in range(1, epochs + 1):
        losses = [
            descend(
                lambda b=batch: gce_from_logits(classifier(b.x), b.y, config.q).mean(),
                [optimizer],
            )
            for batch in shuffled_batches(train.data, config.batch_size, rng)
        ]
        _LOGGER.debug("Bias model epoch %d: GCE %.5f", epoch, np.mean(losses))
        if tracker is not None:
            tracker.add(epoch, "train", {"bias_loss": float(np.mean(losses))})
    return classifier


def alignment_scores(classifier: Callable[..., Tensor], batch: Batch) -> np.ndarray:
    """Inverse of the alignment ``p_y`` the bias model assigns to the true class, floored.

    Equals ``exp(ce_bias)``. For any fixed main-model CE, :func:`lff_weight` is
    increasing in ``ce_bias``, so these scores rank samples the way the
    relative-difficulty weight would before a main model exists.
    """
    ce = cross_entropy(classifier(batch.x), batch.y).data
    return 1.0 / np.maximum(np.exp(-ce), SCORE_PROB_FLOOR)


def train_irmcon(
    splits: DatasetSplits,
    config: TrainConfig,
    *,
    bundle: ModelBundle | None = None,
    tracker: SelectionTracker | None = None,
) -> Mlp:
    """Train the context extractor ``phi_t`` with the invariance-as-context objective.

    Every step draws one mini-batch per class environment. With
    ``weighted_sampling`` the draws favour samples a short preliminary GCE
    model finds hard; with ``aux_gce_on_context`` a GCE class head on
    ``phi_t`` is trained alongside.

    :param splits: Dataset; only the train split is used.
    :param config: Run configuration.
    :param bundle: Models to train in place; built from ``config`` when omitted.
    :param tracker: Receives ``context_loss`` rows when given.
    :return: The trained ``phi_t``.
    """
    train = splits.train
    if bundle is None:
        bundle = ModelBundle.build(train.spec.observation_dim, train.num_classes, config)
    phi_t = bundle.phi_t
    augmenter = config.augmenter(RENDERER_FACTORY.get_renderer(train.spec))

    envs = split_environments(train, EnvKind.BY_CLASS)
    small = [env.env_id for env in envs if len(env) < 2]
    if small:
        msg = f"Classes {small} have fewer than two training samples"
        raise ValueError(msg)
    if len(envs) < 2:
        msg = "Context training needs at least two classes"
        raise ValueError(msg)

    scores = None
    if config.weighted_sampling:
        _LOGGER.info("Training preliminary bias model for %d epochs", config.prelim_bias_epochs)
        prelim = train_bias_model(
            splits, config, epochs=config.prelim_bias_epochs, stream=STREAM_PRELIM
        )
        scores = [alignment_scores(prelim, env) for env in envs]

    modules: list[Module] = [phi_t]
    if config.aux_gce_on_context:
        modules.append(bundle.aux_head)
    optimizer = _optimizer(config, modules)
    sampler = EnvironmentSampler(
        envs,
        config.env_batch_size,
        np.random.default_rng(method_stream(config.seed, STREAM_CONTEXT)),
        scores,
    )
    aug_rng = np.random.default_rng(method_stream(config.seed, STREAM_AUGMENT))
    steps = steps_per_epoch(len(train), config.env_batch_size * len(envs))
    epochs = config.context_stage_epochs
    warmup = config.warmup_epochs(epochs)

    def objective(batches: list[EnvironmentBatch], lam: float, aug_seed: int) -> Tensor:
        loss = irmcon_loss(
            phi_t,
            batches,
            lam,
            augmenter,
            aug_seed,
            theta=bundle.theta,
            form=config.irmcon_penalty,
            include_self=config.include_self,
            normalize=config.normalize_features,
            temperature=config.temperature,
        )
        if config.aux_gce_on_context:
            x = np.concatenate([env.x for env in batches])
            y = np.concatenate([env.y for env in batches])
            loss = loss + gce_from_logits(bundle.aux_head(phi_t(x)), y, config.q).mean()
        return loss

    _LOGGER.info("Training context extractor for %d epochs (%d warmup)", epochs, warmup)
    for epoch in range(1, epochs + 1):
        lam = 0.0 if epoch <= warmup else config.lam
        if config.reset_optimizer_on_warmup and warmup > 0 and epoch == warmup + 1:
            _LOGGER.debug("Resetting context optimizer at end of warmup")
            optimizer = _optimizer(config, modules)
        losses = []
        for _ in range(steps):
            batches = sampler.step()
            usable = [env for env in batches if len(env) >= 2]
            if len(usable) < len(batches):
                _LOGGER.warning(
                    "Skipping %d class environments with a single sample",
                    len(batches) - len(usable),
                )
            if len(usable) < 2:
                _LOGGER.warning("Skipping step with fewer than two usable environments")
                continue
            aug_seed = int(aug_rng.integers(np.iinfo(np.int64).max))
            losses.append(
                descend(lambda b=usable, s=aug_seed: objective(b, lam, s), [optimizer])
            )
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        _LOGGER.debug("Context epoch %d: loss %.5f (lambda %g)", epoch, mean_loss, lam)
        if tracker is not None:
            tracker.add(epoch, "train", {"context_loss": mean_loss})
    return phi_t


def context_features(phi_t: Module, x: np.ndarray) -> np.ndarray:
    """``x_t = phi_t(x)`` as constant values."""
    return phi_t(x).numpy()


class Trainer(ABC):
    """Base class of the training pipelines.

    :param splits: Train, validation and test data.
    :param config: Run configuration; its method must match the trainer.
    :param strict_balance: Reject unbalanced evaluation splits.
    """

    method: ClassVar[Method]
    trained: ClassVar[tuple[str, ...]]

    def __init__(
        self, splits: DatasetSplits, config: TrainConfig, *, strict_balance: bool = True
    ) -> None:
        """Class constructor."""
        if config.method is not self.method:
            msg = f"{type(self).__name__} trains {self.method}, config asks for {config.method}"
            raise ValueError(msg)
        self.splits = splits
        self.config = config
        train = splits.train
        self.bundle = ModelBundle.build(train.spec.observation_dim, train.num_classes, config)
        self.rng = np.random.default_rng(method_stream(config.seed, STREAM_BATCHES))
        self.tracker = SelectionTracker(
            [self.bundle.phi_c, self.bundle.f],
            splits.val,
            splits.test,
            strict_balance=strict_balance,
        )
        self.weights: WeightTable | None = None
        self.extras: dict[str, object] = {}
        self._record: RunRecord | None = None

    @property
    def record(self) -> RunRecord:
        """Result of :meth:`run`."""
        if self._record is None:
            msg = "Training results are not available. Run the trainer first."
            raise ValueError(msg)
        return self._record

    def run(self) -> RunRecord:
        """Train, restore the selected epoch and collect the run record."""
        _LOGGER.info(
            "Training %s on %d samples (seed %d)",
            self.method,
            len(self.splits.train),
            self.config.seed,
        )
        start = time.perf_counter()
        self._train()
        selected = self.tracker.restore()
        self._finish()
        self._record = RunRecord(
            config=self.config,
            metrics=self.tracker.frame,
            selected=selected,
            bundle=self.bundle,
            trained=self.trained,
            weights=self.weights,
            wall_clock=time.perf_counter() - start,
            extras=self.extras,
        )
        return self._record

    @abstractmethod
    def _train(self) -> None:
        """Run every training stage."""

    def _finish(self) -> None:  # noqa: B027
        """Post-process the selected models."""

    def _fit_main(
        self, epochs: int, run_epoch: Callable[[int], dict[str, float]]
    ) -> None:
        """Evaluate the initial model, then train and evaluate per ``eval_every``."""
        main = self.bundle.main
        self.tracker.record(0, main)
        for epoch in range(1, epochs + 1):
            losses = run_epoch(epoch)
            if epoch % self.config.eval_every == 0 or epoch == epochs:
                self.tracker.record(epoch, main, losses)
            else:
                self.tracker.add(epoch, "train", losses)


class ErmTrainer(Trainer):
    """Plain mean cross entropy."""

    method = Method.ERM
    trained = ("phi_c", "f")

    def _train(self) -> None:
        main = self.bundle.main
        optimizer = _optimizer(self.config, [main])

        def run_epoch(_: int) -> dict[str, float]:
            losses = [
                descend(lambda b=batch: erm_loss(main, b), [optimizer])
                for batch in shuffled_batches(
                    self.splits.train.data, self.config.batch_size, self.rng
                )
            ]
            return {"loss": float(np.mean(losses))}

        self._fit_main(self.config.epochs, run_epoch)


class IrmTrainer(Trainer):
    """Cross entropy plus the dummy-scale penalty over ground-truth context environments."""

    method = Method.IRM
    trained = ("phi_c", "f")

    def _objective(self, envs: list[EnvironmentBatch], lam: float) -> Tensor:
        return irm_loss(
            self.bundle.main,
            envs,
            lam,
            form=self.config.irm_penalty,
            theta=self.bundle.theta,
        )

    def _train(self) -> None:
        config = self.config
        train = self.splits.train
        if np.any((train.data.c < 0) | (train.data.c >= train.num_contexts)):
            msg = "IRM needs ground-truth context labels for every training sample"
            raise ValueError(msg)
        envs = split_environments(train, EnvKind.BY_CONTEXT)
        if len(envs) < 2:
            msg = f"IRM needs at least two context environments, got {len(envs)}"
            raise ValueError(msg)

        sampler = EnvironmentSampler(envs, config.env_batch_size, self.rng)
        steps = steps_per_epoch(len(train), config.env_batch_size * len(envs))
        warmup = config.warmup_epochs(config.epochs)
        modules = [self.bundle.main]
        state = {"optimizer": _optimizer(config, modules)}

        def run_epoch(epoch: int) -> dict[str, float]:
            lam = 0.0 if epoch <= warmup else config.lam
            if config.reset_optimizer_on_warmup and warmup > 0 and epoch == warmup + 1:
                _LOGGER.debug("Resetting optimizer at end of warmup")
                state["optimizer"] = _optimizer(config, modules)
            losses = []
            for _ in range(steps):
                envs_batch = sampler.step()
                losses.append(
                    descend(lambda b=envs_batch: self._objective(b, lam), [state["optimizer"]])
                )
            return {"loss": float(np.mean(losses))}

        self._fit_main(config.epochs, run_epoch)


class LffIpwTrainer(Trainer):
    """Joint training of a GCE bias model and a main model reweighted by it."""

    method = Method.LFF_IPW
    trained = ("phi_c", "f", "phi_b", "f_b")

    def _weights(self, ce_main: np.ndarray, ce_bias: np.ndarray) -> np.ndarray:
        return lff_weight(ce_main, ce_bias, self.config.epsilon)

    def _train(self) -> None:
        config = self.config
        main, bias = self.bundle.main, self.bundle.bias
        opt_main = _optimizer(config, [main])
        opt_bias = _optimizer(config, [bias])

        def objective(batch: Batch, parts: list[tuple[float, float]]) -> Tensor:
            main_logits = main(batch.x)
            bias_logits = bias(batch.x)
            ce_main = cross_entropy(main_logits.detach(), batch.y).data
            ce_bias = cross_entropy(bias_logits.detach(), batch.y).data
            main_loss = weighted_ce(main_logits, batch.y, self._weights(ce_main, ce_bias))
            bias_loss = gce_from_logits(bias_logits, batch.y, config.q).mean()
            parts.append((main_loss.item(), bias_loss.item()))
            return main_loss + bias_loss

        def run_epoch(_: int) -> dict[str, float]:
            parts: list[tuple[float, float]] = []
            for batch in shuffled_batches(self.splits.train.data, config.batch_size, self.rng):
                descend(lambda b=batch: objective(b, parts), [opt_main, opt_bias])
            main_loss, bias_loss = np.mean(parts, axis=0)
            return {"loss": float(main_loss), "bias_loss": float(bias_loss)}

        self._fit_main(config.epochs, run_epoch)

    def _finish(self) -> None:
        train = self.splits.train.data
        ce_main = cross_entropy(self.bundle.main(train.x), train.y).data
        ce_bias = cross_entropy(self.bundle.bias(train.x), train.y).data
        self.weights = WeightTable.from_losses(
            train.ids, ce_main, ce_bias, Provenance.LFF, self.config.epsilon
        )


class IrmConIpwTrainer(Trainer):
    """Context extractor, bias head on its features, then reweighted main training."""

    method = Method.IRMCON_IPW
    trained = ("phi_c", "f", "phi_t", "f_b_on_xt")

    def _train(self) -> None:
        config = self.config
        bundle = self.bundle
        train = self.splits.train

        train_irmcon(self.splits, config, bundle=bundle, tracker=self.tracker)
        bundle.phi_t.freeze()
        bundle.aux_head.freeze()
        frozen = bundle.phi_t.parameters()
        phi_hash = bundle.phi_t.parameter_hash()
        self.extras["phi_t_hash"] = phi_hash
        _LOGGER.info("Context extractor frozen (hash %s)", phi_hash[:12])

        x_t = context_features(bundle.phi_t, train.data.x)
        head = bundle.f_b_on_xt
        head_opt = _optimizer(config, [head])
        rng = np.random.default_rng(method_stream(config.seed, STREAM_BIAS))
        context_batch = Batch(ids=train.data.ids, x=x_t, y=train.data.y, c=train.data.c)
        epochs = config.bias_stage_epochs
        _LOGGER.info("Training bias head on context features for %d epochs", epochs)
        for epoch in range(1, epochs + 1):
            losses = []
            for batch in shuffled_batches(context_batch, config.batch_size, rng):
                with Tape() as tape:
                    loss = gce_from_logits(head(batch.x), batch.y, config.q).mean()
                grads = tape.backward(loss)
                _check_excluded(grads, frozen)
                head_opt.step(grads)
                losses.append(loss.item())
            self.tracker.add(epoch, "train", {"bias_loss": float(np.mean(losses))})

        ce_bias = pd.Series(
            cross_entropy(head(x_t), train.data.y).data, index=train.data.ids
        )
        self._ce_bias = ce_bias
        main = bundle.main
        main_opt = _optimizer(config, [main])

        def weights(ce_main: np.ndarray, ids: np.ndarray) -> np.ndarray:
            return irmcon_weight(ce_main, ce_bias.reindex(ids).to_numpy(), config.epsilon)

        def step(batch: Batch) -> float:
            with Tape() as tape:
                loss = ipw_erm_loss(main, batch, weights)
            grads = tape.backward(loss)
            _check_excluded(grads, frozen)
            main_opt.step(grads)
            return loss.item()

        def run_epoch(_: int) -> dict[str, float]:
            losses = [
                step(batch)
                for batch in shuffled_batches(train.data, config.batch_size, self.rng)
            ]
            return {"loss": float(np.mean(losses))}

        _LOGGER.info("Training reweighted main model for %d epochs", config.epochs)
        self._fit_main(config.epochs, run_epoch)

        if bundle.phi_t.parameter_hash() != phi_hash:
            msg = "Context extractor parameters changed after freezing"
            raise RuntimeError(msg)

    def _finish(self) -> None:
        train = self.splits.train.data
        ce_main = cross_entropy(self.bundle.main(train.x), train.y).data
        ce_bias = self._ce_bias.reindex(train.ids).to_numpy()
        self.weights = WeightTable.from_losses(
            train.ids, ce_main, ce_bias, Provenance.IRMCON, self.config.epsilon
        )


TRAINERS: dict[Method, type[Trainer]] = {
    Method.ERM: ErmTrainer,
    Method.IRM: IrmTrainer,
    Method.LFF_IPW: LffIpwTrainer,
    Method.IRMCON_IPW: IrmConIpwTrainer,
}


def get_trainer(method: str) -> type[Trainer]:
    """Trainer class of a method name."""
    try:
        return TRAINERS[Method(method)]
    except ValueError as exc:
        msg = f"Unknown method: {method}. Valid options: {[str(m) for m in Method]}"
        raise ValueError(msg) from exc


def run_method(
    splits: DatasetSplits, config: TrainConfig, *, strict_balance: bool = True
) -> RunRecord:
    """Train with the method named by ``config``."""
    return get_trainer(config.method)(splits, config, strict_balance=strict_balance).run()


def train_erm(splits: DatasetSplits, config: TrainConfig, **kwargs: bool) -> RunRecord:
    """Mean cross entropy baseline."""
    return ErmTrainer(splits, config, **kwargs).run()


def train_irm(splits: DatasetSplits, config: TrainConfig, **kwargs: bool) -> RunRecord:
    """Invariant risk minimization over ground-truth context environments."""
    return IrmTrainer(splits, config, **kwargs).run()


def train_lff_ipw(splits: DatasetSplits, config: TrainConfig, **kwargs: bool) -> RunRecord:
    """Main model reweighted by a jointly trained GCE bias model."""
    return LffIpwTrainer(splits, config, **kwargs).run()


def train_irmcon_ipw(splits: DatasetSplits, config: TrainConfig, **kwargs: bool) -> RunRecord:
    """Full pipeline: context extractor, bias head on its features, reweighted main model."""
    return IrmConIpwTrainer(splits, config, **kwargs).run()
