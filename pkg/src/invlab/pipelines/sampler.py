"""Mini-batch streams: shuffled, per-environment and score-weighted."""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from ..data.dataset import Batch, EnvironmentBatch

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchSpec:
    """Shape of a sampled batch stream.

    :param batch_size: Samples per batch.
    :param steps: Number of batches; ``None`` covers the data once.
    :param endless: Never stop; ``steps`` is ignored.
    """

    batch_size: int
    steps: int | None = None
    endless: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            msg = f"batch_size must be positive, got {self.batch_size}"
            raise ValueError(msg)

    def num_steps(self, num_samples: int) -> int:
        """Batches in the stream for a dataset of ``num_samples``."""
        return self.steps if self.steps is not None else steps_per_epoch(num_samples, self.batch_size)


def steps_per_epoch(num_samples: int, batch_size: int) -> int:
    """Batches needed to visit ``num_samples`` once."""
    return max(1, math.ceil(num_samples / batch_size))


def shuffled_batches(
    batch: Batch, batch_size: int, rng: np.random.Generator
) -> Iterator[Batch]:
    """One epoch of contiguous chunks of a random permutation."""
    order = rng.permutation(len(batch))
    for start in range(0, len(batch), batch_size):
        yield batch.take(order[start : start + batch_size])


def _probabilities(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        msg = "Sampling scores must be finite and non-negative"
        raise ValueError(msg)
    total = scores.sum()
    if total <= 0:
        msg = "Sampling scores are all zero"
        raise ValueError(msg)
    return scores / total


def weighted_sampler[B: Batch](
    batch: B,
    scores: np.ndarray,
    spec: BatchSpec,
    seed: int | np.random.SeedSequence | np.random.Generator,
) -> Iterator[B]:
    """Draw batches with replacement, sample ``i`` with probability ``scores[i] / sum``.

    Scores are validated on call, before the first batch is drawn.

    :param batch: Population to sample from; the batches keep its type.
    :param scores: Non-negative score per row of ``batch``.
    :param spec: Batch size and stream length.
    :param seed: Seed of the stream, or a generator to draw from directly.
    """
    if len(scores) != len(batch):
        msg = f"Got {len(scores)} scores for {len(batch)} samples"
        raise ValueError(msg)
    probs = _probabilities(scores)
    rng = np.random.default_rng(seed)
    steps = itertools.count() if spec.endless else range(spec.num_steps(len(batch)))
    return (
        batch.take(rng.choice(len(batch), size=spec.batch_size, replace=True, p=probs))
        for _ in steps
    )


class EnvironmentSampler:
    """Draw one mini-batch per environment at every step.

    Without scores each environment is walked through a random permutation
    that is redrawn whenever it runs out. With scores, each environment is an
    endless :func:`weighted_sampler` stream on the shared generator.

    :param envs: Environments to sample from.
    :param batch_size: Samples per environment per step (capped at its size).
    :param rng: Source of all draws.
    :param scores: Optional score per row of each environment.
    """

    def __init__(
        self,
        envs: Sequence[EnvironmentBatch],
        batch_size: int,
        rng: np.random.Generator,
        scores: Sequence[np.ndarray] | None = None,
    ) -> None:
        """Class constructor."""
        if batch_size < 1:
            msg = f"batch_size must be positive, got {batch_size}"
            raise ValueError(msg)
        self.envs = list(envs)
        self.batch_size = batch_size
        self.rng = rng
        self._orders = [rng.permutation(len(env)) for env in self.envs]
        self._cursors = [0] * len(self.envs)
        self._streams: list[Iterator[EnvironmentBatch]] | None = None
        if scores is not None:
            if len(scores) != len(self.envs):
                msg = f"Got scores for {len(scores)} of {len(self.envs)} environments"
                raise ValueError(msg)
            self._streams = [
                weighted_sampler(
                    env, env_scores, BatchSpec(min(batch_size, len(env)), endless=True), rng
                )
                for env, env_scores in zip(self.envs, scores, strict=True)
            ]

    def _next_batch(self, k: int) -> EnvironmentBatch:
        if self._streams is not None:
            return next(self._streams[k])
        env = self.envs[k]
        size = min(self.batch_size, len(env))
        if self._cursors[k] + size > len(env):
            self._orders[k] = self.rng.permutation(len(env))
            self._cursors[k] = 0
        start = self._cursors[k]
        self._cursors[k] += size
        return env.take(self._orders[k][start : start + size])

    def step(self) -> list[EnvironmentBatch]:
        """One mini-batch per environment, in environment order."""
        return [self._next_batch(k) for k in range(len(self.envs))]
