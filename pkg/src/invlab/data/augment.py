"""Random flip and Gaussian-noise augmentation ``Aug(x)``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .const import DEFAULT_AUG_NOISE, DEFAULT_FLIP_PROB, DEFAULT_NOISE_PROB
from .renderers import Renderer

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Augmenter:
    """Apply a coordinate-order flip and additive noise, each with its own probability.

    :param renderer: Supplies the generator-specific flip.
    :param noise_std: Standard deviation of the additive noise.
    :param flip_prob: Probability of flipping an observation.
    :param noise_prob: Probability of adding noise to an observation.
    """

    renderer: Renderer
    noise_std: float = DEFAULT_AUG_NOISE
    flip_prob: float = DEFAULT_FLIP_PROB
    noise_prob: float = DEFAULT_NOISE_PROB

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            msg = f"Augmentation noise_std must be >= 0, got {self.noise_std}"
            raise ValueError(msg)
        for label, prob in (("flip_prob", self.flip_prob), ("noise_prob", self.noise_prob)):
            if not 0.0 <= prob <= 1.0:
                msg = f"{label} must be in [0, 1], got {prob}"
                raise ValueError(msg)

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Augment one observation or each row of a batch independently.

        The random draws per call are fixed (flip coins, noise coins, noise
        values), so a given generator state always yields the same output.

        :param x: Observation of shape ``(d,)`` or batch of shape ``(N, d)``.
        :param rng: Source of all random draws.
        :return: A new array of the same shape.
        """
        rows = np.atleast_2d(np.asarray(x, dtype=np.float64))
        flips = rng.random(len(rows)) < self.flip_prob
        noisy = rng.random(len(rows)) < self.noise_prob
        noise = rng.normal(0.0, self.noise_std, size=rows.shape)

        out = rows.copy()
        if flips.any():
            out[flips] = self.renderer.flip(rows[flips])
        out += noise * noisy[:, None]
        return out.reshape(np.shape(x))


def augment(
    x: np.ndarray,
    renderer: Renderer,
    seed: int | np.random.SeedSequence,
    *,
    noise_std: float = DEFAULT_AUG_NOISE,
    flip_prob: float = DEFAULT_FLIP_PROB,
    noise_prob: float = DEFAULT_NOISE_PROB,
) -> np.ndarray:
    """Augment ``x`` with a generator seeded from ``seed``."""
    augmenter = Augmenter(
        renderer, noise_std=noise_std, flip_prob=flip_prob, noise_prob=noise_prob
    )
    return augmenter(x, np.random.default_rng(seed))
