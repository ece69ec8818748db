"""Test the flip and noise augmentation."""

from __future__ import annotations

import numpy as np
import pytest
from src.invlab.data.augment import Augmenter, augment
from src.invlab.data.factors import FactorSpec
from src.invlab.data.renderers import RENDERER_FACTORY, Renderer


class TestAugmenter:
    """Test the flip and noise augmentation."""

    @pytest.fixture
    def renderer(self, tiny_spec: FactorSpec) -> Renderer:
        """Renderer of the tiny spec."""
        return RENDERER_FACTORY.get_renderer(tiny_spec)

    def test_identity_when_disabled(self, renderer: Renderer, rng: np.random.Generator) -> None:
        """Test that zero probabilities leave observations untouched."""
        x = rng.normal(size=(5, 8))
        out = Augmenter(renderer, flip_prob=0.0, noise_prob=0.0)(x, rng)
        np.testing.assert_array_equal(out, x)
        assert out is not x

    def test_always_flip(self, renderer: Renderer, rng: np.random.Generator) -> None:
        """Test that flip probability one flips every row."""
        x = rng.normal(size=(4, 8))
        out = Augmenter(renderer, flip_prob=1.0, noise_prob=0.0)(x, rng)
        np.testing.assert_array_equal(out, renderer.flip(x))

    def test_noise_level(self, renderer: Renderer, rng: np.random.Generator) -> None:
        """Test the standard deviation of the additive noise."""
        x = np.zeros((4000, 8))
        out = Augmenter(renderer, noise_std=0.2, flip_prob=0.0, noise_prob=1.0)(x, rng)
        assert out.std() == pytest.approx(0.2, rel=0.05)

    def test_single_observation_shape(self, renderer: Renderer, rng: np.random.Generator) -> None:
        """Test that a 1-D observation keeps its shape."""
        assert Augmenter(renderer)(np.ones(8), rng).shape == (8,)

    def test_seeded_reproducible(self, renderer: Renderer) -> None:
        """Test that equal seeds give equal augmentations."""
        x = np.arange(16.0).reshape(2, 8)
        np.testing.assert_array_equal(augment(x, renderer, 7), augment(x, renderer, 7))

    def test_invalid_probability(self, renderer: Renderer) -> None:
        """Test that probabilities outside [0, 1] are rejected."""
        with pytest.raises(ValueError, match="flip_prob"):
            Augmenter(renderer, flip_prob=1.5)
