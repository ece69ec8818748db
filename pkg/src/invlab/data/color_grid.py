"""Small RGB images: a class glyph tinted with a context color."""

from __future__ import annotations

import logging
from typing import Any

import numpy as np
import voluptuous as vol

from .const import DEFAULT_GRID_NOISE, DEFAULT_IMAGE_SIZE, PROTOTYPE_SEPARATION
from .factors import FactorSpec, GeneratorKind
from .renderers import RENDERER_FACTORY, Renderer, data_section, sample_separated

_LOGGER = logging.getLogger(__name__)

CHANNELS = 3

COLOR_GRID_SCHEMA = vol.Schema(
    {
        **data_section(GeneratorKind.COLOR_GRID, DEFAULT_GRID_NOISE),
        vol.Optional("image_size", default=DEFAULT_IMAGE_SIZE): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)


class ColorGridRenderer(Renderer):
    """Render a ``p x p x 3`` image flattened row-major to length ``3 p^2``.

    Class prototypes are binary glyphs of ``p^2`` pixels, context prototypes
    are RGB colors. Pixel ``(i, j, ch)`` is ``glyph[i * p + j] * color[ch]``
    plus Gaussian noise.
    """

    kind = GeneratorKind.COLOR_GRID

    @classmethod
    def sample_spec(
        cls,
        rng: np.random.Generator,
        *,
        num_classes: int,
        num_contexts: int,
        noise_std: float,
        image_size: int = DEFAULT_IMAGE_SIZE,
        **_: Any,
    ) -> FactorSpec:
        """Draw random glyphs (center pixel always lit) and colors in ``[0.1, 1]``."""
        threshold = PROTOTYPE_SEPARATION * noise_std
        pixels = image_size * image_size
        center = (image_size // 2) * image_size + image_size // 2

        def draw_glyphs() -> np.ndarray:
            glyphs = rng.integers(0, 2, size=(num_classes, pixels)).astype(np.float64)
            glyphs[:, center] = 1.0
            return glyphs

        glyphs = sample_separated(draw_glyphs, threshold, "glyph")
        colors = sample_separated(
            lambda: rng.uniform(0.1, 1.0, size=(num_contexts, CHANNELS)),
            threshold,
            "color",
        )
        return FactorSpec(
            kind=cls.kind,
            class_prototypes=glyphs,
            context_prototypes=colors,
            noise_std=noise_std,
            image_size=image_size,
        )

    def render(
        self, y: np.ndarray, c: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        spec = self.spec
        images = (
            spec.class_prototypes[y][:, :, None] * spec.context_prototypes[c][:, None, :]
        )
        images = images + rng.normal(0.0, spec.noise_std, size=images.shape)
        return images.reshape(len(y), -1)

    def flip(self, x: np.ndarray) -> np.ndarray:
        """Mirror images horizontally."""
        size = self.spec.image_size
        lead = x.shape[:-1]
        images = x.reshape(*lead, size, size, CHANNELS)
        return images[..., :, ::-1, :].reshape(*lead, -1)


RENDERER_FACTORY.register(GeneratorKind.COLOR_GRID, ColorGridRenderer, COLOR_GRID_SCHEMA)
