"""Observations made of a noisy class block followed by a noisy context block."""

from __future__ import annotations

import logging
from typing import Any

import numpy as np
import voluptuous as vol

from .const import DEFAULT_CLASS_DIM, DEFAULT_CONTEXT_DIM, DEFAULT_VECTOR_NOISE, PROTOTYPE_SEPARATION
from .factors import FactorSpec, GeneratorKind
from .renderers import RENDERER_FACTORY, Renderer, data_section, sample_separated

_LOGGER = logging.getLogger(__name__)

VECTOR_CONCAT_SCHEMA = vol.Schema(
    {
        **data_section(
            GeneratorKind.VECTOR_CONCAT, DEFAULT_VECTOR_NOISE, default_kind=True
        ),
        vol.Optional("class_dim", default=DEFAULT_CLASS_DIM): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional("context_dim", default=DEFAULT_CONTEXT_DIM): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)


class VectorConcatRenderer(Renderer):
    """Render ``x = [x_c + e_c ; x_t + e_t]`` with Gaussian noise ``e``."""

    kind = GeneratorKind.VECTOR_CONCAT

    @classmethod
    def sample_spec(
        cls,
        rng: np.random.Generator,
        *,
        num_classes: int,
        num_contexts: int,
        noise_std: float,
        class_dim: int = DEFAULT_CLASS_DIM,
        context_dim: int = DEFAULT_CONTEXT_DIM,
        **_: Any,
    ) -> FactorSpec:
        """Draw standard-normal prototypes, redrawing until well separated."""
        threshold = PROTOTYPE_SEPARATION * noise_std
        class_protos = sample_separated(
            lambda: rng.standard_normal((num_classes, class_dim)), threshold, "class"
        )
        context_protos = sample_separated(
            lambda: rng.standard_normal((num_contexts, context_dim)),
            threshold,
            "context",
        )
        return FactorSpec(
            kind=cls.kind,
            class_prototypes=class_protos,
            context_prototypes=context_protos,
            noise_std=noise_std,
        )

    def render(
        self, y: np.ndarray, c: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        spec = self.spec
        n = len(y)
        class_block = spec.class_prototypes[y] + rng.normal(
            0.0, spec.noise_std, size=(n, spec.class_dim)
        )
        context_block = spec.context_prototypes[c] + rng.normal(
            0.0, spec.noise_std, size=(n, spec.context_dim)
        )
        return np.hstack([class_block, context_block])

    def flip(self, x: np.ndarray) -> np.ndarray:
        """Reverse the coordinate order inside each factor block."""
        split = self.spec.class_dim
        return np.concatenate(
            [x[..., :split][..., ::-1], x[..., split:][..., ::-1]], axis=-1
        )

    def context_block(self, x: np.ndarray) -> np.ndarray:
        """The raw context coordinates of observations."""
        return x[..., self.spec.class_dim :]


RENDERER_FACTORY.register(
    GeneratorKind.VECTOR_CONCAT, VectorConcatRenderer, VECTOR_CONCAT_SCHEMA
)
