"""Renderer interface turning factor labels into observations."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable
from typing import Any, ClassVar

import numpy as np
import voluptuous as vol

from .const import (
    DEFAULT_NUM_CLASSES,
    DEFAULT_NUM_CONTEXTS,
    DEFAULT_SIZES,
    PROTOTYPE_MAX_ATTEMPTS,
    PROTOTYPE_SEPARATION,
)
from .factors import FactorSpec, GeneratorKind, min_pairwise_distance

_LOGGER = logging.getLogger(__name__)


def _positive_int(msg: str = "must be a positive integer") -> vol.All:
    return vol.All(vol.Coerce(int), vol.Range(min=1, msg=msg))


SIZES_SCHEMA = vol.Schema(
    {
        vol.Optional("train", default=DEFAULT_SIZES["train"]): _positive_int(),
        vol.Optional("val", default=DEFAULT_SIZES["val"]): _positive_int(),
        vol.Optional("test", default=DEFAULT_SIZES["test"]): _positive_int(),
    },
    extra=vol.PREVENT_EXTRA,
)


def data_section(
    kind: GeneratorKind, default_noise: float, *, default_kind: bool = False
) -> dict[Any, Any]:
    """Validators shared by every generator's ``data:`` configuration section.

    :param kind: Generator identifier expected under ``generator``.
    :param default_noise: Default rendering noise for this generator.
    :param default_kind: Whether a missing ``generator`` key selects ``kind``.
    """
    generator_key = (
        vol.Optional("generator", default=str(kind))
        if default_kind
        else vol.Required("generator")
    )
    return {
        generator_key: str(kind),
        vol.Optional("num_classes", default=DEFAULT_NUM_CLASSES): _positive_int(),
        vol.Optional("num_contexts", default=DEFAULT_NUM_CONTEXTS): _positive_int(),
        vol.Optional("noise_std", default=default_noise): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, msg="noise_std must be >= 0")
        ),
        vol.Optional("bias_ratio", default=0.99): vol.All(
            vol.Coerce(float),
            vol.Range(0.0, 1.0, msg="bias_ratio must be between 0 and 1"),
        ),
        vol.Optional("sizes", default=dict): SIZES_SCHEMA,
        vol.Optional("seed", default=0): vol.Coerce(int),
        vol.Optional("path", default=None): vol.Any(None, str),
    }


def sample_separated(
    draw: Callable[[], np.ndarray], min_distance: float, label: str
) -> np.ndarray:
    """Redraw a prototype matrix until its rows are more than ``min_distance`` apart.

    :param draw: Produces one candidate matrix per call.
    :param min_distance: Required minimum pairwise L2 distance.
    :param label: Used in log and error messages.
    :return: The first accepted matrix.
    """
    for attempt in range(1, PROTOTYPE_MAX_ATTEMPTS + 1):
        candidate = draw()
        if min_pairwise_distance(candidate) > min_distance:
            if attempt > 1:
                _LOGGER.debug("Accepted %s prototypes after %d draws", label, attempt)
            return candidate
    msg = (
        f"Could not draw {label} prototypes separated by more than "
        f"{min_distance:.4f} in {PROTOTYPE_MAX_ATTEMPTS} attempts"
    )
    raise ValueError(msg)


class Renderer(ABC):
    """Abstract renderer bound to one :class:`FactorSpec`."""

    kind: ClassVar[GeneratorKind]

    def __init__(self, spec: FactorSpec) -> None:
        """Class constructor."""
        if spec.kind is not self.kind:
            msg = f"{type(self).__name__} cannot render {spec.kind} specs"
            raise ValueError(msg)
        self.spec = spec

    @classmethod
    @abstractmethod
    def sample_spec(
        cls,
        rng: np.random.Generator,
        *,
        num_classes: int,
        num_contexts: int,
        noise_std: float,
        **options: Any,
    ) -> FactorSpec:
        """Draw class and context prototypes for a new spec."""

    @abstractmethod
    def render(
        self, y: np.ndarray, c: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Render one observation per ``(y, c)`` pair.

        :param y: Class labels, shape ``(N,)``.
        :param c: Context labels, shape ``(N,)``.
        :param rng: Source of rendering noise.
        :return: Observations, shape ``(N, observation_dim)``.
        """

    @abstractmethod
    def flip(self, x: np.ndarray) -> np.ndarray:
        """Coordinate-order flip of one observation or a batch of them."""


class RendererFactory:
    """Factory class for renderers."""

    def __init__(self) -> None:
        self._renderers: dict[str, type[Renderer]] = {}
        self._schemas: dict[str, vol.Schema] = {}

    def register(
        self, kind: str, renderer_class: type[Renderer], schema: vol.Schema
    ) -> None:
        """Register a renderer and its ``data:`` configuration schema.

        :param kind: The generator identifier used in configuration files.
        :param renderer_class: The renderer class.
        :param schema: Schema of the configuration data section.
        """
        self._renderers[kind] = renderer_class
        self._schemas[kind] = schema
        _LOGGER.debug("Registered renderer: %s", kind)

    def get_renderer_class(self, kind: str) -> type[Renderer]:
        """Get a registered renderer class.

        :param kind: The generator identifier.
        :return: The renderer class.
        """
        try:
            return self._renderers[str(kind)]
        except KeyError as exc:
            msg = f"Unknown generator: {kind}. Valid options: {sorted(self._renderers)}"
            raise ValueError(msg) from exc

    def get_renderer(self, spec: FactorSpec) -> Renderer:
        """Get a renderer bound to ``spec``."""
        return self.get_renderer_class(spec.kind)(spec)

    def get_schema(self, kind: str) -> vol.Schema:
        """Get the configuration schema of one generator."""
        try:
            return self._schemas[str(kind)]
        except KeyError as exc:
            msg = f"Unknown generator schema: {kind}"
            raise ValueError(msg) from exc

    def get_schema_list(self) -> list[vol.Schema]:
        """Get the configuration schemas of all registered generators."""
        return list(self._schemas.values())

    def get_renderer_list_str(self) -> list[str]:
        """Get the identifiers of all registered generators."""
        return list(self._renderers)


RENDERER_FACTORY = RendererFactory()


def build_factor_spec(
    kind: str,
    *,
    num_classes: int,
    num_contexts: int,
    noise_std: float,
    seed: int,
    **options: Any,
) -> FactorSpec:
    """Draw a new :class:`FactorSpec` deterministically from ``seed``.

    :param kind: Registered generator identifier.
    :param num_classes: Number of classes ``n``.
    :param num_contexts: Number of contexts ``m``.
    :param noise_std: Rendering noise standard deviation.
    :param seed: Seed of the prototype draw.
    :param options: Generator-specific options (``class_dim``, ``image_size`` ...).
    :return: The validated spec.
    """
    renderer_class = RENDERER_FACTORY.get_renderer_class(kind)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    spec = renderer_class.sample_spec(
        rng,
        num_classes=num_classes,
        num_contexts=num_contexts,
        noise_std=noise_std,
        **options,
    )
    _LOGGER.debug(
        "Built %s spec: %d classes, %d contexts, separation threshold %.3f",
        kind,
        spec.num_classes,
        spec.num_contexts,
        PROTOTYPE_SEPARATION * noise_std,
    )
    return spec
