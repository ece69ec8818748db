"""Affine layers, multilayer perceptrons and classifiers."""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

_LOGGER = logging.getLogger(__name__)


class Module(ABC):
    """Base class of everything that owns trainable tensors."""

    @abstractmethod
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Return ``(name, tensor)`` pairs in a stable order."""

    @abstractmethod
    def __call__(self, x: Any) -> Tensor:
        """Run the forward pass."""

    def parameters(self) -> list[Tensor]:
        """Return the trainable tensors in a stable order."""
        return [param for _, param in self.named_parameters()]

    def freeze(self) -> None:
        """Stop recording gradients for every parameter."""
        for param in self.parameters():
            param.requires_grad = False

    def unfreeze(self) -> None:
        """Resume recording gradients for every parameter."""
        for param in self.parameters():
            param.requires_grad = True

    @property
    def frozen(self) -> bool:
        """Whether no parameter receives gradients."""
        return not any(param.requires_grad for param in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        """Return a copy of all parameter values keyed by name."""
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values in place.

        :param state: Values keyed by parameter name; must cover every
            parameter with matching shapes.
        """
        for name, param in self.named_parameters():
            try:
                values = np.asarray(state[name], dtype=np.float64)
            except KeyError as exc:
                msg = f"State is missing parameter {name}"
                raise KeyError(msg) from exc
            if values.shape != param.shape:
                msg = (
                    f"Parameter {name} has shape {param.shape}, "
                    f"state provides {values.shape}"
                )
                raise ShapeError(msg)
            param.data[...] = values

    def parameter_hash(self) -> str:
        """Return a digest over parameter names, shapes and values."""
        digest = hashlib.sha256()
        for name, param in self.named_parameters():
            digest.update(name.encode())
            digest.update(str(param.shape).encode())
            digest.update(np.ascontiguousarray(param.data).tobytes())
        return digest.hexdigest()


class Linear(Module):
    """Affine transform ``x @ weight + bias``.

    Weights are drawn from ``uniform(-sqrt(1/fan_in), sqrt(1/fan_in))``,
    biases start at zero.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        *,
        rng: np.random.Generator,
        name: str = "linear",
    ) -> None:
        """Initialize the layer.

        :param in_dim: Input feature count.
        :param out_dim: Output feature count.
        :param rng: Generator used for the weight draw.
        :param name: Prefix of the parameter names.
        """
        if in_dim < 1 or out_dim < 1:
            msg = f"Layer dimensions must be positive, got {in_dim} -> {out_dim}"
            raise ValueError(msg)
        bound = np.sqrt(1.0 / in_dim)
        self.name = name
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(in_dim, out_dim)),
            requires_grad=True,
            name=f"{name}.weight",
        )
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    @classmethod
    def from_arrays(
        cls, weight: np.ndarray, bias: np.ndarray, *, name: str = "linear"
    ) -> Linear:
        """Build a layer with the given values."""
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            msg = f"Incompatible weight {weight.shape} and bias {bias.shape}"
            raise ShapeError(msg)
        layer = cls.__new__(cls)
        layer.name = name
        layer.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        layer.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")
        return layer

    @property
    def in_dim(self) -> int:
        """Input feature count."""
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        """Output feature count."""
        return self.weight.shape[1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(self.weight.name, self.weight), (self.bias.name, self.bias)]

    def __call__(self, x: Any) -> Tensor:
        return as_tensor(x) @ self.weight + self.bias


class Mlp(Module):
    """Stack of affine layers with ReLU between them and identity at the output."""

    def __init__(
        self,
        dims: Sequence[int],
        *,
        rng: np.random.Generator,
        name: str = "mlp",
    ) -> None:
        """Initialize the network.

        :param dims: Layer widths from input to output, e.g. ``[16, 64, 64, 32]``
            for a 3-layer network.
        :param rng: Generator used for all weight draws.
        :param name: Prefix of the parameter names.
        """
        if len(dims) < 2:
            msg = f"An MLP needs at least an input and an output width, got {dims}"
            raise ValueError(msg)
        self.name = name
        self.layers = [
            Linear(dims[i], dims[i + 1], rng=rng, name=f"{name}.{i}")
            for i in range(len(dims) - 1)
        ]

    @classmethod
    def from_layers(cls, layers: Sequence[Linear], *, name: str = "mlp") -> Mlp:
        """Assemble a network from existing layers."""
        if not layers:
            msg = "An MLP needs at least one layer"
            raise ValueError(msg)
        for k, (lower, upper) in enumerate(zip(layers, layers[1:], strict=False)):
            if lower.out_dim != upper.in_dim:
                msg = (
                    f"Layer {k} outputs {lower.out_dim} features but layer "
                    f"{k + 1} expects {upper.in_dim}"
                )
                raise ShapeError(msg)
        mlp = cls.__new__(cls)
        mlp.name = name
        mlp.layers = list(layers)
        return mlp

    @property
    def dims(self) -> list[int]:
        """Layer widths from input to output."""
        return [self.layers[0].in_dim, *(layer.out_dim for layer in self.layers)]

    @property
    def in_dim(self) -> int:
        """Input feature count."""
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        """Output feature count."""
        return self.layers[-1].out_dim

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [pair for layer in self.layers for pair in layer.named_parameters()]

    def __call__(self, x: Any) -> Tensor:
        out = as_tensor(x)
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            out = layer(out)
            if k < last:
                out = out.relu()
        return out


class Classifier(Module):
    """Feature extractor followed by an affine head producing logits."""

    def __init__(self, features: Module, head: Linear) -> None:
        """Combine a feature extractor and a head."""
        self.features = features
        self.head = head

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [*self.features.named_parameters(), *self.head.named_parameters()]

    def __call__(self, x: Any) -> Tensor:
        return self.head(self.features(x))


def mlp_from_state(state: Mapping[str, np.ndarray]) -> Mlp:
    """Rebuild an :class:`Mlp` from a state dict written by :meth:`Module.state_dict`.

    Parameter names must follow the ``<prefix>.<layer>.weight|bias`` pattern.
    """
    layers: dict[int, dict[str, np.ndarray]] = {}
    prefix = None
    for name, values in state.items():
        head, _, kind = name.rpartition(".")
        layer_prefix, _, index = head.rpartition(".")
        if kind not in {"weight", "bias"} or not index.isdigit():
            msg = f"Unexpected parameter name in MLP state: {name}"
            raise KeyError(msg)
        prefix = layer_prefix if prefix is None else prefix
        layers.setdefault(int(index), {})[kind] = np.asarray(values)

    if not layers:
        msg = "Cannot rebuild an MLP from an empty state"
        raise ValueError(msg)

    ordered = []
    for index in sorted(layers):
        entry = layers[index]
        if set(entry) != {"weight", "bias"}:
            msg = f"Layer {index} is missing its weight or bias"
            raise KeyError(msg)
        ordered.append(
            Linear.from_arrays(entry["weight"], entry["bias"], name=f"{prefix}.{index}")
        )
    _LOGGER.debug("Rebuilt MLP %s with %d layers", prefix, len(ordered))
    return Mlp.from_layers(ordered, name=prefix or "mlp")
