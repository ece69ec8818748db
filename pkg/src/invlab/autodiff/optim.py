"""First-order optimizers updating parameters in place."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence

import numpy as np

from .tensor import ShapeError, Tensor

_LOGGER = logging.getLogger(__name__)


class Optimizer(ABC):
    """Abstract optimizer over a fixed list of parameters.

    :param params: Tensors updated in place by :meth:`step`.
    :param lr: Learning rate.
    """

    def __init__(self, params: Sequence[Tensor], lr: float) -> None:
        """Class constructor."""
        if lr <= 0:
            msg = f"Learning rate must be positive, got {lr}"
            raise ValueError(msg)
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def step(self, grads: Mapping[Tensor, Tensor]) -> None:
        """Apply one update.

        :param grads: Gradient map, typically from :func:`backward`; must
            contain every parameter of this optimizer.
        """
        resolved: list[np.ndarray] = []
        for param in self.params:
            try:
                grad = grads[param]
            except KeyError as exc:
                msg = f"Missing gradient for parameter {param.name or '<unnamed>'}"
                raise KeyError(msg) from exc
            if grad.shape != param.shape:
                msg = (
                    f"Gradient shape {grad.shape} does not match parameter "
                    f"{param.name} of shape {param.shape}"
                )
                raise ShapeError(msg)
            resolved.append(grad.data)

        self.step_count += 1
        for index, (param, grad) in enumerate(zip(self.params, resolved, strict=True)):
            self._update(index, param, grad)

    @abstractmethod
    def _update(self, index: int, param: Tensor, grad: np.ndarray) -> None:
        """Update a single parameter in place."""


class SGD(Optimizer):
    """Plain gradient descent, ``p <- p - lr * g``."""

    def _update(self, index: int, param: Tensor, grad: np.ndarray) -> None:  # noqa: ARG002
        param.data -= self.lr * grad


class Adam(Optimizer):
    """Adam with bias-corrected first and second moments."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 0.001,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        """Initialize moments to zero for every parameter."""
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def _update(self, index: int, param: Tensor, grad: np.ndarray) -> None:
        m = self.first_moment[index]
        v = self.second_moment[index]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**self.step_count)
        v_hat = v / (1.0 - self.beta2**self.step_count)
        param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS: dict[str, Callable[..., Optimizer]] = {"sgd": SGD, "adam": Adam}


def make_optimizer(kind: str, params: Sequence[Tensor], lr: float) -> Optimizer:
    """Create an optimizer by name.

    :param kind: One of the keys of :data:`OPTIMIZERS`.
    :param params: Parameters to optimize.
    :param lr: Learning rate.
    :return: The optimizer instance.
    """
    try:
        optimizer_class = OPTIMIZERS[kind]
    except KeyError as exc:
        msg = f"Unknown optimizer: {kind}. Valid options: {sorted(OPTIMIZERS)}"
        raise ValueError(msg) from exc
    _LOGGER.debug("Creating %s optimizer for %d tensors, lr=%g", kind, len(params), lr)
    return optimizer_class(params, lr=lr)
