"""Reverse-mode differentiation on dense float64 tensors.

Operations on tensors that are attached to a :class:`Tape`, or on trainable
leaves while a tape is active, are recorded on that tape. :func:`backward` on
a scalar result walks the tape in reverse and returns the gradient of every
trainable leaf that contributed to it.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from contextvars import ContextVar, Token
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

_ACTIVE_TAPE: ContextVar[Tape | None] = ContextVar("invlab_tape", default=None)

type Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]
type GradientMap = dict[Tensor, Tensor]


class ShapeError(ValueError):
    """Raised when the shapes of operands do not compose."""


class TapeError(RuntimeError):
    """Raised when a tape is used incorrectly."""


class TapeNode(NamedTuple):
    """Handle of a recorded tensor on its tape."""

    tape: Tape
    index: int


@dataclass(slots=True)
class _Record:
    parents: tuple[int | None, ...]
    vjp: Vjp | None
    leaf: Tensor | None


class Tape:
    """Append-only record of differentiable operations.

    Used as a context manager, the tape becomes the active tape of the current
    context: trainable leaves (``requires_grad=True``) used inside the block
    are recorded on it. Nodes are appended in execution order, so parents
    always precede their children.
    """

    def __init__(self) -> None:
        """Create an empty tape."""
        self.nodes: list[_Record] = []
        self._leaf_index: dict[int, int] = {}
        self._tokens: list[Token[Tape | None]] = []

    def __enter__(self) -> Tape:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        """Trainable leaves recorded on this tape, in first-use order."""
        return [rec.leaf for rec in self.nodes if rec.leaf is not None]

    def leaf(self, tensor: Tensor) -> int:
        """Return the node index of a trainable leaf, recording it if needed."""
        index = self._leaf_index.get(id(tensor))
        if index is None:
            index = self.append((), None, leaf=tensor)
            self._leaf_index[id(tensor)] = index
        return index

    def append(
        self,
        parents: tuple[int | None, ...],
        vjp: Vjp | None,
        *,
        leaf: Tensor | None = None,
    ) -> int:
        """Append a node and return its index."""
        self.nodes.append(_Record(parents, vjp, leaf))
        return len(self.nodes) - 1

    def backward(
        self, loss: Tensor, params: Iterable[Tensor] | None = None
    ) -> GradientMap:
        """Differentiate a scalar loss with respect to trainable leaves.

        :param loss: Scalar tensor recorded on this tape.
        :param params: Leaves to return gradients for. Leaves that did not
            contribute to ``loss`` get an all-zero gradient. Defaults to every
            leaf recorded on the tape.
        :return: Mapping from leaf tensor to its gradient.
        """
        node = loss.tape_node
        if node is None or node.tape is not self:
            msg = "Loss is not recorded on this tape."
            raise TapeError(msg)
        if loss.data.size != 1:
            msg = f"backward requires a scalar loss, got shape {loss.shape}"
            raise TapeError(msg)

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[node.index] = np.ones_like(loss.data)
        for index in range(node.index, -1, -1):
            grad = grads[index]
            record = self.nodes[index]
            if grad is None or record.vjp is None:
                continue
            for parent, parent_grad in zip(
                record.parents, record.vjp(grad), strict=True
            ):
                if parent is None or parent_grad is None:
                    continue
                current = grads[parent]
                grads[parent] = parent_grad if current is None else current + parent_grad

        wanted = self.leaves if params is None else list(params)
        result: GradientMap = {}
        for param in wanted:
            index = self._leaf_index.get(id(param))
            grad = grads[index] if index is not None else None
            if grad is None:
                grad = np.zeros_like(param.data)
            result[param] = Tensor(grad, name=f"grad({param.name})")
        return result


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> GradientMap:
    """Differentiate ``loss`` on the tape it was recorded on.

    :param loss: Scalar, tape-attached tensor.
    :param params: Optional leaves to report; see :meth:`Tape.backward`.
    :return: Mapping from leaf tensor to its gradient.
    """
    if loss.tape_node is None:
        msg = "Loss is not attached to a tape; nothing to differentiate."
        raise TapeError(msg)
    return loss.tape_node.tape.backward(loss, params)


def _resolve_tape(inputs: Sequence[Tensor]) -> Tape | None:
    tapes = {
        id(t.tape_node.tape): t.tape_node.tape
        for t in inputs
        if t.tape_node is not None
    }
    if len(tapes) > 1:
        msg = "Cannot combine tensors recorded on different tapes."
        raise TapeError(msg)
    if tapes:
        return next(iter(tapes.values()))
    active = _ACTIVE_TAPE.get()
    if active is not None and any(t.requires_grad for t in inputs):
        return active
    return None


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjp: Vjp) -> Tensor:
    """Wrap an op result and record it when any input is tracked."""
    result = Tensor._wrap(out)
    tape = _resolve_tape(inputs)
    if tape is None:
        return result

    parents: list[int | None] = []
    for tensor in inputs:
        if tensor.tape_node is not None:
            parents.append(tensor.tape_node.index)
        elif tensor.requires_grad:
            parents.append(tape.leaf(tensor))
        else:
            parents.append(None)
    if all(parent is None for parent in parents):
        return result
    result.tape_node = TapeNode(tape, tape.append(tuple(parents), vjp))
    return result


def as_tensor(value: Any) -> Tensor:
    """Return ``value`` as a tensor, wrapping arrays and scalars as constants."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        msg = f"Cannot {op} tensors of shapes {a.shape} and {b.shape}"
        raise ShapeError(msg) from exc


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand(grad: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    """Broadcast a reduced gradient back to the input shape."""
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape).copy()


class Tensor:
    """Dense float64 array with optional attachment to a differentiation tape.

    :param data: Array-like values; copied into a float64 buffer.
    :param requires_grad: Marks the tensor as a trainable leaf.
    :param name: Human-readable name used in gradient maps and checkpoints.
    """

    __slots__ = ("data", "name", "requires_grad", "tape_node")
    __array_ufunc__ = None

    def __init__(
        self, data: Any, *, requires_grad: bool = False, name: str = ""
    ) -> None:
        """Class constructor."""
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.tape_node: TapeNode | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.requires_grad = False
        tensor.name = ""
        tensor.tape_node = None
        return tensor

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        """Dimension sizes."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.data.size

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        if self.data.size != 1:
            msg = f"item() requires a one-element tensor, got shape {self.shape}"
            raise ShapeError(msg)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def detach(self) -> Tensor:
        """Return an untracked constant copy."""
        return Tensor(self.data)

    # elementwise arithmetic

    def __add__(self, other: Any) -> Tensor:
        b = as_tensor(other)
        _broadcast_shape(self, b, "add")
        a_shape, b_shape = self.shape, b.shape
        return _record(
            self.data + b.data,
            (self, b),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    def __radd__(self, other: Any) -> Tensor:
        return as_tensor(other) + self

    def __sub__(self, other: Any) -> Tensor:
        b = as_tensor(other)
        _broadcast_shape(self, b, "subtract")
        a_shape, b_shape = self.shape, b.shape
        return _record(
            self.data - b.data,
            (self, b),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other: Any) -> Tensor:
        return as_tensor(other) - self

    def __mul__(self, other: Any) -> Tensor:
        b = as_tensor(other)
        _broadcast_shape(self, b, "multiply")
        a_data, b_data = self.data, b.data
        return _record(
            a_data * b_data,
            (self, b),
            lambda g: (
                _unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape),
            ),
        )

    def __rmul__(self, other: Any) -> Tensor:
        return as_tensor(other) * self

    def __truediv__(self, other: Any) -> Tensor:
        b = as_tensor(other)
        _broadcast_shape(self, b, "divide")
        a_data, b_data = self.data, b.data
        return _record(
            a_data / b_data,
            (self, b),
            lambda g: (
                _unbroadcast(g / b_data, a_data.shape),
                _unbroadcast(-g * a_data / (b_data * b_data), b_data.shape),
            ),
        )

    def __rtruediv__(self, other: Any) -> Tensor:
        return as_tensor(other) / self

    def __neg__(self) -> Tensor:
        return _record(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            msg = "Only constant exponents are supported."
            raise TypeError(msg)
        a_data = self.data
        p = float(exponent)
        return _record(
            a_data**p, (self,), lambda g: (g * p * a_data ** (p - 1.0),)
        )

    def scale(self, factor: float) -> Tensor:
        """Multiply by a constant scalar."""
        factor = float(factor)
        return _record(self.data * factor, (self,), lambda g: (g * factor,))

    # linear algebra

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other: Any) -> Tensor:
        return matmul(as_tensor(other), self)

    @property
    def T(self) -> Tensor:  # noqa: N802
        """Transpose of a matrix."""
        if self.ndim != 2:
            msg = f"Transpose requires a matrix, got shape {self.shape}"
            raise ShapeError(msg)
        return _record(self.data.T.copy(), (self,), lambda g: (g.T,))

    def reshape(self, *shape: int) -> Tensor:
        """Return the same values with a new shape."""
        original = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            msg = f"Cannot reshape tensor of shape {original} to {shape}"
            raise ShapeError(msg) from exc
        return _record(out.copy(), (self,), lambda g: (g.reshape(original),))

    def __getitem__(self, index: Any) -> Tensor:
        a_shape = self.shape

        def vjp(g: np.ndarray) -> tuple[np.ndarray]:
            grad = np.zeros(a_shape)
            np.add.at(grad, index, g)
            return (grad,)

        return _record(np.array(self.data[index]), (self,), vjp)

    # nonlinearities

    def relu(self) -> Tensor:
        """Rectified linear unit."""
        mask = self.data > 0
        return _record(self.data * mask, (self,), lambda g: (g * mask,))

    def exp(self) -> Tensor:
        """Elementwise exponential."""
        out = np.exp(self.data)
        return _record(out, (self,), lambda g: (g * out,))

    def log(self) -> Tensor:
        """Elementwise natural logarithm."""
        a_data = self.data
        return _record(np.log(a_data), (self,), lambda g: (g / a_data,))

    def abs(self) -> Tensor:
        """Elementwise absolute value; the subgradient at zero is zero."""
        sign = np.sign(self.data)
        return _record(np.abs(self.data), (self,), lambda g: (g * sign,))

    def sqrt(self) -> Tensor:
        """Elementwise square root."""
        out = np.sqrt(self.data)
        return _record(out, (self,), lambda g: (g * 0.5 / out,))

    def square(self) -> Tensor:
        """Elementwise square."""
        return self * self

    # reductions

    def sum(self, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
        """Sum over ``axis`` (all elements when ``None``)."""
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)
        expand_axis = None if keepdims or axis is None else axis
        return _record(
            np.asarray(out), (self,), lambda g: (_expand(g, shape, expand_axis),)
        )

    def mean(self, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
        """Arithmetic mean over ``axis`` (all elements when ``None``)."""
        count = self.size if axis is None else self.shape[axis]
        if count == 0:
            msg = f"Cannot take the mean of an empty tensor of shape {self.shape}"
            raise ShapeError(msg)
        return self.sum(axis=axis, keepdims=keepdims).scale(1.0 / count)

    def logsumexp(self, axis: int = -1, *, keepdims: bool = False) -> Tensor:
        """Log-sum-exp over ``axis`` with max subtraction."""
        shape = self.shape
        shift = self.data.max(axis=axis, keepdims=True)
        exps = np.exp(self.data - shift)
        total = exps.sum(axis=axis, keepdims=True)
        out = shift + np.log(total)
        probs = exps / total
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def vjp(g: np.ndarray) -> tuple[np.ndarray]:
            grad = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(grad, shape) * probs,)

        return _record(out, (self,), vjp)

    def log_softmax(self, axis: int = -1) -> Tensor:
        """Log of the softmax over ``axis``, computed through log-sum-exp."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        probs = np.exp(out)
        return _record(
            out,
            (self,),
            lambda g: (g - probs * g.sum(axis=axis, keepdims=True),),
        )

    def softmax(self, axis: int = -1) -> Tensor:
        """Softmax over ``axis`` with max subtraction."""
        exps = np.exp(self.data - self.data.max(axis=axis, keepdims=True))
        out = exps / exps.sum(axis=axis, keepdims=True)
        return _record(
            out,
            (self,),
            lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
        )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 1-D or 2-D tensors."""
    if not (1 <= a.ndim <= 2 and 1 <= b.ndim <= 2) or a.shape[-1] != b.shape[0]:
        msg = f"Cannot matmul tensors of shapes {a.shape} and {b.shape}"
        raise ShapeError(msg)
    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    out2 = a2 @ b2
    out_shape = tuple(
        dim
        for dim, keep in zip(out2.shape, (a.ndim == 2, b.ndim == 2), strict=True)
        if keep
    )
    a_shape, b_shape = a.shape, b.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g2 = np.reshape(g, out2.shape)
        return (g2 @ b2.T).reshape(a_shape), (a2.T @ g2).reshape(b_shape)

    return _record(out2.reshape(out_shape), (a, b), vjp)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product over the last axis (row-wise for matrices)."""
    return (a * b).sum(axis=-1)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        msg = "concatenate requires at least one tensor"
        raise ShapeError(msg)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        msg = f"Cannot concatenate tensors of shapes {shapes} along axis {axis}"
        raise ShapeError(msg) from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(
        out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis))
    )
