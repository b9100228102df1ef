"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are `Function` subclasses. Calling `SomeFunction.apply(...)` runs the
forward pass on the inputs' numpy arrays and, when a `Tape` is active and any
input requires gradients, records the call on that tape. `backward(loss, tape)`
replays the tape in reverse and fills `.grad` on every tensor that requires it.

A tape belongs to one forward pass: it is emptied by `backward`.
"""

from __future__ import annotations

import logging
from typing import Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DegenerateRowError, DimensionError, NumericError

logger = logging.getLogger(__name__)

# Most-negative finite float64; masked softmax positions carry this value.
NEG_SENTINEL: float = float(np.finfo(np.float64).min)

ArrayLike = Union[np.ndarray, Sequence, float, int]


class Tensor:
    """
    Dense array of float64 values with an optional gradient slot.

    Attributes:
        values (np.ndarray): The data, row-major.
        grad (Optional[np.ndarray]): d(loss)/d(values) after `backward`, same shape as `values`.
        requires_grad (bool): Whether operations on this tensor are recorded.
    """

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, _as_tensor(other))

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, _as_tensor(other))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: float) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """
    Ordered record of the differentiable operations of one forward pass.

    Use as a context manager; operations applied while it is active are
    appended in execution order, which is already a topological order.
    """

    _active: ClassVar[List["Tape"]] = []

    def __init__(self):
        self.nodes: List["Function"] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._active[-1] if cls._active else None

    def record(self, node: "Function") -> None:
        self.nodes.append(node)

    def produced(self, tensor: Tensor) -> bool:
        return any(node.output is tensor for node in self.nodes)


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which maps
    the gradient of the output to one gradient per input (None where an input
    does not need one).
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Optional[Tensor] = None

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        node = cls(*inputs)
        values = node.forward(*(t.values for t in inputs), **kwargs)
        if not np.isfinite(values).all():
            raise NumericError(f"{cls.__name__} produced non-finite values")
        tape = Tape.current()
        tracked = tape is not None and any(t.requires_grad for t in inputs)
        out = Tensor(values, requires_grad=tracked)
        if tracked:
            node.output = out
            tape.record(node)
        return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcasting added or stretched to reach it."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor, tape: Tape) -> None:
    """
    Fill `.grad` with d(loss)/d(tensor) for every tensor on the tape that requires it.

    Tensors that require gradients but do not influence the loss get zeros.
    The tape is emptied afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ContractError("loss was not produced through the given tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    tracked: Dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad:
                tracked.setdefault(id(t), t)
        grad = grads.get(id(node.output))
        if grad is None:
            continue
        for t, g in zip(node.inputs, node.backward(grad)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + g if key in grads else g

    for key, t in tracked.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.values) if g is None else np.ascontiguousarray(g, dtype=np.float64)

    logger.debug("backward replayed %d nodes", len(tape.nodes))
    tape.nodes.clear()


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad * b.values, a.shape), unbroadcast(grad * a.values, b.shape)


class Scale(Function):
    def forward(self, x, factor: float):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class Gelu(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    _C = np.sqrt(2.0 / np.pi)

    def forward(self, x):
        self.inner = np.tanh(self._C * (x + 0.044715 * x**3))
        return 0.5 * x * (1.0 + self.inner)

    def backward(self, grad):
        x = self.inputs[0].values
        t = self.inner
        d_inner = self._C * (1.0 + 3 * 0.044715 * x**2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)


# ---------------------------------------------------------------------------
# Shape and indexing
# ---------------------------------------------------------------------------

class Reshape(Function):
    def forward(self, x, shape: Tuple[int, ...]):
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    def forward(self, x, axes: Tuple[int, ...]):
        self.axes = axes
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def scatter_rows(grad: np.ndarray, index: np.ndarray, extent: int) -> np.ndarray:
    """
    Inverse of `np.take(x, index, axis=-2)` for gradients: sum `grad` rows back
    into an array whose second-to-last axis has `extent` rows.

    Rows are summed in a fixed order (stable sort of the index), so the result
    is bit-identical from run to run.
    """
    lead = grad.shape[: grad.ndim - index.ndim - 1]
    width = grad.shape[-1]
    count = index.size
    rows = np.moveaxis(grad.reshape(lead + (count, width)), -2, 0).reshape(count, -1)
    flat = index.reshape(-1)
    order = np.argsort(flat, kind="stable")
    targets, starts = np.unique(flat[order], return_index=True)
    out = np.zeros((extent, rows.shape[1]))
    out[targets] = np.add.reduceat(rows[order], starts, axis=0)
    return np.moveaxis(out.reshape((extent,) + lead + (width,)), 0, -2)


class IndexSelect(Function):
    """Gather rows along the second-to-last axis: out[..., *index.shape, :]."""

    def forward(self, x, index: np.ndarray):
        if x.ndim < 2:
            raise DimensionError(f"index_select needs at least 2 dimensions, got shape {x.shape}")
        self.index = index
        return np.take(x, index, axis=-2)

    def backward(self, grad):
        return (scatter_rows(grad, self.index, self.inputs[0].shape[-2]),)


class Concat(Function):
    def forward(self, *arrays, axis: int):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


# ---------------------------------------------------------------------------
# Reductions and linear algebra
# ---------------------------------------------------------------------------

class Sum(Function):
    def forward(self, x, axis: Optional[int]):
        self.axis = axis
        return np.sum(x, axis=axis)

    def backward(self, grad):
        shape = self.inputs[0].shape
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape).copy(),)


class MatMul(Function):
    """
    a[..., m, k] @ b[..., k, p] with identical leading axes, or b[k, p]
    shared across all of a's leading axes.
    """

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs 2-D or batched operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise DimensionError(f"matmul leading extents differ: {a.shape} @ {b.shape}")
        if b.ndim == 2 and a.ndim > 2:
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs[0].values, self.inputs[1].values
        if b.ndim == 2 and a.ndim > 2:
            grad2 = grad.reshape(-1, grad.shape[-1])
            grad_a = (grad2 @ b.T).reshape(a.shape)
            grad_b = a.reshape(-1, a.shape[-1]).T @ grad2
            return grad_a, grad_b
        return np.matmul(grad, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), grad)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _blocked_positions(shape: Tuple[int, ...], additive_mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if additive_mask is None:
        return None
    mask = np.asarray(additive_mask, dtype=np.float64)
    try:
        blocked = np.broadcast_to(mask <= NEG_SENTINEL, shape)
    except ValueError as e:
        raise DimensionError(f"mask shape {mask.shape} does not broadcast to scores {shape}") from e
    if blocked.all(axis=-1).any():
        raise DegenerateRowError("softmax row has every position masked")
    return blocked


class SoftmaxRows(Function):
    """Softmax over the last axis; positions whose mask holds NEG_SENTINEL get exactly 0."""

    def forward(self, x, additive_mask: Optional[np.ndarray] = None):
        blocked = _blocked_positions(x.shape, additive_mask)
        if blocked is None or not blocked.any():
            e = x - x.max(axis=-1, keepdims=True)
            np.exp(e, out=e)
        else:
            row_max = np.where(blocked, NEG_SENTINEL, x).max(axis=-1, keepdims=True)
            e = np.where(blocked, row_max, x) - row_max
            np.exp(e, out=e)
            e[blocked] = 0.0
        e /= e.sum(axis=-1, keepdims=True)
        self.probs = e
        return e

    def backward(self, grad):
        y = self.probs
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LogSoftmaxRows(Function):
    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        self.log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        return self.log_probs

    def backward(self, grad):
        probs = np.exp(self.log_probs)
        return (grad - probs * grad.sum(axis=-1, keepdims=True),)


class PickColumns(Function):
    """out[i] = x[i, columns[i]] for a 2-D x."""

    def forward(self, x, columns: np.ndarray):
        self.columns = columns
        return x[np.arange(x.shape[0]), columns]

    def backward(self, grad):
        out = np.zeros(self.inputs[0].shape)
        out[np.arange(out.shape[0]), self.columns] = grad
        return (out,)


class LayerNorm(Function):
    """Normalize the last axis, then scale by gamma and shift by beta."""

    def forward(self, x, gamma, beta, eps: float):
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        self.rstd = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
        self.normed = centered * self.rstd
        return self.normed * gamma + beta

    def backward(self, grad):
        x, gamma, beta = self.inputs
        lead_axes = tuple(range(grad.ndim - 1))
        grad_gamma = (grad * self.normed).sum(axis=lead_axes)
        grad_beta = grad.sum(axis=lead_axes)
        g = grad * gamma.values
        grad_x = self.rstd * (
            g - g.mean(axis=-1, keepdims=True) - self.normed * (g * self.normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return Transpose.apply(x, axes=tuple(axes))


def index_select(x: Tensor, index: ArrayLike) -> Tensor:
    return IndexSelect.apply(x, index=np.asarray(index, dtype=np.int64))


def concat(tensors: Sequence[Tensor], axis: int = -2) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Sum.apply(x, axis=axis)


def mean(x: Tensor) -> Tensor:
    return scale(reduce_sum(x), 1.0 / x.size)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def softmax_rows(x: Tensor, additive_mask: Optional[Union[Tensor, np.ndarray]] = None) -> Tensor:
    """Row-wise softmax of the last axis with an optional 0 / NEG_SENTINEL mask."""
    if isinstance(additive_mask, Tensor):
        additive_mask = additive_mask.values
    return SoftmaxRows.apply(x, additive_mask=additive_mask)


def log_softmax_rows(x: Tensor) -> Tensor:
    return LogSoftmaxRows.apply(x)


def pick_columns(x: Tensor, columns: ArrayLike) -> Tensor:
    return PickColumns.apply(x, columns=np.asarray(columns, dtype=np.int64))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """
    Compare the tape gradient of scalar-valued `f` at `x` with central differences.

    Returns the max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    point = x.values.copy()
    trial = Tensor(point.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(trial)
    if not tape.produced(loss):
        raise ContractError("grad_check needs f to depend on its argument")
    backward(loss, tape)
    analytic = trial.grad.reshape(-1)

    def evaluate(values: np.ndarray) -> float:
        value = f(Tensor(values)).item()
        if not np.isfinite(value):
            raise NumericError("grad_check evaluation produced a non-finite value")
        return value

    flat = point.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + step
        upper = evaluate(shifted.reshape(point.shape))
        shifted[i] = flat[i] - step
        lower = evaluate(shifted.reshape(point.shape))
        numeric[i] = (upper - lower) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
