"""Dense tensors with taped reverse-mode differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, and every
differentiable operation appends one entry to a module-level ``GradientTape``
(execution order equals topological order, so the backward sweep is a single
reverse pass).  Scalars are float32 by default; the gradient checker builds
float64 graphs through the same code path.

The tape is cleared after every ``backward`` call, which bounds memory in a
training loop.  Evaluation code should run under ``no_grad()`` so the tape
does not grow.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class GradientTape:
    """Ordered record of executed operations.

    Each entry is ``(output, inputs, backward_fn)`` where ``backward_fn``
    maps the gradient at the output to one gradient array (or ``None``) per
    input.  Gradient accumulation across fan-out is additive.
    """

    __slots__ = ("entries", "enabled")

    def __init__(self) -> None:
        self.entries: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []
        self.enabled = True

    def record(self, output: "Tensor", inputs: tuple["Tensor", ...], backward: Callable) -> None:
        self.entries.append((output, inputs, backward))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE = GradientTape()


def active_tape() -> GradientTape:
    return _TAPE


class no_grad:
    """Context manager that suspends recording (used by eval loops)."""

    def __enter__(self):
        self._prev = _TAPE.enabled
        _TAPE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE.enabled = self._prev
        return False


def _coerce(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in _FLOAT_DTYPES:
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    ``requires_grad`` is only meaningful on leaves (tensors the user created);
    tensors produced by operations propagate tracking automatically.  A tensor
    with ``requires_grad=False`` never accumulates gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "_leaf", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _coerce(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._leaf = True
        self._tracked = self.requires_grad

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        """The backing array (not a copy); treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._leaf = True
        out._tracked = False
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_constant_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_constant_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def _constant_like(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make_output(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if _TAPE.enabled and any(t._tracked for t in inputs):
        out._leaf = False
        out._tracked = True
        _TAPE.record(out, tuple(inputs), backward_fn)
    else:
        out._leaf = True
        out._tracked = False
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked leaf reachable from ``loss``.

    The tape is walked once in reverse execution order and then cleared.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    flowing: dict[int, np.ndarray] = {}
    if loss._leaf:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        _TAPE.clear()
        return
    flowing[id(loss)] = seed
    for out, inputs, backward_fn in reversed(_TAPE.entries):
        g = flowing.pop(id(out), None)
        if g is None:
            continue
        input_grads = backward_fn(g)
        for t, gi in zip(inputs, input_grads):
            if gi is None or not t._tracked:
                continue
            if t._leaf:
                if t.requires_grad:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
            else:
                acc = flowing.get(id(t))
                flowing[id(t)] = gi if acc is None else acc + gi
    _TAPE.clear()


# -- elementwise arithmetic (numpy broadcasting; gradients are unbroadcast) --


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    b = _constant_like(b, a)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make_output(data, (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    b = _constant_like(b, a)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make_output(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    b = _constant_like(b, a)
    data = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make_output(data, (a, b), bw)


def div(a: Tensor, b) -> Tensor:
    b = _constant_like(b, a)
    data = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make_output(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make_output(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make_output(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _make_output(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make_output(y, (a,), lambda g: (g * (0.5 / y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make_output(y, (a,), lambda g: (g * (1.0 - y * y),))


# -- structural ops ----------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    wanted = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(wanted)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {wanted}") from exc
    src_shape = a.data.shape
    return _make_output(data, (a,), lambda g: (g.reshape(src_shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if len(axes) != a.ndim:
        raise ShapeError(f"transpose axes {axes} do not match rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _make_output(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat requires at least one tensor")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim:
            raise ShapeError("concat operands must share rank")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make_output(data, tuple(tensors), bw)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (slice/int-free) indexing; gradient scatters zeros elsewhere."""
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, slice) and k is not Ellipsis:
            raise ShapeError("slice_ supports basic slices only")
    data = a.data[key]
    src_shape = a.data.shape

    def bw(g):
        gz = np.zeros(src_shape, dtype=g.dtype)
        gz[key] = g
        return (gz,)

    return _make_output(data, (a,), bw)


def pad(a: Tensor, pad_width: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``pad_width`` is one (before, after) pair per axis."""
    pw = tuple((int(b), int(e)) for b, e in pad_width)
    if len(pw) != a.ndim:
        raise ShapeError(f"pad_width rank {len(pw)} does not match tensor rank {a.ndim}")
    data = np.pad(a.data, pw)
    crop = tuple(slice(b, b + s) for (b, _), s in zip(pw, a.data.shape))
    return _make_output(data, (a,), lambda g: (g[crop],))


def gather(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Select positions along one axis by integer index; repeated indices
    accumulate additively in the gradient."""
    index = np.asarray(index)
    if index.ndim != 1:
        raise ShapeError("gather index must be one-dimensional")
    data = np.take(a.data, index, axis=axis)
    src_shape = a.data.shape

    def bw(g):
        gz = np.zeros(src_shape, dtype=g.dtype)
        np.add.at(np.moveaxis(gz, axis, 0), index, np.moveaxis(g, axis, 0))
        return (gz,)

    return _make_output(data, (a,), bw)


# -- reductions --------------------------------------------------------------


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        ax = int(ax)
        if ax < 0:
            ax += ndim
        if not 0 <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax)
    return tuple(sorted(set(out)))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    src_shape = a.data.shape

    def bw(g):
        if not keepdims:
            expand = list(src_shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g, src_shape).copy(),)

    return _make_output(data, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean along ``axis``; gradient is 1/n broadcast back."""
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)
    src_shape = a.data.shape
    inv_n = 1.0 / n

    def bw(g):
        if not keepdims:
            expand = list(src_shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        return (np.broadcast_to(g * inv_n, src_shape).astype(g.dtype, copy=False).copy(),)

    return _make_output(data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul supports 2-D operands only")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make_output(data, (a, b), bw)
