"""Dense tensors with a reverse-mode gradient tape.

Storage is float32 by default (float64 is available as a high-precision
check mode for finite-difference tests). Every primitive records itself on
the innermost active :class:`Tape` when at least one input requires a
gradient; ``Tape.backward`` then replays the records in exact reverse
creation order, accumulating gradients additively across fan-out.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    NonFiniteError,
    ParameterError,
    StaleTapeError,
)

MAX_RANK = 4

# Always-on by default; benchmarks may disable to measure raw kernel cost.
CHECK_FINITE = True

_TAPE_STACK: list["Tape"] = []


def active_tape():
    """The innermost recording tape, or None outside any recording scope."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense numeric array with an optional gradient buffer.

    Tensors are write-once: primitives always allocate fresh outputs, and
    only the optimizer mutates parameter data in place between passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds the rank-{MAX_RANK} tensor contract")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise DimensionError(f"item() needs a scalar tensor, got shape {self.shape}")

    def detach(self):
        """A grad-free view of the same data."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def copy(self):
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


class Tape:
    """Ordered record of primitive operations (a Wengert list).

    Use as a context manager around the forward pass, then call
    :meth:`backward` exactly once. A second call without re-recording
    raises :class:`StaleTapeError`.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))
        out._tape = self

    def backward(self, loss):
        if self._consumed:
            raise StaleTapeError("tape already consumed; re-record the forward pass")
        if not self._nodes:
            raise StaleTapeError("tape is empty; nothing was recorded")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def backward(loss):
    """Run reverse-mode differentiation from a scalar loss.

    Populates ``grad`` on every requires-grad tensor reachable from the
    loss; fan-out contributions accumulate additively.
    """
    if loss._tape is None:
        raise StaleTapeError("loss was not recorded on any tape")
    loss._tape.backward(loss)


# -- plumbing ------------------------------------------------------------


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _check_finite(arr, op_name):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op_name}")


def op_output(out_data, op_name, inputs, backward_fn):
    """Wrap raw output data, recording a tape node when gradients flow."""
    _check_finite(out_data, op_name)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    tape = active_tape()
    if requires and tape is not None:
        tape.record(out, backward_fn)
    return out


def accumulate_grad(t, g):
    """Add g into t.grad, allocating the buffer lazily."""
    if not t.requires_grad:
        return
    _check_finite(g, "backward")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a gradient down to `shape`, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcastable(a, b, op_name):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise primitives ----------------------------------------------


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcastable(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(g, b.shape))

    return op_output(out_data, "add", (a, b), backward_fn)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcastable(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(-g, b.shape))

    return op_output(out_data, "sub", (a, b), backward_fn)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcastable(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.shape))

    return op_output(out_data, "mul", (a, b), backward_fn)


def div(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _broadcastable(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(g / b.data, a.shape))
        accumulate_grad(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return op_output(out_data, "div", (a, b), backward_fn)


# -- linear algebra --------------------------------------------------------


def matmul(a, b):
    """Matrix product with broadcast-compatible leading batch extents.

    Accumulation runs in float64 and the result is rounded back to the
    storage dtype. This keeps reductions invariant to interleaved zero
    terms, so a low-rank-sliced model and its zero-padded twin produce
    bit-identical activations.
    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents differ: {a.shape} x {b.shape}") from None
    if a.data.dtype == np.float32:
        with np.errstate(over="ignore"):
            out_data = np.matmul(a.data, b.data, dtype=np.float64).astype(np.float32)
    else:
        out_data = np.matmul(a.data, b.data)

    def backward_fn(g):
        accumulate_grad(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
        accumulate_grad(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

    return op_output(out_data, "matmul", (a, b), backward_fn)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        accumulate_grad(a, np.transpose(g, inverse))

    return op_output(out_data, "transpose", (a,), backward_fn)


def swapaxes(a, i, j):
    axes = list(range(_as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)
    if out_data.ndim > MAX_RANK:
        raise DimensionError(f"reshape to rank {out_data.ndim} exceeds the rank-{MAX_RANK} contract")
    old_shape = a.shape

    def backward_fn(g):
        accumulate_grad(a, g.reshape(old_shape))

    return op_output(out_data, "reshape", (a,), backward_fn)


# -- reductions ------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data, dtype=a.data.dtype)

    def backward_fn(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        accumulate_grad(a, np.broadcast_to(gg, a.shape).astype(a.data.dtype, copy=False))

    return op_output(out_data, "sum", (a,), backward_fn)


def tensor_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= a.shape[i]
    out = tensor_sum(a, axis=axis, keepdims=keepdims)
    return mul(out, 1.0 / count)


def stack(tensors, axis=0):
    """Stack same-shape tensors along a new leading-or-given axis."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInputError("stack of zero tensors")
    out_data = np.stack([t.data for t in tensors], axis=axis)
    if out_data.ndim > MAX_RANK:
        raise DimensionError(f"stack to rank {out_data.ndim} exceeds the rank-{MAX_RANK} contract")

    def backward_fn(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            accumulate_grad(t, np.squeeze(piece, axis=axis))

    return op_output(out_data, "stack", tuple(tensors), backward_fn)


def index_first(a, i):
    """Select index i along the leading axis (a time slice)."""
    a = _as_tensor(a)
    if a.ndim < 1 or not (0 <= i < a.shape[0]):
        raise DimensionError(f"index {i} out of range for shape {a.shape}")
    out_data = a.data[i].copy()

    def backward_fn(g):
        buf = np.zeros_like(a.data)
        buf[i] = g
        accumulate_grad(a, buf)

    return op_output(out_data, "index_first", (a,), backward_fn)


# -- spiking nonlinearities -------------------------------------------------


def _surrogate_window(x_data, width):
    return (np.abs(x_data) < (width / 2.0)).astype(x_data.dtype)


def heaviside_surrogate(x, width=1.0):
    """Step function with a rectangular surrogate derivative.

    Forward is 1 where x >= 0 (a membrane exactly at threshold spikes),
    else 0. Backward passes (1/width) inside |x| < width/2 and 0 outside.
    """
    if width <= 0:
        raise ParameterError(f"surrogate width must be positive, got {width}")
    x = _as_tensor(x)
    out_data = (x.data >= 0).astype(x.data.dtype)

    def backward_fn(g):
        accumulate_grad(x, g * _surrogate_window(x.data, width) / width)

    return op_output(out_data, "heaviside_surrogate", (x,), backward_fn)


def clamped_linear(x, width=1.0):
    """The relaxed stand-in for the step: clip(x/width + 1/2, 0, 1).

    Shares the rectangular backward window of :func:`heaviside_surrogate`,
    which makes whole-network gradients checkable by finite differences.
    """
    if width <= 0:
        raise ParameterError(f"surrogate width must be positive, got {width}")
    x = _as_tensor(x)
    out_data = np.clip(x.data / width + 0.5, 0.0, 1.0).astype(x.data.dtype)

    def backward_fn(g):
        accumulate_grad(x, g * _surrogate_window(x.data, width) / width)

    return op_output(out_data, "clamped_linear", (x,), backward_fn)


# -- loss -------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean cross-entropy of [B, C] logits against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B, C] logits, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(sez)
    n = z.shape[0]
    out_data = np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=z.dtype)

    def backward_fn(g):
        p = ez / sez
        p[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, (g * p / n).astype(z.dtype, copy=False))

    return op_output(out_data, "cross_entropy", (logits,), backward_fn)
