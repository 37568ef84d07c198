"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output adjoint to the parents' adjoints.
:func:`backward` orders the recorded graph topologically (the :class:`Tape`)
and replays it once in reverse.

Arrays are numpy ``float64`` by default; ``float32`` is accepted everywhere.
Binary operations follow numpy broadcasting and reduce adjoints back to the
operand shapes.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, ShapeError

DEFAULT_DTYPE = np.float64

# per-thread so concurrent seed runs do not switch each other's recording off
_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    """An n-dimensional float array that can take part in gradient computation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- properties -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; plain numbers and arrays adopt the dtype of a Tensor partner."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def _result_dtype(*ts: Tensor):
    return np.result_type(*[t.data.dtype for t in ts])


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype in (np.float32, np.float64) else None)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# -- binary elementwise ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
                 "div")


# -- unary elementwise ----------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) without overflow."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = sigmoid(Tensor(x.data)).data
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def identity(x) -> Tensor:
    return as_tensor(x)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name to one of relu/sigmoid/tanh/exp/log/add/sub/mul."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- reductions and shape ops ---------------------------------------------

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(x.data[idx]), (x,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def pad(x, pad_width) -> Tensor:
    """Zero padding, ``pad_width`` as for :func:`numpy.pad`."""
    x = as_tensor(x)
    pw = [(int(a), int(b)) for a, b in pad_width]
    sl = tuple(slice(a, a + n) for (a, _), n in zip(pw, x.shape))
    return _make(np.pad(x.data, pw), (x,), lambda g: (g[sl],), "pad")


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None),
                 "matmul")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv expects c×h×w or n×c×h×w input, got {x.shape}")


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (n, c, h', w', k, k)
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(x, w.shape[2], stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # n, h', w', o
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: int, in_hw: tuple[int, int]) -> np.ndarray:
    n, _, ho, wo = g.shape
    c, k = w.shape[1], w.shape[2]
    dx = np.zeros((n, c) + tuple(in_hw), dtype=np.result_type(g, w))
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))  # n, h', w', c
            dx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                contrib.transpose(0, 3, 1, 2)
    return dx


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, stride: int, k: int) -> np.ndarray:
    win = _windows(x, k, stride)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # o, c, k, k


def conv_output_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def conv2d(x, kernels, stride: int = 1) -> Tensor:
    """Valid cross-correlation (no kernel flip).

    ``x`` is ``c_in×h×w`` or ``n×c_in×h×w``; ``kernels`` is ``c_out×c_in×k×k``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    xb, squeeze = _as_batched(x.data)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d kernels must be c_out×c_in×k×k, got {kernels.shape}")
    k = kernels.shape[2]
    if xb.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {xb.shape[1]}, kernels {kernels.shape[1]}")
    if k > xb.shape[2] or k > xb.shape[3]:
        raise ShapeError(f"conv2d kernel {k} larger than input {xb.shape[2:]}")
    out = _conv_fwd(xb, kernels.data, stride)
    in_hw = xb.shape[2:]

    def bw(g):
        gb = g[None] if squeeze else g
        gx = _conv_input_grad(gb, kernels.data, stride, in_hw) if x.requires_grad else None
        if gx is not None and squeeze:
            gx = gx[0]
        gw = _conv_weight_grad(xb, gb, stride, k) if kernels.requires_grad else None
        return gx, gw

    return _make(out[0] if squeeze else out, (x, kernels), bw, "conv2d")


def conv2d_transpose(x, kernels, stride: int = 1, output_size: tuple[int, int] | None = None) -> Tensor:
    """Linear adjoint of :func:`conv2d` for the same kernels and stride.

    ``kernels`` keeps the ``conv2d`` layout ``c_a×c_b×k×k``: the input carries
    ``c_a`` channels and the output ``c_b``. Default output extent is
    ``(h-1)*stride + k``; ``output_size`` may request up to ``stride-1`` extra
    rows/columns, matching a forward conv whose last window did not reach the edge.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if stride < 1:
        raise ShapeError("conv2d_transpose: stride must be >= 1")
    xb, squeeze = _as_batched(x.data)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d_transpose kernels must be c_a×c_b×k×k, got {kernels.shape}")
    if xb.shape[1] != kernels.shape[0]:
        raise ShapeError(f"conv2d_transpose channel mismatch: input {xb.shape[1]}, kernels {kernels.shape[0]}")
    k = kernels.shape[2]
    h, w = xb.shape[2:]
    base = ((h - 1) * stride + k, (w - 1) * stride + k)
    if output_size is None:
        output_size = base
    output_size = tuple(int(s) for s in output_size)
    for b_, o_, i_ in zip(base, output_size, (h, w)):
        if not (b_ <= o_ < b_ + stride) or conv_output_size(o_, k, stride) != i_:
            raise ShapeError(f"conv2d_transpose: output size {output_size} incompatible with input {(h, w)}")
    out = _conv_input_grad(xb, kernels.data, stride, output_size)

    def bw(g):
        gb = g[None] if squeeze else g
        gx = _conv_fwd(gb, kernels.data, stride) if x.requires_grad else None
        if gx is not None and squeeze:
            gx = gx[0]
        gw = _conv_weight_grad(gb, xb, stride, k) if kernels.requires_grad else None
        return gx, gw

    return _make(out[0] if squeeze else out, (x, kernels), bw, "conv2d_transpose")


# -- numerically stable reductions ------------------------------------------

def logmeanexp(x) -> Tensor:
    """log(mean(exp(x))) over a 1-d tensor, shifted by the max for overflow safety."""
    x = as_tensor(x)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"logmeanexp expects a non-empty vector, got {x.shape}")
    mx = np.max(x.data)
    e = np.exp(x.data - mx)
    s = e.sum()
    out = mx + np.log(s / x.size)
    return _make(np.asarray(out, dtype=x.dtype), (x,), lambda g: (g * e / s,), "logmeanexp")


# -- tape and backward ------------------------------------------------------

class Tape:
    """Topologically ordered record of the operations that produced ``root``."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(root: Tensor, store=None) -> Tape:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every tensor that requires grad.

    If a :class:`~mcc.params.ParameterStore` is passed its gradient slots are
    refreshed afterwards; parameters that did not participate get zeros.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    tape = Tape.from_root(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if store is not None:
        store.collect_grads()
    return tape


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
