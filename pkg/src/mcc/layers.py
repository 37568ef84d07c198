"""Context-sensitive two-point layers and point-neuron baselines.

A two-point unit separates the feedforward drive (receptive field, ``r``) from
the modulatory context it receives. Per layer::

    r = W_rf A_prev + b                       receptive field
    p = W_p r + b                             proximal context (same stream)
    d = W_d r_other_prev + b                  distal context (other stream)
    m = W_rec m_prev + W_self A_prev + W_cross A_other_prev + b   universal context
    c = act_c(U_p p + U_d d + U_m m + b)      integrated context (additive kernel)
    A = act(r * c)

The trilinear integration ``c_e = T[e, i, j, k] p_i d_j m_k`` is available on
dense layers for small extents. Batches run along axis 0.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ResourceError, ShapeError
from .params import ParameterStore, glorot_uniform
from .rng import Rng
from .tensor import Tensor

ACTIVATIONS = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "identity": T.identity,
}

NEIGHBOR_EPS = 1e-6


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def _zeros(store: ParameterStore, name: str, dims, dtype=np.float64) -> Tensor:
    return store.add(name, Tensor(np.zeros(dims, dtype=dtype), requires_grad=True))


def _dense(store, name, rng, n_in, n_out, bias=True):
    w = store.add(name + ".w", glorot_uniform(rng.spawn(name), n_in, n_out, (n_in, n_out)))
    b = _zeros(store, name + ".b", (n_out,)) if bias else None
    return w, b


def _affine(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    if x.ndim != 2:
        x = T.flatten(x)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"input extent {x.shape[1]} does not match weight {w.shape}")
    y = T.matmul(x, w)
    return y if b is None else y + b


def _as_batch(x) -> tuple[Tensor, bool]:
    """Promote a single vector to a batch of one."""
    x = T.as_tensor(x)
    if x.ndim == 1:
        return T.reshape(x, (1, -1)), True
    return x, False


def modulate(r, c) -> Tensor:
    """Hadamard product: context gates the receptive-field drive."""
    r, c = T.as_tensor(r), T.as_tensor(c)
    if r.shape != c.shape:
        raise ShapeError(f"modulate: r {r.shape} and c {c.shape} differ")
    return T.mul(r, c)


def neighborhood_gain(c: Tensor) -> Tensor:
    """Local mean of ``c`` over adjacent units, normalised by its per-sample mean.

    Dense input ``n×u`` uses a window of 3 along the unit axis; conv input
    ``n×f×h×w`` uses a 3×3 spatial window per filter. Edge windows average only
    the units that exist, so a uniform ``c`` yields a uniform gain.
    """
    if c.ndim == 2:
        n, u = c.shape
        cp = T.pad(c, [(0, 0), (1, 1)])
        total = cp[:, :-2] + cp[:, 1:-1] + cp[:, 2:]
        count = np.convolve(np.ones(u), np.ones(3), mode="same")
        local = total / count
        axes = (1,)
    elif c.ndim == 4:
        n, f, h, w = c.shape
        flat = T.reshape(c, (n * f, 1, h, w))
        padded = T.pad(flat, [(0, 0), (0, 0), (1, 1), (1, 1)])
        ones = np.ones((1, 1, 3, 3), dtype=c.dtype)
        total = T.reshape(T.conv2d(padded, Tensor(ones), 1), (n, f, h, w))
        count = T.conv2d(np.pad(np.ones((1, 1, h, w)), [(0, 0), (0, 0), (1, 1), (1, 1)]), ones, 1).data
        local = total / count
        axes = (1, 2, 3)
    else:
        raise ShapeError(f"neighborhood_gain expects 2-d or 4-d context, got {c.shape}")
    norm = T.mean(local, axis=axes, keepdims=True) + NEIGHBOR_EPS
    return local / norm


class MemoryMap:
    """Universal-context update ``m = W_rec m_prev + W_self A + W_cross A_other + b``."""

    def __init__(self, store: ParameterStore, name: str, rng: Rng, n_prev: int, n_self: int,
                 n_cross: int, n_mem: int):
        self.n_prev, self.n_self, self.n_cross, self.n_mem = n_prev, n_self, n_cross, n_mem
        self.w_rec, _ = _dense(store, name + ".rec", rng, n_prev, n_mem, bias=False)
        self.w_self, _ = _dense(store, name + ".self", rng, n_self, n_mem, bias=False)
        self.w_cross, _ = _dense(store, name + ".cross", rng, n_cross, n_mem, bias=False)
        self.b = _zeros(store, name + ".b", (n_mem,))

    def __call__(self, m_prev, a_prev, a_other_prev) -> Tensor:
        return (_affine(T.as_tensor(m_prev), self.w_rec, None)
                + _affine(T.as_tensor(a_prev), self.w_self, None)
                + _affine(T.as_tensor(a_other_prev), self.w_cross, None)
                + self.b)

    def initial(self, batch: int, dtype=np.float64) -> Tensor:
        return Tensor(np.zeros((batch, self.n_prev), dtype=dtype))


def universal_context_update(memory: MemoryMap, m_prev, a_prev, a_other_prev) -> Tensor:
    return memory(m_prev, a_prev, a_other_prev)


class TwoPointDense:
    """Dense context-sensitive layer for one stream.

    ``n_distal`` is the extent of the other stream's previous-layer receptive
    field (or its raw input at the first layer). The layer owns a
    :class:`MemoryMap` unless ``memory=False``, in which case the caller must
    pass a precomputed ``m`` (shared universal context).
    """

    def __init__(self, store: ParameterStore, name: str, rng: Rng, n_in: int, n_out: int,
                 n_distal: int, n_other: int | None = None, n_mem: int | None = None,
                 n_mem_prev: int | None = None, mode: str = "additive", act: str = "relu",
                 context_act: str = "sigmoid", neighborhood: bool = False, memory: bool = True,
                 trilinear_cap: int = 4096):
        n_other = n_distal if n_other is None else n_other
        n_mem = n_out if n_mem is None else n_mem
        n_mem_prev = n_mem if n_mem_prev is None else n_mem_prev
        self.name = name
        self.n_in, self.n_out, self.n_distal, self.n_mem = n_in, n_out, n_distal, n_mem
        self.mode = mode
        self.act = activation(act)
        self.context_act = activation(context_act)
        self.neighborhood = neighborhood
        self.rf_w, self.rf_b = _dense(store, name + ".rf", rng, n_in, n_out)
        self.p_w, self.p_b = _dense(store, name + ".prox", rng, n_out, n_out)
        self.d_w, self.d_b = _dense(store, name + ".dist", rng, n_distal, n_out)
        self.memory = (MemoryMap(store, name + ".mem", rng, n_mem_prev, n_in, n_other, n_mem)
                       if memory else None)
        if mode == "additive":
            self.cp_w, _ = _dense(store, name + ".ctx_p", rng, n_out, n_out, bias=False)
            self.cd_w, _ = _dense(store, name + ".ctx_d", rng, n_out, n_out, bias=False)
            self.cm_w, _ = _dense(store, name + ".ctx_m", rng, n_mem, n_out, bias=False)
        elif mode == "trilinear":
            extent = n_out * n_out * n_mem * n_out
            if extent > trilinear_cap:
                raise ResourceError(f"trilinear context needs {extent} weights, cap is {trilinear_cap}")
            k = n_out * n_out * n_mem
            self.tri_w = store.add(name + ".ctx_tri.w",
                                   glorot_uniform(rng.spawn(name + ".tri"), k, n_out, (k, n_out)))
        else:
            raise ConfigError(f"unknown context integration mode {mode!r}")
        self.c_b = _zeros(store, name + ".ctx.b", (n_out,))
        self.last: dict[str, Tensor] = {}

    # individual stages -------------------------------------------------
    def rf_transform(self, a_prev) -> Tensor:
        return _affine(T.as_tensor(a_prev), self.rf_w, self.rf_b)

    def proximal_context(self, r) -> Tensor:
        return _affine(T.as_tensor(r), self.p_w, self.p_b)

    def distal_context(self, r_other_prev) -> Tensor:
        return _affine(T.as_tensor(r_other_prev), self.d_w, self.d_b)

    def integrate_context(self, p, d, m) -> Tensor:
        p, d, m = T.as_tensor(p), T.as_tensor(d), T.as_tensor(m)
        if self.mode == "additive":
            z = _affine(p, self.cp_w, None) + _affine(d, self.cd_w, None) + _affine(m, self.cm_w, None)
        else:
            n = p.shape[0]
            pd = T.reshape(p, (n, -1, 1)) * T.reshape(d, (n, 1, -1))
            pdm = T.reshape(pd, (n, -1, 1)) * T.reshape(m, (n, 1, -1))
            z = T.matmul(T.reshape(pdm, (n, -1)), self.tri_w)
        return self.context_act(z + self.c_b)

    def param_count_formula(self) -> int:
        i, o, dd, mm = self.n_in, self.n_out, self.n_distal, self.n_mem
        n = (i * o + o) + (o * o + o) + (dd * o + o) + o
        if self.mode == "additive":
            n += o * o + o * o + mm * o
        else:
            n += o * o * mm * o
        if self.memory is not None:
            mem = self.memory
            n += mem.n_prev * mm + mem.n_self * mm + mem.n_cross * mm + mm
        return n

    def forward(self, a_prev, a_other_prev, m_prev=None, distal=None, m=None):
        """Return ``(A, m)``; intermediates are kept in ``self.last``.

        ``distal`` defaults to ``a_other_prev`` (first layer). ``m`` overrides the
        memory update when the universal context is shared across streams.
        """
        a_prev, single = _as_batch(a_prev)
        a_other_prev, _ = _as_batch(a_other_prev)
        distal = a_other_prev if distal is None else _as_batch(distal)[0]
        if m is None:
            if self.memory is None:
                raise ConfigError(f"{self.name}: layer has no memory map; pass a shared m")
            if m_prev is None:
                m_prev = self.memory.initial(a_prev.shape[0], a_prev.dtype)
            m = self.memory(_as_batch(m_prev)[0], a_prev, a_other_prev)
        else:
            m = _as_batch(m)[0]
        r = self.rf_transform(a_prev)
        p = self.proximal_context(r)
        d = self.distal_context(distal)
        c = self.integrate_context(p, d, m)
        a = modulate(r, c)
        if self.neighborhood:
            a = a * neighborhood_gain(c)
        out = self.act(a)
        self.last = {"r": r, "p": p, "d": d, "m": m, "c": c, "a": a, "A": out}
        if single:
            return T.reshape(out, (-1,)), T.reshape(m, (-1,))
        return out, m

    __call__ = forward

    def forward_neighborhood(self, a_prev, a_other_prev, m_prev=None, distal=None, m=None):
        prev = self.neighborhood
        self.neighborhood = True
        try:
            return self.forward(a_prev, a_other_prev, m_prev, distal, m)
        finally:
            self.neighborhood = prev


class TwoPointConv:
    """Convolutional two-point layer.

    The receptive field and proximal context are convolutions (the proximal map
    is 1×1, so it keeps the receptive-field geometry). Distal and universal
    contexts are dense maps from the flattened source to one value per filter,
    broadcast over space, so every unit sees the whole adjacent stream.
    """

    def __init__(self, store: ParameterStore, name: str, rng: Rng, in_shape: tuple[int, int, int],
                 filters: int, kernel: int, stride: int, n_distal: int, n_other: int,
                 n_mem_prev: int | None = None, act: str = "relu", context_act: str = "sigmoid",
                 neighborhood: bool = False, memory: bool = True):
        c, h, w = in_shape
        if kernel > h or kernel > w:
            raise ShapeError(f"{name}: kernel {kernel} larger than input {in_shape}")
        self.name = name
        self.in_shape = tuple(in_shape)
        self.filters, self.kernel, self.stride = filters, kernel, stride
        self.out_shape = (filters, T.conv_output_size(h, kernel, stride), T.conv_output_size(w, kernel, stride))
        self.n_mem = filters
        self.act = activation(act)
        self.context_act = activation(context_act)
        self.neighborhood = neighborhood
        fan_in, fan_out = c * kernel * kernel, filters * kernel * kernel
        self.rf_k = store.add(name + ".rf.k", glorot_uniform(rng.spawn(name + ".rf"), fan_in, fan_out,
                                                             (filters, c, kernel, kernel)))
        self.rf_b = _zeros(store, name + ".rf.b", (filters, 1, 1))
        self.p_k = store.add(name + ".prox.k", glorot_uniform(rng.spawn(name + ".prox"), filters, filters,
                                                              (filters, filters, 1, 1)))
        self.p_b = _zeros(store, name + ".prox.b", (filters, 1, 1))
        self.d_w, self.d_b = _dense(store, name + ".dist", rng, n_distal, filters)
        n_mem_prev = filters if n_mem_prev is None else n_mem_prev
        self.memory = (MemoryMap(store, name + ".mem", rng, n_mem_prev, c * h * w, n_other, filters)
                       if memory else None)
        self.cp_k = store.add(name + ".ctx_p.k", glorot_uniform(rng.spawn(name + ".ctx_p"), filters, filters,
                                                                (filters, filters, 1, 1)))
        self.cd_w, _ = _dense(store, name + ".ctx_d", rng, filters, filters, bias=False)
        self.cm_w, _ = _dense(store, name + ".ctx_m", rng, filters, filters, bias=False)
        self.c_b = _zeros(store, name + ".ctx.b", (filters,))
        self.last: dict[str, Tensor] = {}

    def _per_filter(self, v: Tensor) -> Tensor:
        return T.reshape(v, (v.shape[0], self.filters, 1, 1))

    def forward(self, a_prev, a_other_prev, m_prev=None, distal=None, m=None):
        a_prev, a_other_prev = T.as_tensor(a_prev), T.as_tensor(a_other_prev)
        if a_prev.ndim == 3:
            a_prev = T.reshape(a_prev, (1,) + a_prev.shape)
        if a_prev.shape[1:] != self.in_shape:
            raise ShapeError(f"{self.name}: expected input {self.in_shape}, got {a_prev.shape[1:]}")
        n = a_prev.shape[0]
        distal = a_other_prev if distal is None else T.as_tensor(distal)
        if m is None:
            if self.memory is None:
                raise ConfigError(f"{self.name}: layer has no memory map; pass a shared m")
            if m_prev is None:
                m_prev = self.memory.initial(n, a_prev.dtype)
            m = self.memory(m_prev, a_prev, a_other_prev)
        r = T.conv2d(a_prev, self.rf_k, self.stride) + self.rf_b
        p = T.conv2d(r, self.p_k, 1) + self.p_b
        d = _affine(distal, self.d_w, self.d_b)
        z_global = _affine(d, self.cd_w, None) + _affine(m, self.cm_w, None) + self.c_b
        c = self.context_act(T.conv2d(p, self.cp_k, 1) + self._per_filter(z_global))
        a = modulate(r, c)
        if self.neighborhood:
            a = a * neighborhood_gain(c)
        out = self.act(a)
        self.last = {"r": r, "p": p, "d": d, "m": m, "c": c, "a": a, "A": out}
        return out, m

    __call__ = forward


class TwoPointPair:
    """One layer of two cooperating streams.

    With ``shared_memory`` (default) a single universal context is computed from
    both streams and fed to both layers; otherwise each layer keeps its own.
    """

    def __init__(self, layer_a, layer_b, memory: MemoryMap | None = None):
        self.layer_a, self.layer_b, self.memory = layer_a, layer_b, memory

    @property
    def shared(self) -> bool:
        return self.memory is not None

    def initial_memory(self, batch: int, dtype=np.float64):
        if self.shared:
            return self.memory.initial(batch, dtype)
        return (self.layer_a.memory.initial(batch, dtype), self.layer_b.memory.initial(batch, dtype))

    def forward(self, a, b, m_prev=None, ra_prev=None, rb_prev=None):
        n = T.as_tensor(a).shape[0]
        if m_prev is None:
            m_prev = self.initial_memory(n, T.as_tensor(a).dtype)
        if self.shared:
            m = self.memory(m_prev, a, b)
            a_new, _ = self.layer_a.forward(a, b, distal=rb_prev, m=m)
            b_new, _ = self.layer_b.forward(b, a, distal=ra_prev, m=m)
            return a_new, b_new, m
        ma_prev, mb_prev = m_prev
        a_new, ma = self.layer_a.forward(a, b, ma_prev, distal=rb_prev)
        b_new, mb = self.layer_b.forward(b, a, mb_prev, distal=ra_prev)
        return a_new, b_new, (ma, mb)


class PointDense:
    """Point-neuron layer: ``act(W fuse(A, A_other) + b)``.

    ``fusion`` is ``concat``, ``add`` or ``mul``; with a single input no fusion is applied.
    """

    def __init__(self, store: ParameterStore, name: str, rng: Rng, n_in: int, n_out: int,
                 act: str = "relu", fusion: str = "concat"):
        if fusion not in ("concat", "add", "mul"):
            raise ConfigError(f"unknown fusion {fusion!r}")
        self.name, self.fusion = name, fusion
        self.n_in, self.n_out = n_in, n_out
        self.act = activation(act)
        self.w, self.b = _dense(store, name, rng, n_in, n_out)

    def fuse(self, a: Tensor, b: Tensor) -> Tensor:
        a, b = T.flatten(a), T.flatten(b)
        if self.fusion == "concat":
            return T.concat([a, b], axis=1)
        if a.shape != b.shape:
            raise ShapeError(f"{self.fusion}-fusion needs equal extents, got {a.shape} and {b.shape}")
        return a + b if self.fusion == "add" else a * b

    def forward(self, a, b=None) -> Tensor:
        a, single = _as_batch(a)
        x = a if b is None else self.fuse(a, _as_batch(b)[0])
        out = self.act(_affine(x, self.w, self.b))
        return T.reshape(out, (-1,)) if single else out

    __call__ = forward

    def param_count_formula(self) -> int:
        return self.n_in * self.n_out + self.n_out


def baseline_forward(layer: PointDense, a_prev, a_other_prev) -> Tensor:
    return layer.forward(a_prev, a_other_prev)


class PointConv:
    """Plain convolution + bias + activation."""

    def __init__(self, store: ParameterStore, name: str, rng: Rng, in_shape: tuple[int, int, int],
                 filters: int, kernel: int, stride: int, act: str = "relu"):
        c, h, w = in_shape
        if kernel > h or kernel > w:
            raise ShapeError(f"{name}: kernel {kernel} larger than input {in_shape}")
        self.name = name
        self.in_shape = tuple(in_shape)
        self.stride = stride
        self.out_shape = (filters, T.conv_output_size(h, kernel, stride), T.conv_output_size(w, kernel, stride))
        self.act = activation(act)
        self.k = store.add(name + ".k", glorot_uniform(rng.spawn(name), c * kernel * kernel,
                                                       filters * kernel * kernel, (filters, c, kernel, kernel)))
        self.b = _zeros(store, name + ".b", (filters, 1, 1))
        self.last: dict[str, Tensor] = {}

    def forward(self, x) -> Tensor:
        a = T.conv2d(x, self.k, self.stride) + self.b
        out = self.act(a)
        self.last = {"a": a, "A": out}
        return out

    __call__ = forward
