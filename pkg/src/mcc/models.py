"""Networks assembled from two-point and point layers.

Every image model maps a batch of (noisy, visual) patches to an output with the
clean patch's geometry (reconstruction or mask logits) or to a scalar score
(statistics network). ``forward`` returns a :class:`Pass` holding the output and
the hidden activations used for the energy term and firing statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import MemoryMap, PointConv, PointDense, TwoPointConv, TwoPointDense, TwoPointPair
from .params import ParameterStore, glorot_uniform
from .rng import Rng
from .tensor import Tensor

MODELS = ("mcc", "mcc-sparse", "baseline", "ae", "vae")


@dataclass
class Pass:
    out: Tensor
    hidden: list[Tensor] = field(default_factory=list)
    conv: dict[str, Tensor] = field(default_factory=dict)
    kl: Tensor | None = None


def _prod(shape) -> int:
    return int(np.prod(shape))


def _apply_kill(name: str, a: Tensor, kill) -> Tensor:
    if kill and name in kill:
        return a * kill[name]
    return a


class MCCEncoder:
    """Two streams of two-point conv layers, two-point channel embeddings, point global embedding."""

    def __init__(self, store: ParameterStore, rng: Rng, a_shape, b_shape, filters: int, kernel: int,
                 stride: int, conv_layers: int, channel_embed: int, global_embed: int,
                 context_act: str = "sigmoid", neighborhood: bool = False, shared_memory: bool = True):
        self.pairs: list[TwoPointPair] = []
        self.conv_names: list[str] = []
        a_src, b_src = tuple(a_shape), tuple(b_shape)
        ra_prev, rb_prev = a_src, b_src  # geometry of the distal sources
        m_dim = filters
        for l in range(conv_layers):
            name = f"enc.conv{l + 1}"
            kw = dict(context_act=context_act, neighborhood=neighborhood, memory=not shared_memory,
                      n_mem_prev=m_dim)
            la = TwoPointConv(store, name + ".a", rng, a_src, filters, kernel, stride,
                              n_distal=_prod(rb_prev), n_other=_prod(b_src), **kw)
            lb = TwoPointConv(store, name + ".b", rng, b_src, filters, kernel, stride,
                              n_distal=_prod(ra_prev), n_other=_prod(a_src), **kw)
            mem = (MemoryMap(store, name + ".mem", rng, m_dim, _prod(a_src), _prod(b_src), filters)
                   if shared_memory else None)
            self.pairs.append(TwoPointPair(la, lb, mem))
            self.conv_names += [name + ".a", name + ".b"]
            ra_prev, rb_prev = la.out_shape, lb.out_shape
            a_src, b_src = la.out_shape, lb.out_shape
            m_dim = filters
        kw = dict(n_mem=channel_embed, n_mem_prev=m_dim, context_act=context_act,
                  memory=not shared_memory, neighborhood=neighborhood)
        ea = TwoPointDense(store, "enc.embed.a", rng, _prod(a_src), channel_embed, _prod(rb_prev),
                           n_other=_prod(b_src), **kw)
        eb = TwoPointDense(store, "enc.embed.b", rng, _prod(b_src), channel_embed, _prod(ra_prev),
                           n_other=_prod(a_src), **kw)
        mem = (MemoryMap(store, "enc.embed.mem", rng, m_dim, _prod(a_src), _prod(b_src), channel_embed)
               if shared_memory else None)
        self.embed = TwoPointPair(ea, eb, mem)
        self.glob = PointDense(store, "enc.global", rng, 2 * channel_embed, global_embed)
        self.out_dim = global_embed
        self.unit_shapes = {}
        for p in self.pairs:
            self.unit_shapes[p.layer_a.name] = p.layer_a.out_shape
            self.unit_shapes[p.layer_b.name] = p.layer_b.out_shape

    def __call__(self, a, b, kill=None) -> Pass:
        conv = {}
        m = None
        ra = rb = None
        for pair in self.pairs:
            a_new, b_new, m = pair.forward(a, b, m, ra, rb)
            ra, rb = pair.layer_a.last["r"], pair.layer_b.last["r"]
            a = _apply_kill(pair.layer_a.name, a_new, kill)
            b = _apply_kill(pair.layer_b.name, b_new, kill)
            conv[pair.layer_a.name], conv[pair.layer_b.name] = a, b
        ea, eb, _ = self.embed.forward(a, b, m, ra, rb)
        g = self.glob(T.concat([ea, eb], axis=1))
        return Pass(g, list(conv.values()) + [ea, eb, g], conv)


class PointEncoder:
    """Point-neuron encoder.

    ``fusion=True`` (baseline): each channel embedding reads both streams by
    concatenation. ``fusion=False`` with ``b_shape=None`` (autoencoders): audio only.
    """

    def __init__(self, store: ParameterStore, rng: Rng, a_shape, b_shape, filters: int, kernel: int,
                 stride: int, conv_layers: int, channel_embed: int, global_embed: int, fusion: bool = True):
        self.streams = {"a": [], "b": []} if b_shape is not None else {"a": []}
        shapes = {"a": tuple(a_shape), "b": tuple(b_shape) if b_shape is not None else None}
        self.conv_names = []
        self.unit_shapes = {}
        for s in self.streams:
            shp = shapes[s]
            for l in range(conv_layers):
                layer = PointConv(store, f"enc.conv{l + 1}.{s}", rng, shp, filters, kernel, stride)
                self.streams[s].append(layer)
                self.unit_shapes[layer.name] = layer.out_shape
                shp = layer.out_shape
            shapes[s] = shp
        self.conv_names = sorted(self.unit_shapes, key=lambda n: (n.split(".")[1], n[-1]))
        self.fusion = fusion and b_shape is not None
        na = _prod(shapes["a"])
        nb = _prod(shapes["b"]) if b_shape is not None else 0
        if self.fusion:
            self.embed = {"a": PointDense(store, "enc.embed.a", rng, na + nb, channel_embed, fusion="concat"),
                          "b": PointDense(store, "enc.embed.b", rng, na + nb, channel_embed, fusion="concat")}
        else:
            self.embed = {s: PointDense(store, f"enc.embed.{s}", rng, _prod(shapes[s]), channel_embed)
                          for s in self.streams}
        self.glob = PointDense(store, "enc.global", rng, channel_embed * len(self.embed), global_embed)
        self.out_dim = global_embed

    def __call__(self, a, b=None, kill=None) -> Pass:
        conv = {}
        xs = {"a": a, "b": b}
        for s, layers in self.streams.items():
            x = xs[s]
            for layer in layers:
                x = _apply_kill(layer.name, layer(x), kill)
                conv[layer.name] = x
            xs[s] = x
        if self.fusion:
            emb = [self.embed["a"](xs["a"], xs["b"]), self.embed["b"](xs["b"], xs["a"])]
        else:
            emb = [self.embed[s](T.flatten(xs[s])) for s in self.streams]
        g = self.glob(emb[0] if len(emb) == 1 else T.concat(emb, axis=1))
        return Pass(g, [conv[n] for n in self.conv_names] + emb + [g], {n: conv[n] for n in self.conv_names})


class Decoder:
    """Dense layer, reshape to ``channels×base×base``, transposed convs, centre crop."""

    def __init__(self, store: ParameterStore, rng: Rng, in_dim: int, out_hw: tuple[int, int],
                 channels: int = 64, base: int = 2, filters=(32, 16, 1), kernel: int = 3, stride: int = 2):
        self.fc = PointDense(store, "dec.fc", rng, in_dim, channels * base * base)
        self.shape0 = (channels, base, base)
        self.kernels, self.biases = [], []
        c, size = channels, base
        for i, f in enumerate(filters):
            k = store.add(f"dec.convT{i + 1}.k",
                          glorot_uniform(rng.spawn(f"dec.convT{i + 1}"), f * kernel * kernel,
                                         c * kernel * kernel, (c, f, kernel, kernel)))
            b = store.add(f"dec.convT{i + 1}.b", Tensor(np.zeros((f, 1, 1)), requires_grad=True))
            self.kernels.append(k)
            self.biases.append(b)
            c, size = f, (size - 1) * stride + kernel
        self.stride = stride
        if size < out_hw[0] or size < out_hw[1]:
            raise ShapeError(f"decoder produces {size}×{size}, smaller than target {out_hw}")
        self.crop = tuple(slice((size - n) // 2, (size - n) // 2 + n) for n in out_hw)
        self.out_channels = c

    def __call__(self, code: Tensor) -> Tensor:
        h = T.reshape(self.fc(code), (code.shape[0],) + self.shape0)
        last = len(self.kernels) - 1
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            h = T.conv2d_transpose(h, k, self.stride) + b
            if i < last:
                h = T.relu(h)
        return h[(slice(None), slice(None)) + self.crop]


class ImageModel:
    """Encoder + head for the corpus tasks (reconstruction, mask, mi)."""

    def __init__(self, cfg, a_shape=None, b_shape=None, seed: int = 0):
        if cfg.model not in MODELS:
            raise ConfigError(f"unknown model {cfg.model!r}; choose from {MODELS}")
        a_shape = a_shape or (1, cfg.patch, cfg.patch)
        b_shape = b_shape or (1, a_shape[1] // 2, a_shape[2] // 2)
        self.patch = tuple(a_shape[1:])
        self.cfg = cfg
        self.kind = cfg.model
        self.task = cfg.task
        self.store = ParameterStore()
        rng = Rng(seed).spawn("init")
        common = dict(filters=cfg.filters, kernel=cfg.kernel, stride=cfg.stride, conv_layers=cfg.conv_layers,
                      channel_embed=cfg.channel_embed, global_embed=cfg.global_embed)
        self.uses_visual = self.kind not in ("ae", "vae")
        if self.kind in ("mcc", "mcc-sparse"):
            self.encoder = MCCEncoder(self.store, rng, a_shape, b_shape, context_act=cfg.context_act,
                                      neighborhood=cfg.neighborhood, shared_memory=cfg.shared_memory, **common)
        elif self.kind == "baseline":
            self.encoder = PointEncoder(self.store, rng, a_shape, b_shape, fusion=True, **common)
        else:
            self.encoder = PointEncoder(self.store, rng, a_shape, None, fusion=False, **common)
        code = self.encoder.out_dim
        if self.kind == "vae":
            self.mu = PointDense(self.store, "vae.mu", rng, code, code, act="identity")
            self.logvar = PointDense(self.store, "vae.logvar", rng, code, code, act="identity")
        if self.task == "mi":
            self.head = PointDense(self.store, "head.score", rng, code, 1, act="identity")
        else:
            self.decoder = Decoder(self.store, rng, code, a_shape[1:], channels=cfg.decoder_channels,
                                   base=cfg.decoder_base, filters=cfg.decoder_filters, kernel=cfg.kernel,
                                   stride=cfg.stride)

    @property
    def conv_names(self) -> list[str]:
        return self.encoder.conv_names

    @property
    def unit_shapes(self) -> dict[str, tuple]:
        return self.encoder.unit_shapes

    def encode(self, noisy, visual, kill=None) -> Pass:
        if self.uses_visual:
            return self.encoder(T.as_tensor(noisy), T.as_tensor(visual), kill=kill)
        return self.encoder(T.as_tensor(noisy), kill=kill)

    def forward(self, noisy, visual, kill=None, noise_rng: Rng | None = None) -> Pass:
        enc = self.encode(noisy, visual, kill)
        code, kl = enc.out, None
        if self.kind == "vae":
            mu, logvar = self.mu(code), self.logvar(code)
            if noise_rng is not None:
                eps = Tensor(noise_rng.normal(size=mu.shape))
                code = mu + T.exp(logvar * 0.5) * eps
            else:
                code = mu
            kl = T.mean(T.tsum(T.exp(logvar) + T.square(mu) - logvar - 1.0, axis=1)) * 0.5
        out = self.head(code) if self.task == "mi" else self.decoder(code)
        return Pass(out, enc.hidden, enc.conv, kl)

    __call__ = forward

    def sample_kill(self, p: float, rng: Rng) -> dict[str, np.ndarray]:
        """Independent keep/kill draw for every conv unit (1 = alive)."""
        return {name: (~rng.bernoulli(p, shape)).astype(float) for name, shape in self.unit_shapes.items()}


class MCCCritic:
    """Dense two-point statistics network f(x, y) -> score."""

    def __init__(self, dim_x: int, dim_y: int, hidden: int = 64, layers: int = 2, seed: int = 0,
                 context_act: str = "sigmoid", shared_memory: bool = True):
        self.store = ParameterStore()
        rng = Rng(seed).spawn("init")
        self.pairs = []
        nx, ny, rx, ry = dim_x, dim_y, dim_x, dim_y
        m_dim = hidden
        for l in range(layers):
            kw = dict(n_mem=hidden, n_mem_prev=m_dim, context_act=context_act, memory=not shared_memory)
            la = TwoPointDense(self.store, f"critic{l + 1}.a", rng, nx, hidden, ry, n_other=ny, **kw)
            lb = TwoPointDense(self.store, f"critic{l + 1}.b", rng, ny, hidden, rx, n_other=nx, **kw)
            mem = MemoryMap(self.store, f"critic{l + 1}.mem", rng, m_dim, nx, ny, hidden) if shared_memory else None
            self.pairs.append(TwoPointPair(la, lb, mem))
            nx = ny = rx = ry = hidden
        self.head = PointDense(self.store, "critic.head", rng, 2 * hidden, 1, act="identity")

    def __call__(self, x, y) -> Pass:
        a, b = T.as_tensor(x), T.as_tensor(y)
        m = ra = rb = None
        hidden = []
        for pair in self.pairs:
            a, b, m = pair.forward(a, b, m, ra, rb)
            ra, rb = pair.layer_a.last["r"], pair.layer_b.last["r"]
            hidden += [a, b]
        return Pass(T.reshape(self.head(T.concat([a, b], axis=1)), (-1,)), hidden)


class PointCritic:
    """Concatenate (x, y) and score with a ReLU MLP."""

    def __init__(self, dim_x: int, dim_y: int, hidden: int = 64, layers: int = 2, seed: int = 0):
        self.store = ParameterStore()
        rng = Rng(seed).spawn("init")
        self.layers = []
        n = dim_x + dim_y
        for l in range(layers):
            self.layers.append(PointDense(self.store, f"critic{l + 1}", rng, n, hidden))
            n = hidden
        self.head = PointDense(self.store, "critic.head", rng, n, 1, act="identity")

    def __call__(self, x, y) -> Pass:
        h = T.concat([T.as_tensor(x), T.as_tensor(y)], axis=1)
        hidden = []
        for layer in self.layers:
            h = layer(h)
            hidden.append(h)
        return Pass(T.reshape(self.head(h), (-1,)), hidden)
