"""Named parameters, Glorot initialisation and the Adam optimiser."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import Rng
from .tensor import DEFAULT_DTYPE, Tensor


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, dims, dtype=DEFAULT_DTYPE) -> Tensor:
    """U(-L, L) with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, tuple(dims)).astype(dtype), requires_grad=True)


@dataclass
class Entry:
    value: Tensor
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParameterStore:
    entries: dict[str, Entry] = field(default_factory=dict)

    def add(self, name: str, value: Tensor) -> Tensor:
        if name in self.entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        value.requires_grad = True
        z = np.zeros_like(value.data)
        self.entries[name] = Entry(value, z.copy(), z.copy(), z.copy())
        return value

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def tensors(self) -> list[Tensor]:
        return [e.value for e in self.entries.values()]

    def count(self) -> int:
        return sum(e.value.size for e in self.entries.values())

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.value.grad = None
            e.grad[...] = 0.0

    def collect_grads(self) -> None:
        for e in self.entries.values():
            if e.value.grad is None:
                e.grad[...] = 0.0
            else:
                e.grad[...] = e.value.grad

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(e.grad * e.grad)) for e in self.entries.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: e.value.data.copy() for k, e in self.entries.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.entries) - set(arrays)
        if missing:
            raise ShapeError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, e in self.entries.items():
            a = arrays[k]
            if a.shape != e.value.shape:
                raise ShapeError(f"parameter {k}: checkpoint shape {a.shape} != model shape {e.value.shape}")
            e.value.data[...] = a

    def save(self, directory) -> Path:
        from .tensor_io import save_manifest

        return save_manifest(directory, self.snapshot())

    def load(self, directory) -> None:
        from .tensor_io import load_manifest

        self.load_arrays(load_manifest(directory))


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParameterStore:
    """One bias-corrected Adam update using the gradients held in ``store``."""
    for e in store.entries.values():
        e.step += 1
        g = e.grad
        e.m *= beta1
        e.m += (1.0 - beta1) * g
        e.v *= beta2
        e.v += (1.0 - beta2) * (g * g)
        m_hat = e.m / (1.0 - beta1 ** e.step)
        v_hat = e.v / (1.0 - beta2 ** e.step)
        e.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store
