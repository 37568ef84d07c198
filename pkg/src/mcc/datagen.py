"""Synthetic two-stream data.

* Correlated Gaussian pairs with known mutual information.
* An audio-visual-like corpus: spectrogram-like clean patches made of harmonic
  ridges, noisy mixtures at -12..+12 dB, and a deterministic low-resolution side
  stream derived from the clean patch.

Patches are frequency × time with frequency on axis 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import DomainError, ShapeError
from .objectives import ideal_binary_mask
from .rng import Rng

SNR_GRID = tuple(range(-12, 13, 3))
NOISE_KINDS = ("white", "pink", "interference")


@dataclass
class GaussianPairSpec:
    dim: int = 20
    rho: float | tuple = 0.5
    n: int = 256
    seed: int = 0

    def correlations(self) -> np.ndarray:
        rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (self.dim,)).copy()
        if self.dim < 1:
            raise DomainError("dim must be >= 1")
        if np.any(np.abs(rho) >= 1):
            raise DomainError("|rho| must be < 1")
        return rho


def sample_correlated_gaussians(spec: GaussianPairSpec, rng: Rng | None = None):
    """(X, Y) with Y_k = rho_k X_k + sqrt(1 - rho_k^2) xi_k."""
    rng = rng or Rng(spec.seed)
    rho = spec.correlations()
    x = rng.normal(size=(spec.n, spec.dim))
    xi = rng.normal(size=(spec.n, spec.dim))
    y = rho * x + np.sqrt(1.0 - rho * rho) * xi
    return x, y


def synth_clean_signal(rng: Rng, h: int = 16, w: int = 16) -> np.ndarray:
    """Non-negative patch of 1-3 harmonic ridges with smooth pitch and envelopes, max 1."""
    if h < 8 or w < 8:
        raise ShapeError("patch extents must be >= 8")
    freqs = np.arange(h)[:, None]
    t = np.linspace(0.0, 1.0, w)[None, :]
    out = np.zeros((h, w))
    for _ in range(int(rng.integers(1, 4))):
        f0 = rng.uniform(0.08, 0.3) * h
        drift = rng.uniform(-0.3, 0.3) * f0
        phase = rng.uniform(0, 2 * np.pi)
        pitch = f0 + drift * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + phase)
        onset, dur = rng.uniform(-0.3, 0.5), rng.uniform(0.4, 1.2)
        env = np.exp(-0.5 * ((t - onset - dur / 2) / (dur / 2.5)) ** 2)
        width = rng.uniform(0.5, 0.9)
        decay = rng.uniform(0.5, 0.85)
        harmonic = 1
        while harmonic * f0 < h + 2:
            amp = decay ** (harmonic - 1)
            out += amp * env * np.exp(-0.5 * ((freqs - harmonic * pitch) / width) ** 2)
            harmonic += 1
    return out / out.max()


def white_noise(rng: Rng, h: int, w: int) -> np.ndarray:
    return np.abs(rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))) / np.sqrt(2)


def pink_noise(rng: Rng, h: int, w: int) -> np.ndarray:
    tilt = 1.0 / np.sqrt(np.arange(1, h + 1))[:, None]
    return white_noise(rng, h, w) * tilt


def make_noise(kind: str, rng: Rng, h: int, w: int) -> np.ndarray:
    if kind == "white":
        return white_noise(rng, h, w)
    if kind == "pink":
        return pink_noise(rng, h, w)
    if kind == "interference":
        return synth_clean_signal(rng, h, w)
    raise DomainError(f"unknown noise kind {kind!r}")


def power(x) -> float:
    return float(np.mean(np.square(x)))


def mix_at_snr(clean, noise, snr_db: float) -> np.ndarray:
    """clean + s * noise with s chosen so P_clean / P(s * noise) = 10^(snr/10)."""
    clean, noise = np.asarray(clean, float), np.asarray(noise, float)
    if clean.shape != noise.shape:
        raise ShapeError(f"clean {clean.shape} and noise {noise.shape} differ")
    pc, pn = power(clean), power(noise)
    if pn <= 0:
        raise DomainError("noise has zero power")
    if pc <= 0:
        raise DomainError("clean signal has zero power; SNR scaling undefined")
    s = np.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))
    return clean + s * noise


def spectral_flatness(patch, eps: float = 1e-12) -> float:
    """Mean over time frames of geometric / arithmetic mean of the power spectrum."""
    p = np.square(np.asarray(patch, float)) + eps
    return float(np.mean(np.exp(np.mean(np.log(p), axis=0)) / np.mean(p, axis=0)))


def visual_stream_transform(clean) -> np.ndarray:
    """Deterministic side stream: binomial blur, 2×2 average pool, tanh(2x)."""
    x = np.asarray(clean, float)
    h, w = x.shape
    k = np.array([0.25, 0.5, 0.25])
    xp = np.pad(x, 1, mode="edge")
    blur = k[0] * xp[:-2] + k[1] * xp[1:-1] + k[2] * xp[2:]
    blur = k[0] * blur[:, :-2] + k[1] * blur[:, 1:-1] + k[2] * blur[:, 2:]
    pooled = blur[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return np.tanh(2.0 * pooled)


@dataclass
class TwoStreamCorpus:
    clean: np.ndarray  # n×1×h×w
    noisy: np.ndarray  # n×1×h×w, normalised
    visual: np.ndarray  # n×1×h/2×w/2
    snr: np.ndarray  # n, dB
    noise_kind: list[str]
    norm_mean: float
    norm_std: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    access: dict[str, int] = field(default_factory=lambda: {"train": 0, "test": 0})

    def __len__(self):
        return self.clean.shape[0]

    @property
    def patch_shape(self) -> tuple[int, int]:
        return self.clean.shape[2], self.clean.shape[3]

    def normalize(self, x):
        return (np.asarray(x) - self.norm_mean) / self.norm_std

    def denormalize(self, x):
        return np.asarray(x) * self.norm_std + self.norm_mean

    def noisy_raw(self, idx=slice(None)) -> np.ndarray:
        return self.denormalize(self.noisy[idx])

    def ibm(self, idx=slice(None), threshold_db: float = 0.0) -> np.ndarray:
        clean = self.clean[idx]
        noise = np.maximum(self.noisy_raw(idx) - clean, 0.0)
        return ideal_binary_mask(clean, noise, threshold_db)

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return self.train_idx if name == "train" else self.test_idx

    def batch(self, split: str, idx) -> dict[str, np.ndarray]:
        """Rows ``idx`` (positions within ``split``); counts accesses per split."""
        rows = self.split(split)[idx]
        self.access[split] += len(rows)
        return {"noisy": self.noisy[rows], "visual": self.visual[rows], "clean": self.clean[rows],
                "ibm": self.ibm(rows), "noisy_raw": self.noisy_raw(rows), "rows": rows}

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        tensor_io.save(d / "clean.mcct", self.clean)
        tensor_io.save(d / "noisy.mcct", self.noisy)
        tensor_io.save(d / "visual.mcct", self.visual)
        with open(d / "snr.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "snr_db", "noise"])
            for i, (s, k) in enumerate(zip(self.snr, self.noise_kind)):
                w.writerow([i, int(s), k])
        with open(d / "norm.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mean", "std"])
            w.writerow([repr(float(self.norm_mean)), repr(float(self.norm_std))])
        with open(d / "split.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "split"])
            for i in self.train_idx:
                w.writerow([int(i), "train"])
            for i in self.test_idx:
                w.writerow([int(i), "test"])
        return d

    @classmethod
    def load(cls, directory) -> TwoStreamCorpus:
        d = Path(directory)
        clean = tensor_io.load(d / "clean.mcct")
        noisy = tensor_io.load(d / "noisy.mcct")
        visual = tensor_io.load(d / "visual.mcct")
        try:
            snr_rows = list(csv.DictReader(open(d / "snr.csv", encoding="utf-8")))
            norm = next(csv.DictReader(open(d / "norm.csv", encoding="utf-8")))
            split_rows = list(csv.DictReader(open(d / "split.csv", encoding="utf-8")))
        except OSError as e:
            raise tensor_io.TensorFileError(f"{e.filename}: {e.strerror}") from e
        snr = np.array([int(r["snr_db"]) for r in snr_rows])
        kinds = [r["noise"] for r in snr_rows]
        train = np.array([int(r["index"]) for r in split_rows if r["split"] == "train"], dtype=np.int64)
        test = np.array([int(r["index"]) for r in split_rows if r["split"] == "test"], dtype=np.int64)
        return cls(clean, noisy, visual, snr, kinds, float(norm["mean"]), float(norm["std"]), train, test)


def make_corpus(n: int, rng: Rng, snr_grid=SNR_GRID, h: int = 16, w: int = 16,
                train_fraction: float = 0.8) -> TwoStreamCorpus:
    """Generate, normalise, shuffle and split ``n`` samples.

    SNR labels and noise kinds cycle over their grids before shuffling, so each
    bucket holds ``n / len(grid)`` samples up to one.
    """
    if n < 10:
        raise DomainError("corpus needs at least 10 samples")
    snr_grid = tuple(snr_grid)
    clean = np.empty((n, 1, h, w))
    raw = np.empty((n, 1, h, w))
    visual = np.empty((n, 1, h // 2, w // 2))
    snr = np.empty(n, dtype=np.int64)
    kinds = []
    for i in range(n):
        srng = rng.spawn("sample", i)
        c = synth_clean_signal(srng.spawn("clean"), h, w)
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        s = snr_grid[i % len(snr_grid)]
        clean[i, 0] = c
        raw[i, 0] = mix_at_snr(c, make_noise(kind, srng.spawn("noise"), h, w), s)
        visual[i, 0] = visual_stream_transform(c)
        snr[i] = s
        kinds.append(kind)
    order = rng.spawn("presort").permutation(n)
    clean, raw, visual, snr = clean[order], raw[order], visual[order], snr[order]
    kinds = [kinds[i] for i in order]
    mu, sd = float(raw.mean()), float(raw.std())
    noisy = (raw - mu) / sd
    perm = rng.spawn("split").permutation(n)
    n_train = int(np.floor(train_fraction * n))
    return TwoStreamCorpus(clean, noisy, visual, snr, kinds, mu, sd,
                           np.sort(perm[:n_train]), np.sort(perm[n_train:]))
