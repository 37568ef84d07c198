"""Training objectives and firing statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DomainError, ShapeError
from .rng import Rng
from .tensor import Tensor


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    energy_tau: float = 0.1
    fire_threshold: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("alpha, beta and gamma must be non-negative")
        if not self.energy_tau > 0:
            raise ConfigError("energy_tau must be positive")
        if self.fire_threshold < 0:
            raise ConfigError("fire_threshold must be non-negative")


def dv_bound(joint_scores, marginal_scores) -> Tensor:
    """Donsker-Varadhan lower bound: mean(f_joint) - log mean exp(f_marginal)."""
    joint, marg = T.as_tensor(joint_scores), T.as_tensor(marginal_scores)
    joint, marg = T.reshape(joint, (-1,)), T.reshape(marg, (-1,))
    if joint.size < 2 or marg.size < 2:
        raise ContractError("dv_bound needs at least two samples per term")
    return T.mean(joint) - T.logmeanexp(marg)


def dv_standard_error(joint_scores, marginal_scores) -> float:
    """Delta-method Monte-Carlo standard error of the DV estimate."""
    j = np.asarray(getattr(joint_scores, "data", joint_scores), dtype=float).ravel()
    m = np.asarray(getattr(marginal_scores, "data", marginal_scores), dtype=float).ravel()
    w = np.exp(m - m.max())
    rel = w / w.mean()
    return math.sqrt(j.var(ddof=1) / j.size + rel.var(ddof=1) / m.size)


def shuffle_marginals(y_batch, rng: Rng):
    """Permute rows so pairing with the x batch is broken (product of marginals)."""
    y = getattr(y_batch, "data", y_batch)
    y = np.asarray(y)
    if y.shape[0] < 2:
        return y.copy()
    return y[rng.permutation(y.shape[0])]


def energy_term(activations: Sequence, tau: float = 0.1) -> Tensor:
    """Smooth firing count: mean over every unit and sample of tanh(a / tau)."""
    if not activations:
        return Tensor(0.0)
    total, count = None, 0
    for a in activations:
        a = T.as_tensor(a)
        if np.any(a.data < 0):
            raise ContractError("energy_term expects post-ReLU (non-negative) activations")
        s = T.tsum(T.tanh(a * (1.0 / tau)))
        total = s if total is None else total + s
        count += a.size
    return total * (1.0 / count)


def loss_mi(mi_estimate, energy, cfg: LossConfig) -> Tensor:
    """-alpha * I_f + gamma * E; minimising it maximises the MI bound."""
    return T.as_tensor(mi_estimate) * (-cfg.alpha) + T.as_tensor(energy) * cfg.gamma


def mse(z, z_hat) -> Tensor:
    z, z_hat = T.as_tensor(z), T.as_tensor(z_hat)
    if z.shape != z_hat.shape:
        raise ShapeError(f"target {z.shape} and estimate {z_hat.shape} differ")
    return T.mean(T.square(z_hat - z))


def loss_reconstruction(z, z_hat, energy, cfg: LossConfig) -> Tensor:
    return mse(z, z_hat) * cfg.beta + T.as_tensor(energy) * cfg.gamma


def ideal_binary_mask(clean, noise, threshold_db: float = 0.0) -> np.ndarray:
    """1 where the local SNR 20 log10(clean / noise) exceeds ``threshold_db``."""
    clean = np.asarray(getattr(clean, "data", clean), dtype=float)
    noise = np.asarray(getattr(noise, "data", noise), dtype=float)
    if clean.shape != noise.shape:
        raise ShapeError(f"clean {clean.shape} and noise {noise.shape} differ")
    if np.any(clean < 0) or np.any(noise < 0):
        raise DomainError("magnitudes must be non-negative")
    # clean > noise * 10^(thr/20) avoids log of zero; noise == 0 cells count as clean-dominated
    ratio = 10.0 ** (threshold_db / 20.0)
    mask = (clean > noise * ratio) | (noise == 0)
    return mask.astype(float)


def mask_loss(logits, ibm) -> Tensor:
    """Mean binary cross-entropy with logits: softplus(z) - y z."""
    z, y = T.as_tensor(logits), T.as_tensor(ibm)
    if z.shape != y.shape:
        raise ShapeError(f"logits {z.shape} and mask {y.shape} differ")
    return T.mean(T.softplus(z) - z * y)


def firing_probability(records, threshold: float = 0.0) -> np.ndarray:
    """Per-unit fraction of samples whose activation exceeds ``threshold``."""
    a = np.asarray(getattr(records, "data", records), dtype=float)
    a = a.reshape(a.shape[0], -1)
    return (a > threshold).mean(axis=0)


def analytic_gaussian_mi(correlations) -> float:
    """MI in nats of independent bivariate-normal pairs: -1/2 sum ln(1 - rho^2)."""
    rho = np.atleast_1d(np.asarray(correlations, dtype=float))
    if np.any(np.abs(rho) >= 1):
        raise DomainError("|rho| must be < 1")
    return float(-0.5 * np.sum(np.log1p(-rho * rho)))
