"""Single-cell modulatory transfer functions: firing probability Y from (r, c).

Variants::

    rf-dominant      Y = s(r)                         context ignored
    kay-modulatory   Y = s(r (1 + exp(2 r c)) / 2)
    xnor             Y = r c + (1 - r)(1 - c)
    weak-amplify     Y = min(0.49, s(r (1 + c)))
    proposed-hgf     Y = hgf(c (1 + r) / 2)
    relu-threshold   Y = clip(c (1 + r) / 2, 0, 1)

with ``s(x) = 1 / (1 + exp(-k (x - tau)))`` and the half-Gaussian
``hgf(t) = exp(-(t - 1)^2 / (2 sigma^2))`` for ``t <= 1``, 1 above.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError

VARIANTS = ("rf-dominant", "kay-modulatory", "xnor", "weak-amplify", "proposed-hgf", "relu-threshold")
PROPOSED = ("proposed-hgf", "relu-threshold")


@dataclass(frozen=True)
class TransferFunctionSpec:
    variant: str = "proposed-hgf"
    sigma: float = 0.35
    gain: float = 10.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown AMTF variant {self.variant!r}")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not all(math.isfinite(v) for v in (self.sigma, self.gain, self.threshold)):
            raise DomainError("AMTF parameters must be finite")


def drive(r, c):
    """Combined drive fed to the half-Gaussian (proposed variants)."""
    return c * (1.0 + r) / 2.0


def half_gaussian(t, sigma: float):
    t = np.asarray(t, dtype=float)
    return np.where(t <= 1.0, np.exp(-((t - 1.0) ** 2) / (2.0 * sigma * sigma)), 1.0)


def _logistic(x, spec: TransferFunctionSpec):
    return 1.0 / (1.0 + np.exp(-spec.gain * (x - spec.threshold)))


def _eval(r, c, spec: TransferFunctionSpec):
    v = spec.variant
    if v == "rf-dominant":
        return _logistic(r, spec) + 0.0 * c
    if v == "kay-modulatory":
        return _logistic(r * (1.0 + np.exp(2.0 * r * c)) / 2.0, spec)
    if v == "xnor":
        return r * c + (1.0 - r) * (1.0 - c)
    if v == "weak-amplify":
        return np.minimum(0.49, _logistic(r * (1.0 + c), spec))
    if v == "proposed-hgf":
        return half_gaussian(drive(r, c), spec.sigma)
    return np.clip(drive(r, c), 0.0, 1.0)


def amtf_eval(r: float, c: float, spec: TransferFunctionSpec | None = None) -> float:
    spec = spec or TransferFunctionSpec()
    if not (0.0 <= r <= 1.0 and 0.0 <= c <= 1.0):
        raise DomainError(f"(r, c) = ({r}, {c}) outside [0, 1]^2")
    return float(_eval(float(r), float(c), spec))


@dataclass
class SurfaceGrid:
    r: np.ndarray
    c: np.ndarray
    y: np.ndarray  # y[i, j] = Y(r[i], c[j])
    spec: TransferFunctionSpec = field(default_factory=TransferFunctionSpec)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "c", "Y"])
            for i, rv in enumerate(self.r):
                for j, cv in enumerate(self.c):
                    w.writerow([f"{rv:.6g}", f"{cv:.6g}", f"{self.y[i, j]:.6g}"])


def surface_grid(spec: TransferFunctionSpec, n: int = 21) -> SurfaceGrid:
    if n < 2:
        raise DomainError("grid size must be >= 2")
    axis = np.linspace(0.0, 1.0, n)
    rr, cc = np.meshgrid(axis, axis, indexing="ij")
    return SurfaceGrid(axis, axis.copy(), np.asarray(_eval(rr, cc, spec), dtype=float), spec)


@dataclass
class OrderingReport:
    variant: str
    checks: dict[str, bool]
    values: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def violations(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]


def ordering_check(spec: TransferFunctionSpec, n: int = 101, tol: float = 1e-12) -> OrderingReport:
    """Check the qualitative orderings each catalogue entry is meant to show.

    Proposed variants: context overrules the receptive field (Y(0,1) > Y(1,0)),
    the maximum sits at (1,1) and Y never decreases with c. The conventional
    variants get their own signature property.
    """
    g = surface_grid(spec, n)
    y = g.y
    y01, y10, y11, y00 = y[0, -1], y[-1, 0], y[-1, -1], y[0, 0]
    values = {"Y(0,0)": y00, "Y(0,1)": y01, "Y(1,0)": y10, "Y(1,1)": y11, "max": float(y.max())}
    checks: dict[str, bool] = {"range [0,1]": bool(np.all((y >= 0) & (y <= 1)))}
    v = spec.variant
    if v in PROPOSED:
        checks["Y(0,1) > Y(1,0)"] = bool(y01 > y10)
        checks["max at (1,1)"] = bool(y11 >= y.max() - tol)
        checks["dY/dc >= 0"] = bool(np.all(np.diff(y, axis=1) >= -tol))
    elif v == "rf-dominant":
        checks["Y(1,0) == Y(1,1)"] = bool(abs(y10 - y11) <= tol)
    elif v == "kay-modulatory":
        checks["Y(1,0) > Y(0,1)"] = bool(y10 > y01)
    elif v == "weak-amplify":
        checks["max < 0.5"] = bool(y.max() < 0.5)
    elif v == "xnor":
        checks["corners"] = bool(y00 == 1.0 and y11 == 1.0 and y10 == 0.0 and y01 == 0.0)
    else:  # pragma: no cover - VARIANTS is closed
        raise ContractError(f"no ordering defined for {v}")
    return OrderingReport(v, checks, values)
