"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .objectives import LossConfig

TASKS = ("reconstruction", "mi", "mask")


def _ints(v) -> tuple[int, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x != "")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class ExperimentConfig:
    task: str = "reconstruction"
    model: str = "mcc"
    # data
    corpus: str = ""
    n_samples: int = 1000
    data_seed: int = 0
    patch: int = 16
    snr_grid: tuple = (-12, -9, -6, -3, 0, 3, 6, 9, 12)
    # architecture
    filters: int = 16
    kernel: int = 3
    stride: int = 2
    conv_layers: int = 2
    channel_embed: int = 32
    global_embed: int = 64
    decoder_channels: int = 64
    decoder_base: int = 2
    decoder_filters: tuple = (32, 16, 1)
    context_act: str = "sigmoid"
    neighborhood: bool = False
    shared_memory: bool = True
    kill_p: float = 0.35
    vae_beta: float = 4.0
    # objective
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0
    energy_tau: float = 0.1
    fire_threshold: float = 0.0
    enforce_gamma_balance: bool = False
    # optimisation
    lr: float = 1e-3
    lr_schedule: str = "constant"  # or "cosine": lr decays to lr * lr_floor at the last update
    lr_floor: float = 0.05
    batch: int = 64
    updates: int = 500
    seeds: tuple = (0,)
    probe_size: int = 128
    # analyses
    checkpoint: str = ""
    split: str = "test"
    resilience_step: float = 0.025
    resilience_max: float = 0.5
    resilience_passes: int = 50
    # gaussian MI experiment
    mi_dim: int = 20
    mi_rho: float = 0.5
    mi_hidden: int = 128
    mi_layers: int = 1
    mi_eval_samples: int = 20000
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.task == "mi" and self.batch < 2:
            raise ConfigError("the mi task needs batch >= 2 for marginal shuffling")
        if self.batch < 1 or self.updates < 0 or self.n_samples < 10:
            raise ConfigError("batch >= 1, updates >= 0 and n_samples >= 10 required")
        if not 0.0 <= self.kill_p < 1.0:
            raise ConfigError("kill_p must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ConfigError("lr_floor must lie in [0, 1]")
        if self.patch % 2:
            raise ConfigError("patch must be even (the side stream is half resolution)")
        self.loss_config()

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(self.alpha, self.beta, self.gamma, self.energy_tau, self.fire_threshold)
        except ConfigError:
            raise
        except Exception as e:  # pragma: no cover
            raise ConfigError(str(e)) from e

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.updates <= 1:
            return self.lr
        f = self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * step / self.updates))
        return self.lr * f

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
        base = base or cls()
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in values.items():
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                kw[k] = _coerce(getattr(base, k), v)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"config key {k!r}: {e}") from None
        return dataclasses.replace(base, **kw)

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return out


def _coerce(default, v):
    if isinstance(default, bool):
        return _bool(v)
    if isinstance(default, tuple):
        return _ints(v)
    if isinstance(default, int):
        return int(v)
    if isinstance(default, float):
        return float(v)
    return str(v).strip()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` per line; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[k] = v
    return out


def load_config_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{p}: {e.strerror}") from e
    return parse_config_text(text, str(p))


PRESETS: dict[str, dict] = {
    "desk": {},
    # the full-size geometry: 32 filters of 5x5, 128/256 embeddings, 64x64 patches
    "full": dict(filters=32, kernel=5, channel_embed=128, global_embed=256, batch=256, patch=64,
                  lr=1e-4, decoder_base=8, decoder_filters=(64, 32, 16, 1)),
    # learning rate one order of magnitude above the default
    "fast": dict(lr=1e-2),
    "mcc-energy": dict(model="mcc", gamma=0.01),
    "baseline": dict(model="baseline", gamma=0.0),
    # correlated-Gaussian MI estimation at the desk scale
    "gaussian-mi": dict(task="mi", batch=256, updates=8000, lr=1e-3, lr_schedule="cosine"),
    "smoke": dict(n_samples=60, updates=20, batch=16, probe_size=16, resilience_passes=2,
                  mi_eval_samples=512),
}


def resolve(preset: str | None = None, file_values: dict | None = None,
            overrides: dict | None = None) -> ExperimentConfig:
    """Defaults < preset < config file < CLI overrides."""
    cfg = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = ExperimentConfig.from_mapping(PRESETS[preset], cfg)
    if file_values:
        cfg = ExperimentConfig.from_mapping(file_values, cfg)
    if overrides:
        cfg = ExperimentConfig.from_mapping(overrides, cfg)
    return cfg
