"""Training harness and post-hoc analyses.

Runs are deterministic functions of (config, seed): model initialisation,
batch order, marginal shuffles, kill masks and VAE noise each draw from their
own child stream of :class:`~mcc.rng.Rng`.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, parse_config_text
from .datagen import GaussianPairSpec, TwoStreamCorpus, make_corpus, sample_correlated_gaussians
from .errors import ConfigError, ShapeError
from .models import ImageModel, MCCCritic, PointCritic
from .objectives import (analytic_gaussian_mi, dv_bound, dv_standard_error, energy_term, firing_probability,
                         loss_mi, loss_reconstruction, mask_loss)
from .params import adam_step
from .rng import Rng

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "loss", "mi_estimate", "energy", "mean_firing_prob", "mse")
HIST_BINS = 20
EVAL_BATCH = 256


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return path


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [{k: (float(v) if v != "" else float("nan")) for k, v in row.items()} for row in csv.DictReader(fh)]


def thread_count() -> int:
    try:
        return max(0, int(os.environ.get("MCC_THREADS", "0")))
    except ValueError:
        return 0


# -- corpus ------------------------------------------------------------------

def corpus_for(cfg: ExperimentConfig) -> TwoStreamCorpus:
    if cfg.corpus:
        if not Path(cfg.corpus).is_dir():
            raise ConfigError(f"corpus directory {cfg.corpus} does not exist")
        # a present but unreadable corpus is a runtime failure, not a config one
        return TwoStreamCorpus.load(cfg.corpus)
    return make_corpus(cfg.n_samples, Rng(cfg.data_seed).spawn("corpus"), cfg.snr_grid, cfg.patch, cfg.patch)


def build_model(cfg: ExperimentConfig, seed: int, corpus: TwoStreamCorpus | None = None) -> ImageModel:
    h, w = corpus.patch_shape if corpus is not None else (cfg.patch, cfg.patch)
    return ImageModel(cfg, (1, h, w), (1, h // 2, w // 2), seed=seed)


# -- one forward/loss evaluation ---------------------------------------------------

@dataclass
class StepResult:
    loss: T.Tensor
    energy: T.Tensor
    hidden: list
    mi: float = float("nan")
    mse: float = float("nan")
    out: np.ndarray | None = None


def _hidden_firing(hidden, threshold: float, rows: slice | None = None) -> float:
    fired = total = 0
    for h in hidden:
        d = h.data if rows is None else h.data[rows]
        fired += int(np.count_nonzero(d > threshold))
        total += d.size
    return fired / total if total else 0.0


def task_step(model: ImageModel, batch: dict, cfg: ExperimentConfig, rng: Rng | None,
              kill=None) -> StepResult:
    lc = cfg.loss_config()
    if cfg.task == "mi":
        n = batch["noisy"].shape[0]
        shuf_rng = rng.spawn("shuffle") if rng is not None else Rng(0).spawn("eval-shuffle")
        vis_m = batch["visual"][shuf_rng.permutation(n)]
        res = model(np.concatenate([batch["noisy"], batch["noisy"]]),
                    np.concatenate([batch["visual"], vis_m]), kill=kill)
        scores = T.reshape(res.out, (-1,))
        mi = dv_bound(scores[:n], scores[n:])
        energy = energy_term(res.hidden, lc.energy_tau)
        return StepResult(loss_mi(mi, energy, lc), energy, res.hidden, mi=mi.item())
    noise_rng = rng.spawn("vae") if (rng is not None and model.kind == "vae") else None
    res = model(batch["noisy"], batch["visual"], kill=kill, noise_rng=noise_rng)
    energy = energy_term(res.hidden, lc.energy_tau)
    if cfg.task == "reconstruction":
        loss = loss_reconstruction(batch["clean"], res.out, energy, lc)
        mse = float(np.mean((res.out.data - batch["clean"]) ** 2))
    else:
        loss = mask_loss(res.out, batch["ibm"]) * lc.beta + energy * lc.gamma
        est = 1.0 / (1.0 + np.exp(-res.out.data)) * batch["noisy_raw"]
        mse = float(np.mean((est - batch["clean"]) ** 2))
    if res.kl is not None:
        npix = int(np.prod(res.out.shape[1:]))
        loss = loss + res.kl * (cfg.vae_beta / npix)
    return StepResult(loss, energy, res.hidden, mse=mse, out=res.out.data)


# -- training ----------------------------------------------------------------

@dataclass
class RunRecord:
    seed: int
    rows: list[dict] = field(default_factory=list)
    firing_epochs: list[np.ndarray] = field(default_factory=list)
    checkpoint: Path | None = None
    status: str = "ok"
    message: str = ""
    model: ImageModel | None = None
    gamma_ratio: float = float("nan")

    def series(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)


def gamma_balance(model: ImageModel, batch: dict, cfg: ExperimentConfig) -> float:
    """gamma * |grad E| / |grad task| at the current parameters."""
    if cfg.gamma == 0:
        return 0.0
    zero = cfg.replace(gamma=0.0)
    res = task_step(model, batch, zero, Rng(0))
    model.store.zero_grad()
    T.backward(res.loss, model.store)
    g_task = model.store.grad_norm()
    model.store.zero_grad()
    T.backward(res.energy, model.store)
    g_energy = model.store.grad_norm()
    model.store.zero_grad()
    return cfg.gamma * g_energy / max(g_task, 1e-300)


def probe_firing(model: ImageModel, corpus: TwoStreamCorpus, cfg: ExperimentConfig, probe_pos) -> np.ndarray:
    """Per-unit firing probability over a fixed probe subset of the training split."""
    with T.no_grad():
        batch = corpus.batch("train", probe_pos)
        kill = _eval_kill(model)
        res = model(batch["noisy"], batch["visual"], kill=kill)
    recs = [h.data.reshape(h.shape[0], -1) for h in res.hidden]
    return firing_probability(np.concatenate(recs, axis=1), cfg.fire_threshold)


def _eval_kill(model: ImageModel):
    if model.kind != "mcc-sparse":
        return None
    return model.sample_kill(model.cfg.kill_p, Rng(0).spawn("eval-kill"))


def train(cfg: ExperimentConfig, seed: int, corpus: TwoStreamCorpus | None = None,
          out_dir=None) -> RunRecord:
    """Adam loop over the training split; writes metrics and a checkpoint when ``out_dir`` is set."""
    corpus = corpus if corpus is not None else corpus_for(cfg)
    model = build_model(cfg, seed, corpus)
    rng = Rng(seed)
    order_rng = rng.spawn("batches")
    n_train = len(corpus.train_idx)
    bs = min(cfg.batch, n_train)
    per_epoch = max(1, n_train // bs)
    probe_pos = np.arange(min(cfg.probe_size, n_train))
    record = RunRecord(seed, model=model)

    first = corpus.batch("train", np.arange(bs))
    record.gamma_ratio = gamma_balance(model, first, cfg)
    if record.gamma_ratio > 0.1:
        msg = (f"gamma-weighted energy gradient is {record.gamma_ratio:.3g}x the task gradient "
               f"at initialisation (target <= 0.1)")
        if cfg.enforce_gamma_balance:
            raise ConfigError(msg)
        log.warning(msg)

    record.firing_epochs.append(probe_firing(model, corpus, cfg, probe_pos))
    perm = order_rng.spawn("epoch", 0).permutation(n_train)
    for step in range(cfg.updates):
        epoch, k = divmod(step, per_epoch)
        if k == 0 and step > 0:
            record.firing_epochs.append(probe_firing(model, corpus, cfg, probe_pos))
            perm = order_rng.spawn("epoch", epoch).permutation(n_train)
        batch = corpus.batch("train", perm[k * bs:(k + 1) * bs])
        srng = rng.spawn("step", step)
        kill = model.sample_kill(cfg.kill_p, srng.spawn("kill")) if model.kind == "mcc-sparse" else None
        res = task_step(model, batch, cfg, srng, kill)
        loss = res.loss.item()
        record.rows.append({"step": step, "loss": loss, "mi_estimate": res.mi, "energy": res.energy.item(),
                            "mean_firing_prob": _hidden_firing(res.hidden, cfg.fire_threshold),
                            "mse": res.mse})
        if not math.isfinite(loss):
            record.status = "diverged"
            record.message = f"non-finite loss at update {step}"
            log.error(record.message)
            break
        model.store.zero_grad()
        T.backward(res.loss, model.store)
        adam_step(model.store, cfg.lr_at(step))
    if record.status == "ok":
        record.firing_epochs.append(probe_firing(model, corpus, cfg, probe_pos))
    if out_dir is not None:
        write_run(record, cfg, out_dir)
    return record


def write_run(record: RunRecord, cfg: ExperimentConfig, out_dir) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "metrics.csv", METRIC_FIELDS, record.rows)
    for e, hist in enumerate(firing_histogram(record.firing_epochs)):
        edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
        write_csv(d / f"firing_epoch_{e}.csv", ("bin_lo", "bin_hi", "units"),
                  [(edges[i], edges[i + 1], int(hist[i])) for i in range(HIST_BINS)])
    if record.model is not None:
        record.checkpoint = save_checkpoint(record.model, cfg, record.seed, d / "checkpoint")
    if record.status != "ok":
        (d / "DIVERGED.txt").write_text(record.message + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None, corpus: TwoStreamCorpus | None = None) -> list[RunRecord]:
    """Train once per seed; per-seed outputs in ``seed_<s>/`` and the seed-mean in ``metrics.csv``."""
    out = Path(out_dir or cfg.out)
    corpus = corpus if corpus is not None else corpus_for(cfg)

    def one(seed):
        return train(cfg, seed, corpus, out / f"seed_{seed}")

    workers = thread_count()
    if workers > 1 and len(cfg.seeds) > 1:
        # each run gets its own corpus copy so access counters stay per-run
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(one, cfg.seeds))
    else:
        records = [one(s) for s in cfg.seeds]
    write_csv(out / "metrics.csv", METRIC_FIELDS, seed_mean_rows([r.rows for r in records]))
    return records


def seed_mean_rows(per_seed: list[list[dict]]) -> list[dict]:
    n = min(len(rows) for rows in per_seed)
    out = []
    for i in range(n):
        row = {"step": per_seed[0][i]["step"]}
        for k in METRIC_FIELDS[1:]:
            vals = [float(rows[i][k]) for rows in per_seed]
            row[k] = float("nan") if any(math.isnan(v) for v in vals) else sum(vals) / len(vals)
        out.append(row)
    return out


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: ImageModel, cfg: ExperimentConfig, seed: int, directory) -> Path:
    d = Path(directory)
    model.store.save(d)
    lines = cfg.to_lines() + [f"seed = {seed}", f"patch_h = {model_patch(model)[0]}",
                              f"patch_w = {model_patch(model)[1]}"]
    (d / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


def model_patch(model: ImageModel) -> tuple[int, int]:
    return model.patch


def load_checkpoint(directory) -> ImageModel:
    d = Path(directory)
    try:
        values = parse_config_text((d / "config.txt").read_text(encoding="utf-8"), str(d / "config.txt"))
    except OSError as e:
        raise ConfigError(f"{d}: not a checkpoint ({e.strerror})") from e
    seed = int(values.pop("seed", 0))
    h, w = int(values.pop("patch_h", values.get("patch", 16))), int(values.pop("patch_w", values.get("patch", 16)))
    cfg = ExperimentConfig.from_mapping(values)
    model = ImageModel(cfg, (1, h, w), (1, h // 2, w // 2), seed=seed)
    model.store.load(d)
    return model


def _model_of(checkpoint) -> ImageModel:
    if isinstance(checkpoint, (str, os.PathLike)):
        return load_checkpoint(checkpoint)
    return checkpoint


# -- evaluation --------------------------------------------------------------

def evaluate(checkpoint, corpus: TwoStreamCorpus, split: str = "test", kill=None,
             cfg: ExperimentConfig | None = None) -> dict:
    """Test metrics without touching parameters.

    Returns mse (reconstruction: output vs clean; mask: sigmoid(logits) applied to
    the raw noisy patch), mask accuracy and class prior, DV estimate (mi task),
    energy and mean firing probability over hidden units.
    """
    model = _model_of(checkpoint)
    cfg = cfg or model.cfg
    if corpus.patch_shape != model_patch(model):
        raise ConfigError(f"checkpoint expects {model_patch(model)} patches, corpus has {corpus.patch_shape}")
    if kill is None:
        kill = _eval_kill(model)
    pos = np.arange(len(corpus.split(split)))
    sq_err = n_cells = 0.0
    correct = ones = 0.0
    fired = units = 0
    energy_sum = 0.0
    joint, marg = [], []
    with T.no_grad():
        for start in range(0, len(pos), EVAL_BATCH):
            batch = corpus.batch(split, pos[start:start + EVAL_BATCH])
            res = task_step(model, batch, cfg, None, kill)
            nb = batch["noisy"].shape[0]
            energy_sum += res.energy.item() * nb
            for h in res.hidden:
                d = h.data[:nb]
                fired += int(np.count_nonzero(d > cfg.fire_threshold))
                units += d.size
            if cfg.task == "mi":
                # recompute raw scores for a pooled estimate
                res2 = model(np.concatenate([batch["noisy"], batch["noisy"]]),
                             np.concatenate([batch["visual"],
                                             batch["visual"][Rng(0).spawn("eval-shuffle").permutation(nb)]]),
                             kill=kill)
                s = res2.out.data.reshape(-1)
                joint.append(s[:nb])
                marg.append(s[nb:])
                continue
            sq_err += res.mse * res.out.size
            n_cells += res.out.size
            if cfg.task == "mask":
                pred = res.out > 0
                correct += float(np.sum(pred == (batch["ibm"] > 0.5)))
                ones += float(np.sum(batch["ibm"]))
    n = len(pos)
    out = {"n": n, "energy": energy_sum / max(n, 1), "mean_firing_prob": fired / max(units, 1)}
    if cfg.task == "mi":
        j, m = np.concatenate(joint), np.concatenate(marg)
        out["mi_estimate"] = dv_bound(j, m).item()
        out["mi_se"] = dv_standard_error(j, m)
    else:
        out["mse"] = sq_err / n_cells
    if cfg.task == "mask":
        out["mask_accuracy"] = correct / n_cells
        p1 = ones / n_cells
        out["mask_prior"] = max(p1, 1.0 - p1)
    return out


def collect_activations(checkpoint, corpus: TwoStreamCorpus, split: str = "test", kill=None) -> dict:
    """Conv activations (n×f×h×w) of every conv layer on a split."""
    model = _model_of(checkpoint)
    pos = np.arange(len(corpus.split(split)))
    acc: dict[str, list] = {}
    with T.no_grad():
        for start in range(0, len(pos), EVAL_BATCH):
            batch = corpus.batch(split, pos[start:start + EVAL_BATCH])
            res = model(batch["noisy"], batch["visual"], kill=kill if kill is not None else _eval_kill(model))
            for name, a in res.conv.items():
                acc.setdefault(name, []).append(a.data)
    return {k: np.concatenate(v) for k, v in acc.items()}


# -- analyses ----------------------------------------------------------------

def correlation_matrix(activations) -> np.ndarray:
    """Pearson correlation between units (columns); constant units get 0 off-diagonal, 1 on it."""
    a = np.asarray(activations, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ShapeError("correlation_matrix needs a samples×units array with >= 2 samples")
    c = a - a.mean(axis=0)
    sd = np.sqrt(np.sum(c * c, axis=0))
    live = sd > 1e-12 * max(1.0, float(np.abs(a).max()))
    z = np.zeros_like(c)
    z[:, live] = c[:, live] / sd[live]
    r = np.clip(z.T @ z, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def mean_abs_offdiag(r) -> float:
    r = np.asarray(r)
    n = r.shape[0]
    if n < 2:
        return 0.0
    return float((np.abs(r).sum() - np.abs(np.diag(r)).sum()) / (n * (n - 1)))


def pooled_units(conv_act) -> np.ndarray:
    """n×f×h×w -> n×f by spatial mean (one unit per filter)."""
    a = np.asarray(conv_act)
    return a.reshape(a.shape[0], a.shape[1], -1).mean(axis=2)


def firing_histogram(records) -> list[np.ndarray]:
    """Per-epoch counts of units in 20 equal bins of firing probability on [0, 1]."""
    out = []
    for probs in records:
        p = np.asarray(probs, dtype=float).ravel()
        idx = np.minimum((p * HIST_BINS).astype(int), HIST_BINS - 1)
        out.append(np.bincount(idx, minlength=HIST_BINS))
    return out


def filter_relevance_map(conv_activations) -> np.ndarray:
    """Mean |activation| per (frame, filter), scaled so the largest entry is 1.

    Accepts ``frames×filters`` or ``samples×frames×filters``.
    """
    a = np.abs(np.asarray(conv_activations, dtype=float))
    if a.ndim == 3:
        a = a.mean(axis=0)
    if a.ndim != 2:
        raise ShapeError("relevance map needs frames×filters (optionally with a leading samples axis)")
    mx = a.max()
    return a / mx if mx > 0 else a


def relevance_input(conv_act) -> np.ndarray:
    """n×f×freq×time conv output -> n×time×f by averaging over frequency."""
    a = np.asarray(conv_act)
    return a.mean(axis=2).transpose(0, 2, 1)


def plateau_update(series, window: int = 25, rel: float = 0.05, floor: float = 1e-3) -> int:
    """Settling time: first update after which the smoothed series stays within
    ``max(floor, rel * |final|)`` of its final smoothed level.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        return 0
    w = max(1, min(window, s.size))
    sm = np.convolve(s, np.ones(w) / w, mode="valid")
    final = sm[-1]
    tol = max(floor, rel * abs(final))
    outside = np.nonzero(np.abs(sm - final) > tol)[0]
    return 0 if outside.size == 0 else int(outside[-1] + 1)


def resilience_sweep(checkpoint, corpus: TwoStreamCorpus, p_grid, passes: int, rng: Rng,
                     split: str = "test") -> list[dict]:
    """Test error under random conv-unit deletion.

    For each P and pass a fresh keep mask over every conv unit is drawn (the same
    units die for every test sample in that pass). Error is test MSE
    (reconstruction/mask) or negative DV estimate (mi).
    """
    model = _model_of(checkpoint)
    key = "mi_estimate" if model.cfg.task == "mi" else "mse"
    sign = -1.0 if key == "mi_estimate" else 1.0
    base = sign * evaluate(model, corpus, split)[key]
    rows = []
    for i, p in enumerate(p_grid):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"kill probability {p} outside [0, 1]")
        if p == 0.0:
            errs = [base] * passes
        else:
            prng = rng.spawn("P", i)
            errs = [sign * evaluate(model, corpus, split, kill=model.sample_kill(p, prng.spawn(k)))[key]
                    for k in range(passes)]
        mu = base if p == 0.0 else float(np.mean(errs))
        rows.append({"p": float(p), "error_mean": mu, "error_std": 0.0 if p == 0.0 else float(np.std(errs)),
                     "relative_increase": (mu - base) / abs(base) if base else float("nan")})
    return rows


def p_grid(step: float = 0.025, p_max: float = 0.5) -> list[float]:
    n = int(round(p_max / step))
    return [round(i * step, 10) for i in range(n + 1)]


def analyze(checkpoint, corpus: TwoStreamCorpus, out_dir, split: str = "test") -> dict:
    """Correlation, relevance and firing analyses of a trained checkpoint."""
    model = _model_of(checkpoint)
    d = Path(out_dir)
    acts = collect_activations(model, corpus, split)
    summary = {}
    for li, name in enumerate([n for n in model.conv_names if n.endswith(".a")], 1):
        r = correlation_matrix(pooled_units(acts[name]))
        write_csv(d / f"corr_layer_{li}.csv", [f"u{j}" for j in range(r.shape[0])], r.tolist())
        rel = filter_relevance_map(relevance_input(acts[name]))
        write_csv(d / f"relevance_{li}.csv", ["frame"] + [f"f{j}" for j in range(rel.shape[1])],
                  [[t] + list(row) for t, row in enumerate(rel)])
        summary[f"corr_layer_{li}"] = mean_abs_offdiag(r)
    metrics = evaluate(model, corpus, split)
    summary.update({k: v for k, v in metrics.items() if isinstance(v, float)})
    write_csv(d / "analysis.csv", ("metric", "value"), sorted(summary.items()))
    return summary


# -- gaussian MI experiment ---------------------------------------------------------

@dataclass
class MIRun:
    rows: list[dict]
    estimate: float
    se: float
    truth: float
    critic: object = None


def gaussian_mi_experiment(cfg: ExperimentConfig, seed: int, out_dir=None, log_every: int = 1) -> MIRun:
    """Train a statistics network on correlated Gaussian pairs with the L1 objective.

    The final estimate is the DV bound of the trained critic on
    ``mi_eval_samples`` fresh pairs, with its delta-method standard error.
    """
    lc = cfg.loss_config()
    if cfg.model in ("mcc", "mcc-sparse"):
        critic = MCCCritic(cfg.mi_dim, cfg.mi_dim, cfg.mi_hidden, cfg.mi_layers, seed, cfg.context_act,
                           cfg.shared_memory)
    else:
        critic = PointCritic(cfg.mi_dim, cfg.mi_dim, cfg.mi_hidden, cfg.mi_layers, seed)
    rng = Rng(seed).spawn("gaussian-mi")
    spec = GaussianPairSpec(cfg.mi_dim, cfg.mi_rho, cfg.batch)
    n = cfg.batch
    rows = []
    for step in range(cfg.updates):
        srng = rng.spawn("step", step)
        x, y = sample_correlated_gaussians(spec, srng.spawn("data"))
        ym = y[srng.spawn("shuffle").permutation(n)]
        res = critic(np.concatenate([x, x]), np.concatenate([y, ym]))
        mi = dv_bound(res.out[:n], res.out[n:])
        energy = energy_term(res.hidden, lc.energy_tau)
        loss = loss_mi(mi, energy, lc)
        if not math.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite loss at update {step}")
        critic.store.zero_grad()
        T.backward(loss, critic.store)
        adam_step(critic.store, cfg.lr_at(step))
        if step % log_every == 0 or step == cfg.updates - 1:
            rows.append({"step": step, "loss": loss.item(), "mi_estimate": mi.item(), "energy": energy.item(),
                         "mean_firing_prob": _hidden_firing(res.hidden, lc.fire_threshold, slice(0, n)),
                         "mse": float("nan")})
    est, se = critic_estimate(critic, cfg, Rng(seed).spawn("gaussian-mi-eval"))
    truth = analytic_gaussian_mi([cfg.mi_rho] * cfg.mi_dim)
    if out_dir is not None:
        d = Path(out_dir)
        write_csv(d / "metrics.csv", METRIC_FIELDS, rows)
        write_csv(d / "mi_summary.csv", ("estimate", "standard_error", "analytic"), [(est, se, truth)])
    return MIRun(rows, est, se, truth, critic)


def critic_estimate(critic, cfg: ExperimentConfig, rng: Rng) -> tuple[float, float]:
    x, y = sample_correlated_gaussians(GaussianPairSpec(cfg.mi_dim, cfg.mi_rho, cfg.mi_eval_samples),
                                       rng.spawn("data"))
    ym = y[rng.spawn("shuffle").permutation(len(y))]
    with T.no_grad():
        j = np.concatenate([critic(x[i:i + 4096], y[i:i + 4096]).out.data for i in range(0, len(x), 4096)])
        m = np.concatenate([critic(x[i:i + 4096], ym[i:i + 4096]).out.data for i in range(0, len(x), 4096)])
    return dv_bound(j, m).item(), dv_standard_error(j, m)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
