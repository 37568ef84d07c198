"""Command-line entry point: ``mcc <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .cell import VARIANTS, TransferFunctionSpec, ordering_check, surface_grid
from .config import PRESETS, ExperimentConfig, load_config_file, resolve
from .errors import ConfigError, MCCError
from .rng import Rng
from .tensor_io import TensorFileError

log = logging.getLogger("mcc")

SUBCOMMANDS = {
    "gen-data": "generate the synthetic two-stream corpus",
    "train": "train one model per seed on the corpus",
    "eval": "evaluate a checkpoint on a corpus split",
    "mi": "estimate MI between correlated Gaussian vectors",
    "cell-surface": "export a single-cell transfer-function surface",
    "analyze": "correlation, relevance and firing analyses of a checkpoint",
    "resilience": "neuron-killing sweep on a checkpoint",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcc", description="Two-point context-modulated networks on synthetic data.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    for name, help_text in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=help_text, description=help_text)
        s.add_argument("--config", metavar="PATH", help="flat 'key = value' config file")
        s.add_argument("--seed", type=int, metavar="U64", help="overrides the seeds list with one seed")
        s.add_argument("--out", metavar="DIR", help="output directory (created if absent)")
        if name == "cell-surface":
            s.add_argument("--preset", metavar="NAME", default="proposed-hgf",
                           help=f"transfer-function variant: {', '.join(VARIANTS)}")
            s.add_argument("--grid", type=int, default=21, help="grid points per axis")
        else:
            s.add_argument("--preset", metavar="NAME", help=f"config preset: {', '.join(sorted(PRESETS))}")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable; wins over file and preset")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        out["seeds"] = str(args.seed)
    if args.out:
        out["out"] = args.out
    return out


def resolve_args(args) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else None
    preset = None if args.command == "cell-surface" else args.preset
    return resolve(preset, file_values, _overrides(args))


def write_manifest(out: Path, args, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# mcc {args.command}", f"timestamp = {_dt.datetime.now(_dt.timezone.utc).isoformat()}",
             f"subcommand = {args.command}", f"preset = {args.preset or ''}"] + cfg.to_lines()
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(cfg, args, out):
    corpus = ex.corpus_for(cfg.replace(corpus=""))
    corpus.save(out)
    print(f"wrote {len(corpus)} samples to {out}")


def cmd_train(cfg, args, out):
    records = ex.run_experiment(cfg, out)
    bad = [r for r in records if r.status != "ok"]
    for r in records:
        last = r.rows[-1] if r.rows else {}
        print(f"seed {r.seed}: {r.status} after {len(r.rows)} updates, loss {last.get('loss', float('nan')):.6g}")
    if bad:
        raise FloatingPointError("; ".join(f"seed {r.seed}: {r.message}" for r in bad))


def _checkpoint(cfg) -> ex.ImageModel:
    if not cfg.checkpoint:
        raise ConfigError("missing config key 'checkpoint' (pass --set checkpoint=DIR)")
    return ex.load_checkpoint(cfg.checkpoint)


def _eval_corpus(cfg, model):
    # the checkpoint's own data settings unless a corpus directory is given
    return ex.corpus_for(cfg if cfg.corpus else model.cfg)


def cmd_eval(cfg, args, out):
    model = _checkpoint(cfg)
    metrics = ex.evaluate(model, _eval_corpus(cfg, model), cfg.split)
    ex.write_csv(out / "eval.csv", ("metric", "value"), sorted(metrics.items()))
    for k, v in sorted(metrics.items()):
        print(f"{k} = {v:.6g}")


def cmd_mi(cfg, args, out):
    runs = []
    for seed in cfg.seeds:
        run = ex.gaussian_mi_experiment(cfg.replace(task="mi"), seed, out / f"seed_{seed}")
        runs.append(run)
        print(f"seed {seed}: DV estimate {run.estimate:.4f} ± {run.se:.4f} nats (analytic {run.truth:.4f})")
    ex.write_csv(out / "metrics.csv", ex.METRIC_FIELDS, ex.seed_mean_rows([r.rows for r in runs]))
    ex.write_csv(out / "mi_summary.csv", ("seed", "estimate", "standard_error", "analytic"),
                 [(s, r.estimate, r.se, r.truth) for s, r in zip(cfg.seeds, runs)])


def cmd_cell_surface(cfg, args, out):
    if args.preset not in VARIANTS:
        raise ConfigError(f"unknown transfer-function variant {args.preset!r}; choose from {', '.join(VARIANTS)}")
    spec = TransferFunctionSpec(args.preset)
    surface_grid(spec, args.grid).to_csv(out / "surface.csv")
    report = ordering_check(spec)
    ex.write_csv(out / "ordering.csv", ("check", "passed"),
                 [(k, "true" if ok else "false") for k, ok in report.checks.items()])
    print(f"{spec.variant}: ordering {'passed' if report.passed else 'FAILED: ' + ', '.join(report.violations)}")


def cmd_analyze(cfg, args, out):
    model = _checkpoint(cfg)
    summary = ex.analyze(model, _eval_corpus(cfg, model), out, cfg.split)
    for k, v in sorted(summary.items()):
        print(f"{k} = {v:.6g}")


def cmd_resilience(cfg, args, out):
    model = _checkpoint(cfg)
    corpus = _eval_corpus(cfg, model)
    grid = ex.p_grid(cfg.resilience_step, cfg.resilience_max)
    rows = ex.resilience_sweep(model, corpus, grid, cfg.resilience_passes, Rng(cfg.seeds[0]).spawn("resilience"),
                               cfg.split)
    ex.write_csv(out / "resilience.csv", ("p", "error_mean", "error_std", "relative_increase"), rows)
    print(f"wrote {len(rows)} points to {out / 'resilience.csv'}")


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "mi": cmd_mi,
            "cell-surface": cmd_cell_surface, "analyze": cmd_analyze, "resilience": cmd_resilience}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_args(args)
        out = Path(cfg.out)
        write_manifest(out, args, cfg)
        with np.errstate(over="ignore", invalid="ignore"):
            HANDLERS[args.command](cfg, args, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (MCCError, TensorFileError, OSError, ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # anything else is still a runtime failure, not a usage one
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
