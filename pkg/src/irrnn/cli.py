"""Command-line interface: ``irrnn {simulate,fit,evaluate,benchmark}``.

Exit codes: 0 success, 1 usage, 2 data/format problems, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .bench import METHODS, Cell, run_benchmark
from .errors import (FormatError, InvalidArgumentError, RankDeficiencyError,
                     TrainingDivergedError, UndefinedMetricError)
from .estimator import FitConfig, fit, load_fit, save_fit
from .grid import dataset_meta, load_dataset, save_dataset
from .nn import TrainSpec
from .simgen import NOISE_KINDS, SimConfig, component_variances, generate
from .validation import parse_dims

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("irrnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _dims(text):
    try:
        return parse_dims(text)
    except InvalidArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_fit_flags(p):
    g = p.add_argument_group("network and training")
    g.add_argument("--layers", type=int, default=4, help="hidden layers (default 4)")
    g.add_argument("--width", type=int, default=64, help="nodes per hidden layer (default 64)")
    g.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    g.add_argument("--epochs", type=int, default=TrainSpec.epochs)
    g.add_argument("--lr", type=float, default=TrainSpec.learning_rate)
    g.add_argument("--lr-decay", type=float, default=TrainSpec.lr_decay)
    g.add_argument("--batch", type=int, default=TrainSpec.batch_size)
    g.add_argument("--clip-norm", type=float, default=TrainSpec.clip_norm,
                   help="gradient norm cap per step (inf disables)")
    g.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="L1 weight; default: median voxel-wise Lasso CV choice")
    g.add_argument("--eta", type=_float_list, default=None,
                   help="comma-separated thresholds per covariate; default: MUA count rule")
    g.add_argument("--alpha-level", type=float, default=0.05)
    g.add_argument("--folds", type=int, default=5)


def build_parser():
    parser = _Parser(prog="irrnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    p.add_argument("--dims", type=_dims, default=(16, 16, 8))
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--j", type=int, default=3)
    p.add_argument("--noise", choices=NOISE_KINDS, default="gaussian")
    p.add_argument("--ratio", type=_float_list, default=[0.2, 0.5, 1.0],
                   help="variance ratio main,deviation,error")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of flag defaults")

    p = sub.add_parser("fit", help="fit a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file of flag defaults")
    _add_fit_flags(p)

    p = sub.add_parser("evaluate", help="score a fit against truth or held-out data")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", help="dataset directory carrying ground truth")
    p.add_argument("--test", help="held-out dataset directory for reconstruction error")
    p.add_argument("--with-alpha", action="store_true",
                   help="add the fitted deviations (only for the training subjects)")
    p.add_argument("--slices", help="directory for PGM slice images of beta")
    p.add_argument("--out", help="directory for report.txt and metrics.csv")
    p.add_argument("--config", help="JSON file of flag defaults")

    p = sub.add_parser("benchmark", help="replicated simulation study")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=_int_list, default=[20])
    p.add_argument("--dims", type=_dims, action="append",
                   help="grid dims, repeat for several (default 16,16,8)")
    p.add_argument("--noise", type=lambda s: s.split(","), default=["gaussian"])
    p.add_argument("--methods", type=lambda s: s.split(","), default=list(METHODS))
    p.add_argument("--smooth-sigma", type=float, default=1.0,
                   help="pre-smoothing kernel sd in voxels for smua")
    p.add_argument("--holdout", type=int, default=0,
                   help="extra simulated subjects used for reconstruction error")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of flag defaults")
    _add_fit_flags(p)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.exit(EXIT_USAGE, f"irrnn: cannot read config {args.config}: {exc}\n")
        if not isinstance(defaults, dict):
            parser.exit(EXIT_USAGE, "irrnn: config file must hold a JSON object\n")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            parser.exit(EXIT_USAGE, f"irrnn: unknown config keys {sorted(unknown)}\n")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------

def _fit_config(args) -> FitConfig:
    return FitConfig(hidden_layers=args.layers, hidden_width=args.width,
                     activation=args.activation,
                     train=TrainSpec(args.epochs, args.batch, args.lr, args.lr_decay, args.seed,
                                     args.clip_norm),
                     lam=args.lam, eta=None if args.eta is None else tuple(args.eta),
                     alpha_level=args.alpha_level, cv_folds=args.folds, seed=args.seed)


def _irrnn_params(args):
    return dict(hidden_layers=args.layers, hidden_width=args.width,
                activation=args.activation, epochs=args.epochs, batch_size=args.batch,
                learning_rate=args.lr, lr_decay=args.lr_decay, clip_norm=args.clip_norm,
                lam=args.lam,
                eta=args.eta, cv_folds=args.folds, random_state=args.seed)


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def write_run_log(out, args, wall_time, extra=None):
    entry = {"command": args.command,
             "args": {k: _jsonable(v) for k, v in sorted(vars(args).items())},
             "versions": {"irrnn": __version__, "numpy": np.__version__,
                          "python": platform.python_version()},
             "wall_time_s": round(wall_time, 3)}
    if extra:
        entry.update(extra)
    with open(Path(out) / "run.log", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def cmd_simulate(args):
    try:
        cfg = SimConfig(dims=args.dims, N=args.n, J=args.j, noise=args.noise,
                        variance_ratio=tuple(args.ratio), seed=args.seed)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    ds, truth = generate(cfg)
    meta = {"simulation": {"dims": list(cfg.dims), "N": cfg.N, "J": cfg.J,
                           "noise": cfg.noise, "variance_ratio": list(cfg.variance_ratio),
                           "seed": cfg.seed}}
    save_dataset(ds, args.out, meta=meta)
    ratio = component_variances(ds.X, truth)
    print(f"V={ds.V}")
    print("variance ratio main:deviation:error = "
          + ":".join(f"{r / ratio[2]:.4f}" for r in ratio))
    write_run_log(args.out, args, time.perf_counter() - t0)


def cmd_fit(args):
    try:
        cfg = _fit_config(args)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc
    ds = load_dataset(args.data)
    if args.eta is not None and len(args.eta) not in (1, ds.J):
        raise UsageError(f"--eta needs 1 or {ds.J} values, got {len(args.eta)}")
    t0 = time.perf_counter()
    res = fit(ds.without_truth(), cfg)
    wall = time.perf_counter() - t0
    save_fit(res, args.out)
    print(f"lambda={res.lam:.6g}")
    print("eta=" + ",".join(f"{e:.6g}" for e in res.eta))
    print(f"beta_hat nonzero fraction={np.mean(res.beta_hat != 0):.4f}")
    print(f"wall time {wall:.2f}s")
    write_run_log(args.out, args, wall)


def _write_pgm(path, image):
    lo, hi = float(image.min()), float(image.max())
    scaled = np.zeros(image.shape) if hi == lo else (image - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return lo, hi


def dump_slices(directory, fit_result, truth=None):
    """Middle slice along the last axis of each beta map, as 8-bit PGM."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dims = fit_result.grid.dims
    maps = {"beta_hat": fit_result.beta_hat, "beta_tilde": fit_result.beta_tilde}
    if truth is not None:
        maps["beta_true"] = truth.beta
    lines = []
    for name, field in maps.items():
        for j, row in enumerate(field):
            vol = row.reshape(dims)
            img = vol[..., dims[-1] // 2] if len(dims) == 3 else vol
            img = np.atleast_2d(img)
            fname = f"{name}_{j}.pgm"
            lo, hi = _write_pgm(directory / fname, img)
            lines.append(f"{fname} min={lo:.12g} max={hi:.12g}")
    (directory / "scales.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_evaluate(args):
    if not args.data and not args.test:
        raise UsageError("evaluate needs --data (ground truth) and/or --test (held-out data)")
    fit_result = load_fit(args.fit)
    report = metrics.MetricsReport()
    truth = None
    meta = {}
    if args.data:
        ds = load_dataset(args.data)
        meta = dataset_meta(args.data).get("simulation", {})
        truth = ds.truth
        if truth is None:
            raise FormatError("dataset has no ground truth arrays", "truth")
        if ds.grid.dims != fit_result.grid.dims:
            raise UsageError("dataset grid differs from the fit grid")
        report = metrics.evaluate_fit(fit_result, truth)
        if args.with_alpha and not args.test:
            report.recon_mse = metrics.fit_recon_mse(fit_result, ds, with_alpha=True)
    if args.test:
        test = load_dataset(args.test)
        if test.grid.dims != fit_result.grid.dims:
            raise UsageError("test grid differs from the fit grid")
        if args.with_alpha and test.N != fit_result.alpha_hat.shape[0]:
            raise UsageError("--with-alpha needs the training subjects as the test set")
        report.recon_mse = metrics.fit_recon_mse(fit_result, test, with_alpha=args.with_alpha)
    rows = [{"method": "irrnn", "N": fit_result.alpha_hat.shape[0],
             "dims": "x".join(map(str, fit_result.grid.dims)),
             "noise": meta.get("noise", "unknown"), "metric": name,
             "median": value, "iqr": 0.0}
            for name, value in report.as_dict().items() if np.isfinite(value)]
    text = "\n".join(f"{name:>12s}  {metrics.format_number(value)}"
                     for name, value in report.as_dict().items() if np.isfinite(value))
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        (out / "metrics.csv").write_text(metrics.rows_to_csv(rows), encoding="utf-8")
    if args.slices:
        dump_slices(args.slices, fit_result, truth)
    return report


def cmd_benchmark(args):
    dims_list = args.dims or [(16, 16, 8)]
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    bad = [m for m in args.methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
    bad = [n for n in args.noise if n not in NOISE_KINDS]
    if bad:
        raise UsageError(f"unknown noise {bad}; choose from {list(NOISE_KINDS)}")
    try:
        _fit_config(args)
        cells = [Cell(n, d, noise) for n in args.n for d in dims_list for noise in args.noise]
        for c in cells:
            SimConfig(dims=c.dims, N=c.N + args.holdout, noise=c.noise)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary, per_rep = run_benchmark(cells, args.reps, args.seed, args.methods,
                                     holdout=args.holdout,
                                     irrnn_params=_irrnn_params(args),
                                     smoothing_sigma=args.smooth_sigma,
                                     alpha_level=args.alpha_level)
    wall = time.perf_counter() - t0
    (out / "results.csv").write_text(metrics.rows_to_csv(summary), encoding="utf-8")
    with open(out / "replications.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "N", "dims", "noise", "rep", "metric", "value"])
        for r in per_rep:
            value = r["value"]
            value = metrics.format_number(value) if isinstance(value, float) else value
            writer.writerow([r["method"], r["N"], r["dims"], r["noise"], r["rep"],
                             r["metric"], value])
    incomplete = sorted({(r["method"], r["N"], r["dims"], r["noise"])
                         for r in summary if not r["complete"]})
    table = metrics.format_table(summary)
    if incomplete:
        table += "incomplete cells: " + "; ".join(map(str, incomplete)) + "\n"
    (out / "table.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    write_run_log(out, args, wall, {"cells": len(cells), "incomplete": len(incomplete)})


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate,
            "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"irrnn {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"irrnn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"irrnn {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, RankDeficiencyError, UndefinedMetricError,
            FloatingPointError) as exc:
        print(f"irrnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgumentError as exc:
        print(f"irrnn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
