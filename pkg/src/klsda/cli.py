"""Command-line front end.

Subcommands: ``synth`` (write a synthetic dataset), ``klmap`` (per-feature
class-discrepancy map), ``fit`` (one configuration, model JSON), ``eval``
(cross-validated AUC for several configurations), ``betaplot`` (nonzero
coefficients of a fitted model), ``bench`` (eval over every configuration
plus a comparison table).

Every run writes ``run.json`` echoing the fully resolved configuration,
holds a lockfile on the output directory, and is byte-reproducible from
its seed (wall-time fields aside). Exit codes: 0 ok, 1 usage, 2 data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import (
    DataValidationError,
    SyntheticConfig,
    center_columns,
    generate_synthetic,
    load_epochs,
    save_epochs,
)
from .divergence import j_map
from .evaluate import FldaConfig, cross_validate, flda_direction
from .larsen import ConvergenceError, DegenerateStepError, SolverLimits
from .model import (
    DegenerateDirectionError,
    KlsdaConfig,
    fit_dataset,
    load_model_json,
    save_model_json,
)

logger = logging.getLogger("klsda")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

ALL_CONFIGS = ("klsda0", "klsda1", "klsda2", "klsda3", "flda")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Lock:
    """Single-owner guard over an output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".klsda.lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataValidationError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def parse_grid_spec(spec: str):
    """``lo:hi:count`` expands to count log-spaced values, endpoints included."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid spec must look like lo:hi:count, got {spec!r}")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if lo <= 0 or hi <= 0 or count < 1:
        raise ValueError(f"grid spec values out of range: {spec!r}")
    if count == 1:
        return (lo,)
    return tuple(np.logspace(np.log10(lo), np.log10(hi), count))


def resolve_threads(value) -> int:
    if value is None:
        value = int(os.environ.get("KLSDA_THREADS", "0"))
    value = int(value)
    if value < 0:
        raise ValueError("--threads must be >= 0")
    if value == 0:
        return min(os.cpu_count() or 1, 8)
    return value


def _write_json(path: Path, payload: dict):
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _write_run_json(out: Path, command: str, resolved: dict):
    _write_json(out / "run.json", {"command": command, **resolved})


def _load_dataset(data_dir: Path):
    return load_epochs(
        data_dir / "epochs.f64", data_dir / "labels.txt", data_dir / "meta.json"
    )


def _svg_heatmap(grid: np.ndarray, path: Path, cell: int = 8):
    """Channels x time heatmap, white to red on a linear 0..max scale."""
    ch, T = grid.shape
    vmax = float(grid.max())
    w, h = T * cell, ch * cell
    rows = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">'
    ]
    for c in range(ch):
        for t in range(T):
            frac = 0.0 if vmax == 0.0 else float(grid[c, t]) / vmax
            other = 255 - int(round(frac * 255))
            rows.append(
                f'<rect x="{t * cell}" y="{c * cell}" width="{cell}" '
                f'height="{cell}" fill="rgb(255,{other},{other})"/>'
            )
    rows.append("</svg>")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def _svg_stem(indices, values, p: int, title: str, path: Path,
              width: int = 800, height: int = 240):
    """Stem plot of sparse coefficients over the feature axis."""
    vmax = max((abs(v) for v in values), default=1.0) or 1.0
    mid = height / 2
    rows = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height + 20}" viewBox="0 0 {width} {height + 20}">',
        f'<title>{title}</title>',
        f'<text x="4" y="14" font-size="12">{title}</text>',
        f'<line x1="0" y1="{mid + 20}" x2="{width}" y2="{mid + 20}" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for idx, val in zip(indices, values):
        x = (idx + 0.5) / p * width
        y = mid + 20 - (val / vmax) * (mid - 10)
        rows.append(
            f'<line x1="{x:.2f}" y1="{mid + 20}" x2="{x:.2f}" y2="{y:.2f}" '
            f'stroke="steelblue" stroke-width="1"/>'
        )
    rows.append("</svg>")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SyntheticConfig(
        n_target=args.targets,
        n_nontarget=args.nontargets,
        n_channels=args.channels,
        n_times=args.times,
        fs_hz=args.fs,
        bump_amplitude=args.amplitude,
        bump_center_s=args.center,
        bump_width_s=args.width,
        active_channels=tuple(int(c) for c in args.active_channels.split(",")),
        noise_sigma=args.noise_sigma,
        ar_coefficient=args.ar,
        seed=args.seed,
    )
    with _Lock(out):
        dataset = generate_synthetic(cfg)
        paths = save_epochs(dataset, out)
        _write_run_json(out, "synth", {
            "targets": cfg.n_target, "nontargets": cfg.n_nontarget,
            "channels": cfg.n_channels, "times": cfg.n_times,
            "fs_hz": cfg.fs_hz, "amplitude": cfg.bump_amplitude,
            "center_s": cfg.bump_center_s, "width_s": cfg.bump_width_s,
            "active_channels": list(cfg.active_channels),
            "noise_sigma": cfg.noise_sigma, "ar": cfg.ar_coefficient,
            "seed": cfg.seed, "out": str(out),
        })
    logger.info("wrote %s (%d epochs, %d features)",
                paths["data"], dataset.n, dataset.p)
    return EXIT_OK


def cmd_klmap(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _Lock(out):
        dataset = _load_dataset(data_dir)
        jm = j_map(dataset, n_bins=args.bins)
        csv_path = out / "jmap.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["channel", "time_index", "time_s", "j_value"])
            T = dataset.n_times
            for c in range(dataset.n_channels):
                for t in range(T):
                    writer.writerow(
                        [c, t, repr(t / dataset.fs_hz), repr(float(jm.values[c * T + t]))]
                    )
        if args.svg:
            _svg_heatmap(jm.as_grid(), out / "jmap.svg")
        _write_run_json(out, "klmap", {
            "data": str(data_dir), "bins": args.bins, "svg": bool(args.svg),
            "out": str(out),
        })
    logger.info("wrote %s", csv_path)
    return EXIT_OK


def _klsda_config(args, config_id: str) -> KlsdaConfig:
    return KlsdaConfig(
        config_id=config_id.upper(),
        lambda2_grid=parse_grid_spec(args.lambda2_grid),
        limits=SolverLimits(
            t_max=args.t_max,
            max_steps=args.max_steps,
            max_nonzeros=args.max_nonzeros,
        ),
        q=1,
        n_bins=args.bins,
        epsilon=args.epsilon,
    )


def cmd_fit(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_id = args.config.lower()
    if config_id not in ALL_CONFIGS:
        raise DataValidationError(
            f"unknown config {args.config!r}; choose from {', '.join(ALL_CONFIGS)}"
        )
    with _Lock(out):
        dataset = _load_dataset(data_dir)
        model_path = out / "model.json"
        if config_id == "flda":
            Xc, means = center_columns(dataset.X)
            beta = flda_direction(Xc, dataset.z)
            idx = np.flatnonzero(beta)
            _write_json(model_path, {
                "config_id": "FLDA",
                "q": 1,
                "lambda2_selected": [],
                "kappa_selected": [],
                "beta": [{"indices": idx.tolist(), "values": beta[idx].tolist()}],
                "theta": [],
                "pi": (dataset.class_counts / dataset.n).tolist(),
                "d_diag_summary": {"min": 1.0, "max": 1.0, "geometric_mean": 1.0},
                "column_means": means.tolist(),
                "t_max": None,
                "n_bins": None,
                "epsilon": None,
                "seed": args.seed,
                "n_channels": dataset.n_channels,
                "n_times": dataset.n_times,
            })
        else:
            cfg = _klsda_config(args, config_id)
            model = fit_dataset(dataset, cfg, n_jobs=resolve_threads(args.threads))
            save_model_json(model, model_path, seed=args.seed)
        _write_run_json(out, "fit", {
            "data": str(data_dir), "config": config_id,
            "lambda2_grid": args.lambda2_grid, "t_max": args.t_max,
            "bins": args.bins, "epsilon": args.epsilon,
            "max_steps": args.max_steps, "max_nonzeros": args.max_nonzeros,
            "seed": args.seed, "out": str(out),
        })
    logger.info("wrote %s", model_path)
    return EXIT_OK


def _run_eval(args, configs) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stratified = not args.no_stratify
    n_jobs = resolve_threads(args.threads)
    any_failed = False
    with _Lock(out):
        dataset = _load_dataset(data_dir)
        reports = []
        for config_id in configs:
            if config_id == "flda":
                cfg = FldaConfig()
            else:
                cfg = _klsda_config(args, config_id)
            try:
                report = cross_validate(
                    dataset, cfg, k=args.folds, seed=args.seed,
                    stratified=stratified, n_jobs=n_jobs,
                )
            except Exception as exc:
                logger.error("configuration %s failed: %s", config_id, exc)
                any_failed = True
                continue
            reports.append(report)
            _write_json(out / f"report_{config_id}.json", report.to_json_dict())
            if report.n_failed_folds:
                any_failed = True

        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["config", "mean_auc", "std_auc", "mean_sparsity"])
            for report in reports:
                mean_sp = (
                    float(np.mean(report.sparsity_fraction))
                    if report.sparsity_fraction else 0.0
                )
                writer.writerow([
                    report.config_id.lower(), repr(report.mean_auc),
                    repr(report.std_auc), repr(mean_sp),
                ])
        _write_run_json(out, "eval", {
            "data": str(data_dir), "configs": list(configs),
            "folds": args.folds, "lambda2_grid": args.lambda2_grid,
            "t_max": args.t_max, "bins": args.bins, "epsilon": args.epsilon,
            "max_steps": args.max_steps, "max_nonzeros": args.max_nonzeros,
            "stratified": stratified, "seed": args.seed, "out": str(out),
        })

    if not args.quiet:
        print(f"{'config':<8} {'mean_auc':>9} {'std_auc':>9} {'sparsity':>9}")
        for report in reports:
            mean_sp = (
                float(np.mean(report.sparsity_fraction))
                if report.sparsity_fraction else 0.0
            )
            print(
                f"{report.config_id.lower():<8} {report.mean_auc:>9.4f} "
                f"{report.std_auc:>9.4f} {mean_sp:>9.4f}"
            )
    return EXIT_NUMERICAL if any_failed else EXIT_OK


def cmd_eval(args) -> int:
    configs = [c.strip().lower() for c in args.configs.split(",") if c.strip()]
    for c in configs:
        if c not in ALL_CONFIGS:
            raise DataValidationError(
                f"unknown config {c!r}; choose from {', '.join(ALL_CONFIGS)}"
            )
    return _run_eval(args, configs)


def cmd_bench(args) -> int:
    return _run_eval(args, ALL_CONFIGS)


def cmd_betaplot(args) -> int:
    model_path = Path(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not model_path.exists():
        raise DataValidationError(f"missing model file: {model_path}")
    with _Lock(out):
        payload = load_model_json(model_path)
        direction = args.direction - 1
        if not 0 <= direction < len(payload["beta"]):
            raise DataValidationError(
                f"model has {len(payload['beta'])} direction(s); "
                f"--direction {args.direction} out of range"
            )
        sparse = payload["beta"][direction]
        T = int(payload["n_times"])
        p = int(payload["n_channels"]) * T
        csv_path = out / "beta.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "channel", "time_index", "value"])
            for idx, val in zip(sparse["indices"], sparse["values"]):
                writer.writerow([idx, idx // T, idx % T, repr(float(val))])
        if args.svg:
            title = (
                f"{payload['config_id'].lower()} direction {args.direction} "
                f"({len(sparse['indices'])})"
            )
            _svg_stem(sparse["indices"], sparse["values"], p, title, out / "beta.svg")
        _write_run_json(out, "betaplot", {
            "model": str(model_path), "direction": args.direction,
            "svg": bool(args.svg), "out": str(out),
        })
    logger.info("wrote %s", csv_path)
    return EXIT_OK


def _add_common(sub):
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="seed recorded/used by the run")
    sub.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub.add_argument("--threads", type=int, default=None,
                     help="max concurrent jobs; 0 = auto (env KLSDA_THREADS)")


def _add_solver_knobs(sub):
    sub.add_argument("--lambda2-grid", default="1e-8:1e-1:8",
                     help="ridge grid as lo:hi:count, log-spaced inclusive")
    sub.add_argument("--t-max", type=float, required=True,
                     help="l1-norm budget for the solution path")
    sub.add_argument("--bins", type=int, default=20, help="histogram bins")
    sub.add_argument("--epsilon", type=float, default=1e-12,
                     help="guard added to zero divergence values")
    sub.add_argument("--max-steps", type=int, default=500)
    sub.add_argument("--max-nonzeros", type=int, default=None,
                     help="cap on active features; default caps at a quarter "
                          "of the training rows when features outnumber them")


def build_parser() -> _Parser:
    parser = _Parser(prog="klsda", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="write a synthetic oddball dataset")
    synth.add_argument("--targets", type=int, required=True)
    synth.add_argument("--nontargets", type=int, required=True)
    synth.add_argument("--channels", type=int, default=8)
    synth.add_argument("--times", type=int, default=64)
    synth.add_argument("--fs", type=float, default=256.0)
    synth.add_argument("--amplitude", type=float, default=1.0)
    synth.add_argument("--center", type=float, default=0.15,
                       help="bump center (s)")
    synth.add_argument("--width", type=float, default=0.03,
                       help="bump width (s)")
    synth.add_argument("--active-channels", default="2,3,4")
    synth.add_argument("--noise-sigma", type=float, default=1.0)
    synth.add_argument("--ar", type=float, default=0.5)
    _add_common(synth)
    synth.set_defaults(func=cmd_synth)

    klmap = subs.add_parser("klmap", help="class-discrepancy map as CSV/SVG")
    klmap.add_argument("--data", required=True, help="dataset directory")
    klmap.add_argument("--bins", type=int, default=20)
    klmap.add_argument("--svg", action="store_true")
    _add_common(klmap)
    klmap.set_defaults(func=cmd_klmap)

    fit_p = subs.add_parser("fit", help="fit one configuration")
    fit_p.add_argument("--data", required=True)
    fit_p.add_argument("--config", required=True,
                       help="one of " + ", ".join(ALL_CONFIGS))
    _add_solver_knobs(fit_p)
    _add_common(fit_p)
    fit_p.set_defaults(func=cmd_fit)

    eval_p = subs.add_parser("eval", help="cross-validated AUC per configuration")
    eval_p.add_argument("--data", required=True)
    eval_p.add_argument("--configs", required=True,
                        help="comma-separated configuration list")
    eval_p.add_argument("--folds", type=int, default=3)
    eval_p.add_argument("--no-stratify", action="store_true")
    _add_solver_knobs(eval_p)
    _add_common(eval_p)
    eval_p.set_defaults(func=cmd_eval)

    beta_p = subs.add_parser("betaplot", help="nonzero coefficients of a model")
    beta_p.add_argument("--model", required=True, help="model.json path")
    beta_p.add_argument("--direction", type=int, default=1)
    beta_p.add_argument("--svg", action="store_true")
    _add_common(beta_p)
    beta_p.set_defaults(func=cmd_betaplot)

    bench = subs.add_parser("bench", help="eval over every configuration")
    bench.add_argument("--data", required=True)
    bench.add_argument("--folds", type=int, default=3)
    bench.add_argument("--no-stratify", action="store_true")
    _add_solver_knobs(bench)
    _add_common(bench)
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    t0 = time.monotonic()
    try:
        code = args.func(args)
    except (DataValidationError, FileNotFoundError, json.JSONDecodeError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (DegenerateStepError, ConvergenceError, DegenerateDirectionError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    logger.info("done in %.2fs", time.monotonic() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
