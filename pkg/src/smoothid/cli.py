"""Command line front end: simulate, smooth, identify, run, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import report
from .noise import NoiseSpec, corrupt
from .sparse_regression import recover_system


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--out", help="output path ('-' or omitted: stdout)")


def _add_cell_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", help="benchmark name (default from config)")
    p.add_argument("--sigma", type=float, help="noise level (default: first configured)")
    p.add_argument("--color", default=None, choices=sorted(ex.COLOR_EXPONENTS))
    p.add_argument("--realization", type=int, default=0)


def _config_kwargs(args) -> dict:
    kwargs = {}
    if args.config:
        kwargs = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if getattr(args, "system", None):
        kwargs["system"] = args.system
    if args.seed is not None:
        kwargs["base_seed"] = args.seed
    return kwargs


def _single_setup(args):
    kwargs = _config_kwargs(args)
    kwargs.pop("systems", None)
    cfg = ex.ExperimentConfig(**kwargs)
    sigma = args.sigma if args.sigma is not None else cfg.noise_levels[0]
    color = args.color or (cfg.noise_colors[0] if cfg.noise_colors else "white")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if color not in ex.COLOR_EXPONENTS:
        raise ValueError(f"unknown noise color {color!r}")
    _, ext, table, _, _ = ex._simulation(cfg)
    spec = NoiseSpec(
        sigma,
        ex.COLOR_EXPONENTS[color],
        ex.realization_seed(cfg.base_seed, cfg.system, sigma, color, args.realization),
    )
    return cfg, ext, table, corrupt(ext.full, spec)


def _open_out(args):
    if args.out and args.out != "-":
        return open(args.out, "w", newline="", encoding="utf-8"), True
    return sys.stdout, False


def _write_table(args, header, columns) -> None:
    f, close = _open_out(args)
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])
    finally:
        if close:
            f.close()


def cmd_simulate(args) -> int:
    cfg, ext, _, noisy = _single_setup(args)
    n = ext.full.n
    header = (
        ["t"]
        + [f"y{j + 1}" for j in range(n)]
        + [f"x{j + 1}" for j in range(n)]
        + [f"dx{j + 1}" for j in range(n)]
    )
    cols = [ext.full.t, *noisy.X, *ext.full.X, *ext.full.dXdt]
    _write_table(args, header, cols)
    return 0


def cmd_smooth(args) -> int:
    cfg, ext, _, noisy = _single_setup(args)
    Xh, dXh, lams, infos = ex.smooth_trajectory(noisy.t, noisy.X, args.smoother, args.selector)
    Xh, dXh = ext.trim(Xh), ext.trim(dXh)
    t = ext.training.t
    n = Xh.shape[0]
    header = ["t"] + [f"xhat{j + 1}" for j in range(n)] + [f"dxhat{j + 1}" for j in range(n)]
    _write_table(args, header, [t, *Xh, *dXh])
    for j, (lam, info) in enumerate(zip(lams, infos)):
        used = info.get("fallback") or info.get("selector")
        print(f"state {j + 1}: lambda = {_fmt(lam)} ({used})", file=sys.stderr)
    return 0


def cmd_identify(args) -> int:
    cfg, ext, table, noisy = _single_setup(args)
    Xh, dXh, _, _ = ex.smooth_trajectory(noisy.t, noisy.X, args.smoother, args.selector)
    model = recover_system(
        ext.trim(Xh), ext.trim(dXh), table, method=args.regressor, selector=args.selector
    )
    text = model.to_json
    text = text() if callable(text) else text
    f, close = _open_out(args)
    try:
        f.write(text + "\n")
    finally:
        if close:
            f.close()
    return 0


def cmd_run(args) -> int:
    kwargs = _config_kwargs(args)
    systems = kwargs.pop("systems", None)
    if systems is None:
        systems = [kwargs["system"]] if "system" in kwargs else list(ex_benchmarks())
    if args.out:
        kwargs["out_dir"] = args.out
    for name in systems:
        cfg = ex.ExperimentConfig(**{**kwargs, "system": name})
        out = ex.run_all(cfg, jobs=args.jobs)
        print(ex.csv_path(cfg), file=sys.stderr)
    print(out)
    return 0


def ex_benchmarks():
    from .dynamics import BENCHMARK_NAMES

    return BENCHMARK_NAMES


def cmd_report(args) -> int:
    written = report.write_report(args.results, args.out)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="noisy benchmark trajectory on the extended window")
    _add_common(p)
    _add_cell_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("smooth", help="denoise + differentiate one realization")
    _add_common(p)
    _add_cell_flags(p)
    p.add_argument("--smoother", default="spline", choices=ex.SMOOTHERS)
    p.add_argument("--selector", default="gcv", choices=ex.SELECTORS)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("identify", help="recover a sparse model from one realization")
    _add_common(p)
    _add_cell_flags(p)
    p.add_argument("--smoother", default="spline", choices=ex.SMOOTHERS)
    p.add_argument("--selector", default="pareto", choices=ex.SELECTORS)
    p.add_argument("--regressor", default="wbpdn", choices=ex.REGRESSORS)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("run", help="run the experiment grid and persist CSVs")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summary tables and figures from results CSVs")
    p.add_argument("results", nargs="?", default="results")
    p.add_argument("--out", help="output directory (default: alongside the results)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"smoothid: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
