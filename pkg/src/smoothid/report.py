"""Aggregate results CSVs into summary tables and render overview figures."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import dynamics, noise
from .experiment import read_rows

__all__ = [
    "snr_table",
    "summarize_smoothing",
    "summarize_coefficients",
    "summarize_prediction",
    "write_report",
]

# Appendix-style SNR tables are computed on the common 201-sample window
SNR_WINDOW = (0.1, 2.1)


def snr_table() -> list:
    """Per-state SNR rows for every benchmark system and preset noise level."""
    rows = []
    for name in dynamics.BENCHMARK_NAMES:
        preset = dynamics.benchmark(name)
        x0 = dynamics.window_start_state(preset)
        t0, t1 = SNR_WINDOW
        if preset.t_train[0] == 0.0:
            full = dynamics.integrate_rk4(
                preset.system, x0, 0.0, t1, preset.dt, with_derivatives=False
            )
            k = int(round(t0 / preset.dt))
            traj = dynamics.TrajectoryGrid(full.t[k:], full.X[:, k:])
        else:
            traj = dynamics.integrate_rk4(
                preset.system, x0, t0, t1, preset.dt, with_derivatives=False
            )
        for sigma in preset.noise_levels:
            vals = noise.snr_db(traj, sigma)
            for j, v in enumerate(vals):
                rows.append(
                    {"system": name, "sigma": sigma, "state": j + 1, "snr_db": float(v)}
                )
    return rows


def _stats(values) -> tuple:
    a = np.asarray([v for v in values if not np.isnan(v)], dtype=float)
    if a.size == 0:
        return 0, float("nan"), float("nan")
    return int(a.size), float(np.mean(a)), float(np.std(a))


def summarize_smoothing(rows) -> list:
    """Mean/std of e_X and e_dX per (system, sigma, color, smoother, selector).

    e_X / e_dX repeat across the state and regressor rows of one smoothing
    pass, so each (realization, smoother, selector) contributes once.
    """
    per_pass: dict = {}
    for r in rows:
        key = (r["system"], r["sigma"], r["color"], r["smoother"], r["selector"])
        per_pass.setdefault(key, {})[r["realization"]] = (r["e_X"], r["e_dX"])
    out = []
    for key in sorted(per_pass):
        vals = per_pass[key].values()
        n, mean_x, std_x = _stats(v[0] for v in vals)
        _, mean_dx, std_dx = _stats(v[1] for v in vals)
        out.append(
            dict(
                zip(
                    ("system", "sigma", "color", "smoother", "selector"),
                    key,
                )
            )
            | {
                "n": n,
                "mean_e_X": mean_x,
                "std_e_X": std_x,
                "mean_e_dX": mean_dx,
                "std_e_dX": std_dx,
            }
        )
    return out


def summarize_coefficients(rows) -> list:
    """Per-state e_xi and support statistics for each method combination."""
    groups = defaultdict(list)
    for r in rows:
        key = (
            r["system"], r["sigma"], r["color"],
            r["smoother"], r["selector"], r["regressor"], r["state"],
        )
        groups[key].append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        n, mean_xi, std_xi = _stats(r["e_xi"] for r in rs)
        supports = [r["support_errors"] for r in rs if r["support_errors"] >= 0]
        out.append(
            dict(
                zip(
                    ("system", "sigma", "color", "smoother", "selector", "regressor", "state"),
                    key,
                )
            )
            | {
                "n": n,
                "mean_e_xi": mean_xi,
                "std_e_xi": std_xi,
                "mean_support_errors": float(np.mean(supports)) if supports else float("nan"),
                "exact_support_rate": float(np.mean([s == 0 for s in supports]))
                if supports
                else float("nan"),
            }
        )
    return out


def summarize_prediction(rows) -> list:
    """Mean/std of e_pred over non-excluded realizations, with exclusion counts."""
    per_model: dict = {}
    for r in rows:
        key = (
            r["system"], r["sigma"], r["color"],
            r["smoother"], r["selector"], r["regressor"],
        )
        per_model.setdefault(key, {})[r["realization"]] = (r["e_pred"], r["excluded"])
    out = []
    for key in sorted(per_model):
        vals = list(per_model[key].values())
        kept = [v[0] for v in vals if not v[1]]
        n, mean_p, std_p = _stats(kept)
        out.append(
            dict(
                zip(
                    ("system", "sigma", "color", "smoother", "selector", "regressor"),
                    key,
                )
            )
            | {
                "n_included": n,
                "n_excluded": int(sum(v[1] for v in vals)),
                "mean_e_pred": mean_p,
                "std_e_pred": std_p,
            }
        )
    return out


def _write_csv(path: Path, rows) -> None:
    def fmt(v):
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if rows:
            w.writerow(rows[0].keys())
            for r in rows:
                w.writerow([fmt(v) for v in r.values()])


def _sigma_curves(entries, value_key):
    """(label, sigmas, values) per (smoother, selector) with sigma-sorted points."""
    curves = defaultdict(dict)
    for e in entries:
        curves[(e["smoother"], e["selector"])][e["sigma"]] = e[value_key]
    out = []
    for (smoother, selector), pts in sorted(curves.items()):
        sig = sorted(pts)
        out.append((f"{smoother}/{selector}", sig, [pts[s] for s in sig]))
    return out


def _render_figures(out_dir: Path, system: str, smoothing, coefficients) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    white_smooth = [e for e in smoothing if e["system"] == system and e["color"] == "white"]
    if white_smooth:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
        for ax, key, title in zip(axes, ("mean_e_X", "mean_e_dX"), ("$e_X$", r"$e_{\dot X}$")):
            for label, sig, vals in _sigma_curves(white_smooth, key):
                style = "--" if label.endswith("/gcv") else "-"
                ax.loglog(sig, vals, style, marker="o", ms=3, label=label)
            ax.set_xlabel(r"$\sigma$")
            ax.set_title(f"{system}: {title}")
            ax.grid(True, which="both", alpha=0.3)
        axes[0].legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"smoothing_errors_{system}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    white_coef = [e for e in coefficients if e["system"] == system and e["color"] == "white"]
    regressors = sorted({e["regressor"] for e in white_coef})
    if white_coef and regressors:
        fig, axes = plt.subplots(1, len(regressors), figsize=(4.5 * len(regressors), 3.6))
        axes = np.atleast_1d(axes)
        for ax, regressor in zip(axes, regressors):
            # mean over states of the per-state means
            merged = defaultdict(list)
            for e in white_coef:
                if e["regressor"] == regressor and not np.isnan(e["mean_e_xi"]):
                    merged[(e["smoother"], e["selector"], e["sigma"])].append(e["mean_e_xi"])
            entries = [
                {"smoother": k[0], "selector": k[1], "sigma": k[2], "v": float(np.mean(v))}
                for k, v in merged.items()
            ]
            for label, sig, vals in _sigma_curves(entries, "v"):
                style = "--" if label.endswith("/gcv") else "-"
                ax.loglog(sig, vals, style, marker="o", ms=3, label=label)
            ax.set_xlabel(r"$\sigma$")
            ax.set_title(f"{system}: $e_\\xi$ ({regressor})")
            ax.grid(True, which="both", alpha=0.3)
        axes[0].legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"coefficient_errors_{system}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def write_report(results_dir, out_dir=None) -> list:
    """Summaries + figures for every per-system CSV under ``results_dir``.

    Returns the written paths. Summary tables cover all noise colors; the
    figures show the white-noise error curves.
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    systems = []
    for name in dynamics.BENCHMARK_NAMES:
        path = results_dir / f"{name}.csv"
        if path.exists():
            rows.extend(read_rows(path))
            systems.append(name)
    if not rows:
        raise FileNotFoundError(f"no results CSVs under {results_dir}")

    smoothing = summarize_smoothing(rows)
    coefficients = summarize_coefficients(rows)
    prediction = summarize_prediction(rows)

    written = []
    for fname, table in (
        ("snr.csv", snr_table()),
        ("summary_smoothing.csv", smoothing),
        ("summary_coefficients.csv", coefficients),
        ("summary_prediction.csv", prediction),
    ):
        path = out_dir / fname
        _write_csv(path, table)
        written.append(path)
    for system in systems:
        written.extend(_render_figures(out_dir, system, smoothing, coefficients))
    return written
