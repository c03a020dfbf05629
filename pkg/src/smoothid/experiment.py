"""Grid orchestration: simulate, corrupt, smooth, identify, score, persist."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, dynamics, metrics
from .basis import build_table
from .exceptions import DegenerateWindowError, SelectionFailure, SolverFailure
from .global_smoothers import (
    SmoothingSpline,
    TikhonovSmoother,
    difference_matrix,
    differentiate_by_spline,
    l1_trend_filter,
    lambda_max_trend,
)
from .local_smoothers import Kernel, LocalFitConfig, smooth_series
from .model_selection import ParetoPoint, pareto_corner, select_bandwidth_gcv, select_by_gcv
from .noise import NoiseSpec, corrupt
from .sparse_regression import recover_system

__all__ = [
    "SCHEMA_VERSION",
    "SMOOTHERS",
    "LOCAL_SMOOTHERS",
    "GLOBAL_SMOOTHERS",
    "SELECTORS",
    "REGRESSORS",
    "COLOR_EXPONENTS",
    "ExperimentConfig",
    "ExperimentRecord",
    "realization_seed",
    "smooth_trajectory",
    "run_cell",
    "run_all",
    "csv_path",
    "read_rows",
    "finalize_csv",
]

SCHEMA_VERSION = 1

LOCAL_SMOOTHERS = ("savgol", "lowess")
GLOBAL_SMOOTHERS = ("tikhonov", "trend", "spline")
SMOOTHERS = LOCAL_SMOOTHERS + GLOBAL_SMOOTHERS
SELECTORS = ("gcv", "pareto")
REGRESSORS = ("stls", "wbpdn")
COLOR_EXPONENTS = {"white": 0.0, "pink": 1.0, "blue": -1.0, "brown": -2.0}
TREND_ORDER = 3

_LOCAL_KERNELS = {"savgol": Kernel.RECTANGULAR, "lowess": Kernel.EPANECHNIKOV}

COLUMNS = (
    "schema_version",
    "system",
    "sigma",
    "color",
    "realization",
    "smoother",
    "selector",
    "regressor",
    "state",
    "smoother_lambda",
    "regressor_lambda",
    "e_X",
    "e_dX",
    "e_xi",
    "support_errors",
    "e_pred_state",
    "e_pred",
    "excluded",
    "reason",
)


@dataclass
class ExperimentConfig:
    """Full-grid protocol; preset-dependent fields default from the benchmark."""

    system: str = "lorenz63"
    params: dict = field(default_factory=dict)
    t_train: tuple | None = None
    dt: float = 0.01
    noise_levels: tuple | None = None
    noise_colors: tuple = ("white",)
    realizations: int = 100
    smoothers: tuple = SMOOTHERS
    selectors: tuple = SELECTORS
    regressors: tuple = REGRESSORS
    basis_degree: int | None = None
    base_seed: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        preset = dynamics.benchmark(self.system, dt=self.dt)
        if self.t_train is None:
            self.t_train = preset.t_train
        self.t_train = (float(self.t_train[0]), float(self.t_train[1]))
        if self.noise_levels is None:
            self.noise_levels = preset.noise_levels
        self.noise_levels = tuple(float(s) for s in self.noise_levels)
        if self.basis_degree is None:
            self.basis_degree = preset.basis_degree
        self.noise_colors = tuple(self.noise_colors)
        self.smoothers = tuple(self.smoothers)
        self.selectors = tuple(self.selectors)
        self.regressors = tuple(self.regressors)

        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if any(s <= 0 for s in self.noise_levels):
            raise ValueError("noise levels must be positive")
        for c in self.noise_colors:
            if c not in COLOR_EXPONENTS:
                raise ValueError(f"unknown noise color {c!r}")
        for name, known in (
            (self.smoothers, SMOOTHERS),
            (self.selectors, SELECTORS),
            (self.regressors, REGRESSORS),
        ):
            for v in name:
                if v not in known:
                    raise ValueError(f"unknown factor value {v!r}")


@dataclass
class ExperimentRecord:
    """One state's row of one (cell, realization, method-combo) result."""

    system: str
    sigma: float
    color: str
    realization: int
    smoother: str
    selector: str
    regressor: str
    state: int
    smoother_lambda: float
    regressor_lambda: float
    e_X: float
    e_dX: float
    e_xi: float
    support_errors: int
    e_pred_state: float
    e_pred: float
    excluded: bool
    reason: str
    # kept on the record for budgeting; not serialized (times are not replayable)
    wall_time_s: float


def realization_seed(base_seed: int, system: str, sigma: float, color: str, realization: int) -> int:
    """Stable 64-bit seed for one noise draw.

    Deliberately independent of smoother/selector/regressor so every method
    sees the same corrupted measurements of a realization.
    """
    key = f"{base_seed}|{system}|{sigma:.17g}|{color}|{realization}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


# -- per-series smoothing with hyperparameter selection -----------------------

_SPLINES: dict = {}
_TIKS: dict = {}
_D2S: dict = {}


def _spline_for(t: np.ndarray) -> SmoothingSpline:
    key = (t.size, float(t[0]), float(t[-1]))
    s = _SPLINES.get(key)
    if s is None or not np.array_equal(s.t, t):
        s = SmoothingSpline(t)
        _SPLINES[key] = s
    return s


def _tik_for(m: int) -> TikhonovSmoother:
    if m not in _TIKS:
        _TIKS[m] = TikhonovSmoother(m)
    return _TIKS[m]


def _d2_for(m: int):
    if m not in _D2S:
        _D2S[m] = difference_matrix(2, m)
    return _D2S[m]


def _corner_or_gcv(pareto_ev, lo, hi, gcv_ev, grid, truncate=False):
    """Pareto corner with a GCV fallback on low-confidence curves."""
    corner = pareto_corner(pareto_ev, lo, hi)
    if not corner.low_confidence:
        return corner.lam, {"selector": "pareto", "low_confidence": False, "fallback": None}
    lam, _ = select_by_gcv(gcv_ev, grid, truncate_low_lambda=truncate)
    return lam, {"selector": "pareto", "low_confidence": True, "fallback": "gcv"}


def _smooth_state(t: np.ndarray, y: np.ndarray, smoother: str, selector: str):
    """Denoise + differentiate one series; returns (x_hat, dx_hat, lam, info)."""
    if smoother in LOCAL_SMOOTHERS:
        # bandwidths have no Pareto trade-off curve here; GCV either way
        h, _ = select_bandwidth_gcv(t, y, kernel=_LOCAL_KERNELS[smoother], degree=2)
        out = smooth_series(t, y, LocalFitConfig(h, kernel=_LOCAL_KERNELS[smoother], degree=2))
        info = {"selector": "gcv", "low_confidence": False, "fallback": None}
        return out.x_hat, out.dx_hat, float(h), info

    rss_floor = (1e-15 * (float(np.linalg.norm(y)) + 1.0)) ** 2

    if smoother == "spline":
        S = _spline_for(t)
        grid = S.lambda_grid()

        def gcv_ev(lam):
            fit = S.fit(y, lam)
            return fit.x_hat, fit.df, float(np.sum((y - fit.x_hat) ** 2))

        if selector == "gcv":
            lam, _ = select_by_gcv(gcv_ev, grid)
            info = {"selector": "gcv", "low_confidence": False, "fallback": None}
        else:

            def pareto_ev(lam):
                fit = S.fit(y, lam)
                rss = float(np.sum((y - fit.x_hat) ** 2))
                rough = float(fit.model.second_derivs[1:-1] @ (S.Q.T @ fit.x_hat))
                return ParetoPoint(lam, np.log10(max(rss, rss_floor)), np.log10(max(rough, rss_floor)))

            lam, info = _corner_or_gcv(pareto_ev, grid[0], grid[-1], gcv_ev, grid)
        fit = S.fit(y, lam)
        return fit.x_hat, fit.dx_hat, float(lam), info

    if smoother == "tikhonov":
        T = _tik_for(t.size)
        D2 = _d2_for(t.size)
        grid = T.lambda_grid()

        def gcv_ev(lam):
            x = T.solve(y, lam)
            return x, T.df(lam), float(np.sum((y - x) ** 2))

        if selector == "gcv":
            lam, _ = select_by_gcv(gcv_ev, grid)
            info = {"selector": "gcv", "low_confidence": False, "fallback": None}
        else:

            def pareto_ev(lam):
                x = T.solve(y, lam)
                rss = float(np.sum((y - x) ** 2))
                pen = float(np.sum((D2 @ x) ** 2))
                return ParetoPoint(lam, np.log10(max(rss, rss_floor)), np.log10(max(pen, rss_floor)))

            lam, info = _corner_or_gcv(pareto_ev, grid[0], grid[-1], gcv_ev, grid)
        x_hat = T.solve(y, lam)
        return x_hat, differentiate_by_spline(t, x_hat), float(lam), info

    if smoother == "trend":
        lam_max = lambda_max_trend(y, TREND_ORDER)
        grid = lam_max * np.logspace(-6, 0, 40)
        warm = {"nu": None}

        def solve(lam):
            res = l1_trend_filter(y, lam, TREND_ORDER, warm=warm["nu"])
            warm["nu"] = res.warm if res.warm is not None else res.dual
            return res

        def gcv_ev(lam):
            res = solve(lam)
            return res.x_hat, res.df, float(np.sum((y - res.x_hat) ** 2))

        if selector == "gcv":
            lam, _ = select_by_gcv(gcv_ev, grid, truncate_low_lambda=True)
            info = {"selector": "gcv", "low_confidence": False, "fallback": None}
        else:

            def pareto_ev(lam):
                res = solve(lam)
                rss = float(np.sum((y - res.x_hat) ** 2))
                pen = float(np.sum(np.abs(res.Dx_hat)))
                return ParetoPoint(lam, np.log10(max(rss, rss_floor)), np.log10(max(pen, rss_floor)))

            lam, info = _corner_or_gcv(
                pareto_ev, grid[0], grid[-1], gcv_ev, grid, truncate=True
            )
        res = solve(lam)
        return res.x_hat, differentiate_by_spline(t, res.x_hat), float(lam), info

    raise ValueError(f"unknown smoother {smoother!r}")


def smooth_trajectory(t, Y, smoother: str, selector: str):
    """Apply one smoother per state row; returns (X_hat, dX_hat, lams, infos)."""
    t = np.asarray(t, dtype=float)
    Y = np.asarray(Y, dtype=float)
    xs, dxs, lams, infos = [], [], [], []
    for row in Y:
        x, dx, lam, info = _smooth_state(t, row, smoother, selector)
        xs.append(x)
        dxs.append(dx)
        lams.append(lam)
        infos.append(info)
    return np.vstack(xs), np.vstack(dxs), np.array(lams), infos


# -- one noise cell ------------------------------------------------------------

_SIM_CACHE: dict = {}


def _simulation(cfg: ExperimentConfig):
    """Deterministic per-config truth: extended window, table, reference orbit."""
    key = (
        cfg.system,
        tuple(sorted(cfg.params.items())),
        cfg.t_train,
        cfg.dt,
        cfg.basis_degree,
    )
    if key in _SIM_CACHE:
        return _SIM_CACHE[key]
    preset = dynamics.benchmark(cfg.system, dt=cfg.dt)
    factory = {
        "lorenz63": dynamics.lorenz63,
        "duffing": dynamics.duffing,
        "van_der_pol": dynamics.van_der_pol,
    }[cfg.system]
    system = factory(**cfg.params)
    t0, t1 = cfg.t_train
    if t0 == 0.0:
        x0 = np.asarray(preset.x0, dtype=float).copy()
    else:
        lead = dynamics.integrate_rk4(system, preset.x0, 0.0, t0, cfg.dt, with_derivatives=False)
        x0 = lead.X[:, -1].copy()
    ext = dynamics.simulate_training_window(system, x0, t0, t1, cfg.dt)
    table = build_table(system.dim, cfg.basis_degree)
    xi_true = np.column_stack(
        [metrics.coefficient_vector(table, tm) for tm in dynamics.true_coefficient_map(system)]
    )
    ref = dynamics.integrate_rk4(
        system, x0, t0, t0 + preset.horizon, cfg.dt, with_derivatives=False
    )
    out = (system, ext, table, xi_true, ref)
    _SIM_CACHE[key] = out
    return out


def _combo_records(cfg, sigma, color, realization, smoother, selector, regressors, noisy):
    """Identify + score the pending regressors of one smoothing pass."""
    system, ext, table, xi_true, ref = _simulation(cfg)
    train = ext.training
    amp = float(np.max(np.abs(train.X)))
    t_pred = (float(ref.t[0]), float(ref.t[-1]))

    tic = time.perf_counter()
    X_hat_full, dX_hat_full, lams, _ = smooth_trajectory(
        noisy.t, noisy.X, smoother, selector
    )
    X_hat = ext.trim(X_hat_full)
    dX_hat = ext.trim(dX_hat_full)
    e_X = metrics.relative_frobenius(X_hat, train.X)
    e_dX = metrics.relative_frobenius(dX_hat, train.dXdt)
    smoothing_s = time.perf_counter() - tic

    records = []
    for regressor in regressors:
        tic = time.perf_counter()
        model = recover_system(X_hat, dX_hat, table, method=regressor, selector=selector)
        pred = metrics.predict(
            model, train.X[:, 0], t_pred, cfg.dt, training_amplitude=amp
        )
        if pred.blew_up:
            excluded, reason = True, f"blow-up at t={pred.t_blow_up:.6g}"
            e_pred = np.nan
            e_pred_states = np.full(model.n, np.nan)
        else:
            excluded, reason = False, ""
            e_pred = metrics.relative_frobenius(pred.traj.X, ref.X)
            e_pred_states = np.array(
                [
                    metrics.relative_frobenius(pred.traj.X[j], ref.X[j])
                    for j in range(model.n)
                ]
            )
        wall = smoothing_s + (time.perf_counter() - tic)
        for j in range(model.n):
            truth_j = xi_true[:, j]
            e_xi = (
                metrics.coefficient_error(model.xi[:, j], truth_j)
                if np.any(truth_j)
                else np.nan
            )
            info = model.selector_info.get(f"x{j + 1}", {})
            records.append(
                ExperimentRecord(
                    system=cfg.system,
                    sigma=float(sigma),
                    color=color,
                    realization=int(realization),
                    smoother=smoother,
                    selector=selector,
                    regressor=regressor,
                    state=j + 1,
                    smoother_lambda=float(lams[j]),
                    regressor_lambda=float(info.get("hyperparameter", np.nan)),
                    e_X=e_X,
                    e_dX=e_dX,
                    e_xi=e_xi,
                    support_errors=metrics.support_mismatch(model.xi[:, j], truth_j),
                    e_pred_state=float(e_pred_states[j]),
                    e_pred=float(e_pred),
                    excluded=excluded,
                    reason=reason,
                    wall_time_s=wall,
                )
            )
    return records


def _failure_records(cfg, sigma, color, realization, smoother, selector, regressors, exc):
    system, ext, table, xi_true, ref = _simulation(cfg)
    nan = float("nan")
    return [
        ExperimentRecord(
            cfg.system, float(sigma), color, int(realization), smoother, selector,
            regressor, j + 1, nan, nan, nan, nan, nan, -1, nan, nan,
            True, f"failed: {exc}", 0.0,
        )
        for regressor in regressors
        for j in range(table.n)
    ]


def run_cell(cfg: ExperimentConfig, sigma: float, color: str, skip=None, on_record=None):
    """All realizations and method combos of one (sigma, color) noise cell.

    ``skip`` holds (realization, smoother, selector, regressor) combos to
    leave out (resume support); ``on_record`` receives each completed
    combo's record list right after it is scored. Per-combo failures are
    recorded as rows with NaN metrics, never raised.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if color not in COLOR_EXPONENTS:
        raise ValueError(f"unknown noise color {color!r}")
    skip = skip or set()
    system, ext, table, xi_true, ref = _simulation(cfg)

    out = []
    for r in range(cfg.realizations):
        spec = NoiseSpec(
            sigma,
            COLOR_EXPONENTS[color],
            realization_seed(cfg.base_seed, cfg.system, sigma, color, r),
        )
        noisy = corrupt(ext.full, spec)
        for smoother in cfg.smoothers:
            for selector in cfg.selectors:
                pending = [
                    g
                    for g in cfg.regressors
                    if (r, smoother, selector, g) not in skip
                ]
                if not pending:
                    continue
                try:
                    recs = _combo_records(
                        cfg, sigma, color, r, smoother, selector, pending, noisy
                    )
                except (SolverFailure, SelectionFailure, DegenerateWindowError) as exc:
                    recs = _failure_records(
                        cfg, sigma, color, r, smoother, selector, pending, exc
                    )
                out.extend(recs)
                if on_record is not None:
                    on_record(recs)
    return out


# -- persistence ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def record_row(rec: ExperimentRecord) -> list:
    d = asdict(rec)
    return [_fmt(SCHEMA_VERSION)] + [_fmt(d[c]) for c in COLUMNS[1:]]


def csv_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / f"{cfg.system}.csv"


def _append_rows(path: Path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    with open(path, "a", encoding="utf-8") as f:
        f.write(buf.getvalue())
        f.flush()


def _ensure_csv(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not path.exists():
        _append_rows(path, [COLUMNS])
        return
    # drop a torn final line from an interrupted append
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        keep = data.rfind(b"\n") + 1
        with open(path, "rb+") as f:
            f.truncate(keep)


def read_rows(path) -> list:
    """All data rows of a results CSV as dicts with typed fields."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for raw in csv.DictReader(f):
            rec = dict(raw)
            for k in ("sigma", "smoother_lambda", "regressor_lambda", "e_X", "e_dX",
                      "e_xi", "e_pred_state", "e_pred"):
                rec[k] = float(rec[k])
            for k in ("schema_version", "realization", "state", "support_errors"):
                rec[k] = int(float(rec[k]))
            rec["excluded"] = rec["excluded"] == "1"
            rows.append(rec)
    return rows


def _done_keys(path: Path) -> set:
    """Method combos already present, keyed on the exact serialized sigma."""
    done = set()
    if not path.exists():
        return done
    with open(path, newline="", encoding="utf-8") as f:
        for raw in csv.DictReader(f):
            done.add(
                (
                    raw["sigma"],
                    raw["color"],
                    int(raw["realization"]),
                    raw["smoother"],
                    raw["selector"],
                    raw["regressor"],
                )
            )
    return done


def finalize_csv(path) -> None:
    """Rewrite with rows in canonical order so run order never shows."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    idx = {c: i for i, c in enumerate(header)}

    def key(row):
        return (
            float(row[idx["sigma"]]),
            row[idx["color"]],
            int(row[idx["realization"]]),
            row[idx["smoother"]],
            row[idx["selector"]],
            row[idx["regressor"]],
            int(row[idx["state"]]),
        )

    rows.sort(key=key)
    tmp = path.with_suffix(".tmp")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    tmp.write_text(buf.getvalue(), encoding="utf-8")
    tmp.replace(path)


def _write_manifest(cfg: ExperimentConfig) -> None:
    path = Path(cfg.out_dir) / "manifest.json"
    payload = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": asdict(cfg),
        "columns": list(COLUMNS),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cell_worker(args):
    cfg_kwargs, sigma, color, skip = args
    cfg = ExperimentConfig(**cfg_kwargs)
    return run_cell(cfg, sigma, color, skip=skip)


def run_all(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Run the whole grid, appending per-combo rows; resumable and canonical.

    Appends happen as soon as a combo is scored, so an interrupted run
    leaves a valid partial CSV that a rerun completes instead of redoing.
    The finalize pass sorts rows into canonical order, making two complete
    runs byte-identical regardless of execution order.
    """
    path = csv_path(cfg)
    _ensure_csv(path)
    _write_manifest(cfg)
    done = _done_keys(path)

    cells = [(sigma, color) for sigma in cfg.noise_levels for color in cfg.noise_colors]
    if jobs > 1 and len(cells) > 1:
        work = []
        for sigma, color in cells:
            sig = _fmt(float(sigma))
            skip = {k[2:] for k in done if k[0] == sig and k[1] == color}
            work.append((asdict(cfg), sigma, color, skip))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_cell_worker, work):
                if recs:
                    _append_rows(path, [record_row(r) for r in recs])
    else:
        for sigma, color in cells:
            sig = _fmt(float(sigma))
            skip = {k[2:] for k in done if k[0] == sig and k[1] == color}
            run_cell(
                cfg,
                sigma,
                color,
                skip=skip,
                on_record=lambda recs: _append_rows(path, [record_row(r) for r in recs]),
            )
    finalize_csv(path)
    return Path(cfg.out_dir)
