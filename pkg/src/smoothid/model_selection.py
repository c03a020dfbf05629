"""Hyperparameter selection: GCV and the Pareto-corner criterion.

GCV works on any smoother exposing an effective degrees-of-freedom count.
The corner criterion walks the (log residual, log penalty) trade-off curve
with a golden-section search driven by Menger curvature, in coordinates
normalized to [0,1] so the located corner does not depend on axis scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .exceptions import DegenerateWindowError, SelectionFailure, SolverFailure
from .local_smoothers import Kernel, LocalFitConfig, bandwidth_grid, smooth_series

__all__ = [
    "GcvCurve",
    "ParetoPoint",
    "CornerResult",
    "gcv_value",
    "degrees_of_freedom",
    "select_by_gcv",
    "select_bandwidth_gcv",
    "menger_curvature",
    "pareto_corner",
]

_FAILURES = (SolverFailure, DegenerateWindowError, SelectionFailure)


@dataclass
class GcvCurve:
    lambdas: np.ndarray
    gcv_values: np.ndarray
    df_values: np.ndarray


@dataclass
class ParetoPoint:
    lam: float
    log_residual: float
    log_penalty: float
    payload: Any = field(default=None, repr=False)


@dataclass
class CornerResult:
    lam: float
    point: ParetoPoint
    trace: list
    max_curvature: float
    low_confidence: bool


def gcv_value(residual_ss: float, m: int, df: float) -> float:
    """GCV(lambda) = m ||y - x_hat||^2 / (m - df)^2."""
    if residual_ss < 0:
        raise ValueError("residual sum of squares must be >= 0")
    if not 0 <= df < m:
        raise ValueError(f"need 0 <= df < m, got df={df}, m={m}")
    return m * residual_ss / (m - df) ** 2


def degrees_of_freedom(method: str, artifact, lam: float | None = None) -> float:
    """Effective degrees of freedom per method.

    Linear smoothers report the smoother-matrix trace, sparse solutions the
    nonzero count, the trend filter its kink count plus k+1.
    """
    if method in ("tikhonov", "spline"):
        return float(artifact.df(lam))
    if method == "trend":
        return float(artifact.df)
    if method in ("savgol", "lowess", "tricube", "local"):
        return float(artifact.df)
    if method in ("stls", "wbpdn", "sparse"):
        return float(np.count_nonzero(np.asarray(artifact)))
    raise ValueError(f"unknown method {method!r}")


def _truncation_mask(lambdas: np.ndarray, gcv: np.ndarray) -> np.ndarray:
    """Drop the lowest lambda decade when GCV oscillates there.

    Oscillation means more than 3 slope sign changes among the decade's
    finite values; the remedy for trend-filter GCV curves whose small-lambda
    region is irregular.
    """
    keep = np.ones(lambdas.size, dtype=bool)
    lo = np.min(lambdas)
    low = lambdas < 10.0 * lo
    if low.all():
        return keep
    g = gcv[low]
    g = g[np.isfinite(g)]
    if g.size < 3:
        return keep
    s = np.sign(np.diff(g))
    s = s[s != 0]
    if s.size >= 2 and np.count_nonzero(s[1:] != s[:-1]) > 3:
        keep = ~low
    return keep


def select_by_gcv(
    evaluator: Callable[[float], tuple], grid, truncate_low_lambda: bool = False
):
    """Minimize GCV over the grid; returns (lambda*, GcvCurve).

    ``evaluator`` maps lambda to (x_hat, df, residual_ss). Probe failures
    count as +inf; ties within 1e-12 of the curve scale resolve to the
    largest lambda (the smoothest model). Residuals below float precision
    of the fitted scale (rss <= 1e-20 ||x_hat||^2) count as zero provided
    df <= m - 1, i.e. a parsimonious fit reproducing the data to solver
    rounding; an interpolating fit (df -> m) reaching the same rss is
    overfit, not exact, so it keeps its raw value. A best value of exactly
    zero ties only with other exact zeros; mixing in merely-small values
    there would trade an exact reproduction for a worse one.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise SelectionFailure("empty hyperparameter grid")
    gcv = np.full(grid.size, np.inf)
    dfs = np.full(grid.size, np.nan)
    for i, lam in enumerate(grid):
        try:
            x_hat, df, rss = evaluator(float(lam))
        except _FAILURES:
            continue
        x_hat = np.asarray(x_hat)
        m = x_hat.shape[-1]
        dfs[i] = df
        rss = float(rss)
        if df <= m - 1 and rss <= 1e-20 * float(np.sum(x_hat * x_hat)):
            rss = 0.0
        if df < m:
            gcv[i] = gcv_value(rss, m, float(df))
    if not np.isfinite(gcv).any():
        raise SelectionFailure("every hyperparameter on the grid failed")
    keep = _truncation_mask(grid, gcv) if truncate_low_lambda else np.ones(grid.size, bool)
    if not np.isfinite(gcv[keep]).any():
        keep = np.ones(grid.size, bool)
    masked = np.where(keep, gcv, np.inf)
    best = np.min(masked)
    scale = np.max(gcv[np.isfinite(gcv)])
    if best == 0.0:
        ties = masked == 0.0
    else:
        ties = masked <= best + 1e-12 * max(scale, 1e-300)
    lam_star = float(np.max(grid[ties]))
    return lam_star, GcvCurve(grid, gcv, dfs)


def select_bandwidth_gcv(
    t,
    y,
    kernel: Kernel = Kernel.EPANECHNIKOV,
    h_grid=None,
    degree: int = 2,
):
    """GCV over global bandwidths for the local smoothers."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if h_grid is None:
        h_grid = bandwidth_grid(t, degree)

    def evaluator(h):
        out = smooth_series(t, y, LocalFitConfig(h, kernel=kernel, degree=degree))
        rss = float(np.sum((y - out.x_hat) ** 2))
        return out.x_hat, out.df, rss

    return select_by_gcv(evaluator, h_grid)


def menger_curvature(p1, p2, p3) -> float:
    """Signed inverse circumradius of the triangle p1 p2 p3.

    Positive when the traversal bends toward the origin side (the L-curve
    corner orientation); zero for collinear points.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    p3 = np.asarray(p3, dtype=float)
    a = np.linalg.norm(p2 - p1)
    b = np.linalg.norm(p3 - p2)
    c = np.linalg.norm(p3 - p1)
    if min(a, b, c) == 0.0:
        raise ValueError("points must be distinct")
    cross = (p2[0] - p1[0]) * (p3[1] - p2[1]) - (p2[1] - p1[1]) * (p3[0] - p2[0])
    return 2.0 * cross / (a * b * c)


def _safe_curvature(p1, p2, p3) -> float:
    try:
        return menger_curvature(p1, p2, p3)
    except ValueError:
        return 0.0


_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def pareto_corner(
    evaluator: Callable[[float], ParetoPoint],
    lam_lo: float,
    lam_hi: float,
    tol: float = 1e-2,
    curvature_floor: float = 1e-3,
) -> CornerResult:
    """Golden-section Menger-curvature corner search on log lambda.

    Probes shrink the bracket until its log-width falls below ``tol`` times
    the initial width; the answer is the maximum-curvature visited point in
    [0,1]-normalized (log residual, log penalty) coordinates. A curve with
    no convex corner (max curvature below ``curvature_floor``) returns the
    upper endpoint flagged low-confidence.
    """
    if not (0.0 < lam_lo < lam_hi):
        raise ValueError("need 0 < lam_lo < lam_hi")
    visited: dict[float, ParetoPoint] = {}

    def probe(x: float) -> ParetoPoint:
        lam = 10.0**x
        if x not in visited:
            try:
                visited[x] = evaluator(lam)
            except _FAILURES as exc:
                trace = [visited[k] for k in sorted(visited)]
                raise SelectionFailure(
                    f"corner probe failed at lambda={lam:.6g}: {exc}", trace=trace
                ) from exc
        return visited[x]

    def normalized(points):
        r = np.array([p.log_residual for p in points])
        q = np.array([p.log_penalty for p in points])
        lo_r, lo_q = r.min(), q.min()
        den_r = max(r.max() - lo_r, 1e-300)
        den_q = max(q.max() - lo_q, 1e-300)
        return np.column_stack(((r - lo_r) / den_r, (q - lo_q) / den_q))

    x1, x4 = np.log10(lam_lo), np.log10(lam_hi)
    width0 = x4 - x1
    x2 = x4 - _INV_PHI * (x4 - x1)
    x3 = x1 + _INV_PHI * (x4 - x1)
    for x in (x1, x2, x3, x4):
        probe(x)

    while (x4 - x1) > tol * width0:
        pts = [visited[k] for k in sorted(visited)]
        coords = {k: c for k, c in zip(sorted(visited), normalized(pts))}
        k2 = _safe_curvature(coords[x1], coords[x2], coords[x3])
        k3 = _safe_curvature(coords[x2], coords[x3], coords[x4])
        if k2 >= k3:
            x4, x3 = x3, x2
            x2 = x4 - _INV_PHI * (x4 - x1)
            probe(x2)
        else:
            x1, x2 = x2, x3
            x3 = x1 + _INV_PHI * (x4 - x1)
            probe(x3)

    keys = sorted(visited)
    pts = [visited[k] for k in keys]
    coords = normalized(pts)
    best_i, best_k = None, -np.inf
    for i in range(1, len(keys) - 1):
        k = _safe_curvature(coords[i - 1], coords[i], coords[i + 1])
        if k > best_k:
            best_i, best_k = i, k
    if best_i is None or best_k < curvature_floor:
        point = pts[-1]
        return CornerResult(point.lam, point, pts, max(best_k, 0.0), True)
    point = pts[best_i]
    return CornerResult(point.lam, point, pts, best_k, False)
