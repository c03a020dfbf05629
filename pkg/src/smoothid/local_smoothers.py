"""Local polynomial regression denoisers: Savitzky-Golay and LOWESS.

Both are the same weighted-least-squares engine with different compactly
supported kernels. Every sample gets its own fit over the points lying
inside [t0 - h, t0 + h]; boundary windows simply hold fewer points, no
padding or reflection. The local basis is scaled to u = (t - t0)/h so the
normal matrices stay well conditioned at small bandwidths.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateWindowError
from .global_smoothers import SmootherOutput

__all__ = [
    "Kernel",
    "LocalFitConfig",
    "kernel_weight",
    "local_fit_at",
    "smooth_series",
    "bandwidth_grid",
]


class Kernel(enum.Enum):
    RECTANGULAR = "rectangular"
    TRICUBE = "tricube"
    EPANECHNIKOV = "epanechnikov"


# method tags used in result tables
METHOD_TAGS = {
    Kernel.RECTANGULAR: "savgol",
    Kernel.EPANECHNIKOV: "lowess",
    Kernel.TRICUBE: "tricube",
}


def _profile(kind: Kernel, u: np.ndarray) -> np.ndarray:
    """Kernel profile D(u) on u = |t - t0|/h, zero outside |u| <= 1."""
    inside = u <= 1.0
    if kind is Kernel.RECTANGULAR:
        return inside.astype(float)
    if kind is Kernel.TRICUBE:
        return np.where(inside, (1.0 - np.minimum(u, 1.0) ** 3) ** 3, 0.0)
    if kind is Kernel.EPANECHNIKOV:
        return np.where(inside, 0.75 * (1.0 - np.minimum(u, 1.0) ** 2), 0.0)
    raise ValueError(f"unknown kernel {kind!r}")


def kernel_weight(kind: Kernel, t0: float, t, h: float):
    """K_h(t0, t) = D(|t - t0| / h)."""
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    u = np.abs(np.asarray(t, dtype=float) - t0) / h
    return _profile(kind, u)


@dataclass(frozen=True)
class LocalFitConfig:
    bandwidth: float
    kernel: Kernel = Kernel.EPANECHNIKOV
    degree: int = 2

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.degree < 1:
            raise ValueError("degree must be >= 1 (a derivative is required)")

    @property
    def min_points(self) -> int:
        return self.degree + 2

    @property
    def method(self) -> str:
        return METHOD_TAGS[self.kernel]


def local_fit_at(t0: float, t, y, cfg: LocalFitConfig):
    """Weighted LS fit of a degree-d polynomial around t0.

    Returns (x_hat(t0), dx_hat(t0), weights-over-all-samples).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    w = kernel_weight(cfg.kernel, t0, t, cfg.bandwidth)
    idx = np.flatnonzero(w > 0)
    if idx.size < cfg.min_points:
        raise DegenerateWindowError(t0, idx.size, cfg.min_points)
    u = (t[idx] - t0) / cfg.bandwidth
    B = np.vander(u, cfg.degree + 1, increasing=True)
    Bw = B * w[idx, None]
    theta = np.linalg.solve(B.T @ Bw, Bw.T @ y[idx])
    return float(theta[0]), float(theta[1] / cfg.bandwidth), w


_DT_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _offsets(t: np.ndarray, max_pow: int) -> np.ndarray:
    """Stack of (t_j - t_i)^q matrices for q = 0..max_pow, cached per grid."""
    key = (t.size, float(t[0]), float(t[-1]), max_pow)
    hit = _DT_CACHE.get(key)
    if hit is not None and np.array_equal(hit[0], t):
        return hit[1]
    DT = t[None, :] - t[:, None]
    pw = np.empty((max_pow + 1,) + DT.shape)
    pw[0] = 1.0
    for q in range(1, max_pow + 1):
        pw[q] = pw[q - 1] * DT
    _DT_CACHE[key] = (t.copy(), pw)
    return pw


def _smooth_one(t: np.ndarray, y: np.ndarray, cfg: LocalFitConfig):
    m = t.size
    d = cfg.degree
    h = cfg.bandwidth
    pw = _offsets(t, 2 * d)
    W = _profile(cfg.kernel, np.abs(pw[1]) / h)
    counts = np.count_nonzero(W > 0, axis=1)
    if counts.min() < cfg.min_points:
        i = int(np.argmin(counts))
        raise DegenerateWindowError(float(t[i]), int(counts[i]), cfg.min_points)
    # A[i] holds the moments M_q(i) = sum_j w_ij u_ij^q of the scaled basis
    hq = h ** np.arange(2 * d + 1)
    M = np.einsum("ij,qij->qi", W, pw) / hq[:, None]
    A = np.empty((m, d + 1, d + 1))
    for k in range(d + 1):
        for l in range(d + 1):
            A[:, k, l] = M[k + l]
    rhs = np.zeros((m, d + 1, 2))
    for k in range(d + 1):
        rhs[:, k, 0] = (W * pw[k]) @ y / hq[k]
    rhs[:, 0, 1] = 1.0  # second system gives the hat-matrix row through A^-1 e1
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:  # coincident points inside a window
        raise DegenerateWindowError(float(t[0]), int(counts.min()), cfg.min_points) from exc
    x_hat = sol[:, 0, 0]
    dx_hat = sol[:, 1, 0] / h
    hat_diag = sol[:, 0, 1] * np.diagonal(W)
    bad = ~(np.isfinite(x_hat) & np.isfinite(dx_hat))
    if bad.any():
        i = int(np.argmax(bad))
        raise DegenerateWindowError(float(t[i]), int(counts[i]), cfg.min_points)
    return x_hat, dx_hat, float(np.sum(hat_diag))


def smooth_series(t, y, cfg: LocalFitConfig) -> SmootherOutput:
    """Apply the local fit at every sample; y may be one series or a stack."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    rows = y[None, :] if y.ndim == 1 else y
    xs, dxs, dfs = [], [], []
    for row in rows:
        x_hat, dx_hat, df = _smooth_one(t, row, cfg)
        xs.append(x_hat)
        dxs.append(dx_hat)
        dfs.append(df)
    x = np.vstack(xs)
    dx = np.vstack(dxs)
    if y.ndim == 1:
        x, dx = x[0], dx[0]
    return SmootherOutput(
        x_hat=x,
        dx_hat=dx,
        lam=np.full(len(dfs), cfg.bandwidth) if y.ndim > 1 else cfg.bandwidth,
        df=np.asarray(dfs) if y.ndim > 1 else dfs[0],
        method=cfg.method,
    )


def bandwidth_grid(t, degree: int = 2, num: int = 60) -> np.ndarray:
    """Log-spaced bandwidths from the smallest admissible window to the full range."""
    t = np.asarray(t, dtype=float)
    dt = float(np.min(np.diff(t)))
    lo = (degree + 2) * dt
    hi = float(t[-1] - t[0])
    return np.geomspace(lo, hi, num)
