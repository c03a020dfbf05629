"""Global penalized denoisers: Tikhonov, smoothing splines, l1 trend filtering.

All three minimize a least-squares data fit plus a roughness penalty built
from banded finite-difference operators, so the solvers share banded
factorizations. Degrees of freedom come from cached penalty eigenvalues for
the linear smoothers and from the jump count for the trend filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exceptions import SolverFailure

__all__ = [
    "SmootherOutput",
    "SplineModel",
    "SplineFit",
    "TrendFilterResult",
    "difference_matrix",
    "tikhonov",
    "TikhonovSmoother",
    "SmoothingSpline",
    "smoothing_spline",
    "l1_trend_filter",
    "lambda_max_trend",
    "differentiate_by_spline",
]


@dataclass
class SmootherOutput:
    """Denoised states plus derivative estimates and per-state selection info."""

    x_hat: np.ndarray
    dx_hat: np.ndarray
    lam: np.ndarray
    df: np.ndarray
    method: str


def difference_matrix(order: int, m: int) -> sp.csr_matrix:
    """Banded integer finite-difference operator of the given order.

    Built by the recursion D_(k+1) = D_(1) D_(k); order 1 rows are (-1, 1),
    order 2 rows are (1, -2, 1). Shape is (m - order, m).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if m <= order:
        raise ValueError("need m > order")

    def d1(size):
        return sp.diags([-np.ones(size - 1), np.ones(size - 1)], [0, 1], (size - 1, size))

    D = d1(m)
    for j in range(1, order):
        D = d1(m - j) @ D
    return sp.csr_matrix(D)


def _banded_upper(A: sp.spmatrix, bw: int) -> np.ndarray:
    """Upper-banded storage (for scipy *_banded solvers) of a symmetric sparse matrix."""
    A = sp.csr_matrix(A)
    m = A.shape[0]
    ab = np.zeros((bw + 1, m))
    for k in range(bw + 1):
        ab[bw - k, k:] = A.diagonal(k)
    return ab


# -- Tikhonov (Hodrick-Prescott style) ---------------------------------------


class TikhonovSmoother:
    """x_hat = (I + lambda D2' D2)^-1 y on a length-m grid.

    Values come from a pentadiagonal Cholesky solve; degrees of freedom from
    the penalty eigenvalues, computed once per length and reused.
    """

    def __init__(self, m: int):
        if m < 3:
            raise ValueError("need m >= 3")
        self.m = m
        D = difference_matrix(2, m)
        self._K = (D.T @ D).tocsr()
        self._K_diags = [self._K.diagonal(k) for k in range(3)]
        self._eigvals = None

    def solve(self, y: np.ndarray, lam: float) -> np.ndarray:
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        y = np.asarray(y, dtype=float)
        if lam == 0:
            return y.copy()
        ab = np.zeros((3, self.m))
        ab[0, 2:] = lam * self._K_diags[2]
        ab[1, 1:] = lam * self._K_diags[1]
        ab[2] = 1.0 + lam * self._K_diags[0]
        return sla.solveh_banded(ab, y)

    def penalty_eigvals(self) -> np.ndarray:
        if self._eigvals is None:
            w = np.linalg.eigvalsh(self._K.toarray())
            w[w < 1e-10 * w.max()] = 0.0  # exact null space, computed as ~eps*||K||
            self._eigvals = w
        return self._eigvals

    def df(self, lam: float) -> float:
        """trace of the smoother matrix (I + lambda K)^-1."""
        w = self.penalty_eigvals()
        return float(np.sum(1.0 / (1.0 + lam * w)))

    def lambda_grid(self, num: int = 60) -> np.ndarray:
        w = self.penalty_eigvals()
        pos = w[w > 1e-12 * w.max()]
        scale = np.exp(np.mean(np.log(pos)))
        return np.logspace(-8, 8, num) / scale


_TIK_CACHE: dict[int, TikhonovSmoother] = {}


def _tik(m: int) -> TikhonovSmoother:
    if m not in _TIK_CACHE:
        _TIK_CACHE[m] = TikhonovSmoother(m)
    return _TIK_CACHE[m]


def tikhonov(y, lam: float) -> np.ndarray:
    """One Tikhonov solve; see :class:`TikhonovSmoother`."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    return _tik(y.size).solve(y, lam)


# -- Smoothing splines --------------------------------------------------------


@dataclass
class SplineModel:
    """Natural cubic spline given by knot values and knot second derivatives."""

    knots: np.ndarray
    values: np.ndarray
    second_derivs: np.ndarray

    def _interval(self, tq):
        i = np.searchsorted(self.knots, tq, side="right") - 1
        return np.clip(i, 0, self.knots.size - 2)

    def evaluate(self, tq):
        tq = np.asarray(tq, dtype=float)
        i = self._interval(tq)
        t, x, g = self.knots, self.values, self.second_derivs
        h = t[i + 1] - t[i]
        a = (t[i + 1] - tq) / h
        b = (tq - t[i]) / h
        return a * x[i] + b * x[i + 1] + ((a**3 - a) * g[i] + (b**3 - b) * g[i + 1]) * h**2 / 6.0

    def derivative(self, tq):
        tq = np.asarray(tq, dtype=float)
        i = self._interval(tq)
        t, x, g = self.knots, self.values, self.second_derivs
        h = t[i + 1] - t[i]
        a = (t[i + 1] - tq) / h
        b = (tq - t[i]) / h
        return (x[i + 1] - x[i]) / h + ((3 * b**2 - 1) * g[i + 1] - (3 * a**2 - 1) * g[i]) * h / 6.0


@dataclass
class SplineFit:
    model: SplineModel
    x_hat: np.ndarray
    dx_hat: np.ndarray
    df: float
    lam: float


class SmoothingSpline:
    """Penalized natural cubic spline smoother on fixed knots t.

    Minimizes sum (y_i - x(t_i))^2 + lambda * integral x''(s)^2 ds. The knot
    values solve the banded system (R + lambda Q'Q) gamma = Q'y with
    x_hat = y - lambda Q gamma, where gamma are interior second derivatives.
    """

    def __init__(self, t: np.ndarray):
        t = np.asarray(t, dtype=float)
        if t.ndim != 1 or t.size < 4:
            raise ValueError("need at least 4 knots")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.t = t
        self.m = t.size
        h = np.diff(t)
        self._h = h
        m = self.m
        # Q: m x (m-2), column j has entries 1/h_j, -1/h_j - 1/h_{j+1}, 1/h_{j+1}
        rows = np.repeat(np.arange(m - 2), 3) + np.tile([0, 1, 2], m - 2)
        cols = np.repeat(np.arange(m - 2), 3)
        vals = np.empty(3 * (m - 2))
        vals[0::3] = 1.0 / h[:-1]
        vals[1::3] = -1.0 / h[:-1] - 1.0 / h[1:]
        vals[2::3] = 1.0 / h[1:]
        self.Q = sp.csc_matrix((vals, (rows, cols)), shape=(m, m - 2))
        # R: (m-2) tridiagonal with (h_i + h_{i+1})/3 diagonal, h_{i+1}/6 off-diagonal
        main = (h[:-1] + h[1:]) / 3.0
        off = h[1:-1] / 6.0
        self._R_ab = np.zeros((2, m - 2))
        self._R_ab[0, 1:] = off
        self._R_ab[1] = main
        QtQ = (self.Q.T @ self.Q).tocsr()
        self._QtQ_diags = [QtQ.diagonal(k) for k in range(3)]
        self._eigvals = None

    def _solve_gamma(self, rhs: np.ndarray, lam: float) -> np.ndarray:
        if lam == 0:
            return sla.solveh_banded(self._R_ab, rhs)
        ab = np.zeros((3, self.m - 2))
        ab[0, 2:] = lam * self._QtQ_diags[2]
        ab[1, 1:] = self._R_ab[0, 1:] + lam * self._QtQ_diags[1]
        ab[2] = self._R_ab[1] + lam * self._QtQ_diags[0]
        return sla.solveh_banded(ab, rhs)

    def fit(self, y: np.ndarray, lam: float) -> SplineFit:
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError("y must match the knot grid")
        gamma_int = self._solve_gamma(self.Q.T @ y, lam)
        x_hat = y - lam * (self.Q @ gamma_int)
        # gamma is the fitted spline's second derivative at the interior knots
        # (R gamma = Q' x_hat holds identically); natural ends are zero
        g = np.zeros(self.m)
        g[1:-1] = gamma_int
        model = SplineModel(self.t, x_hat, g)
        dx = self._derivative_at_knots(x_hat, g)
        return SplineFit(model, x_hat, dx, self.df(lam), lam)

    def _derivative_at_knots(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        h = self._h
        dx = np.empty(self.m)
        dx[:-1] = (x[1:] - x[:-1]) / h - h * (2.0 * g[:-1] + g[1:]) / 6.0
        dx[-1] = (x[-1] - x[-2]) / h[-1] + h[-1] * (g[-2] + 2.0 * g[-1]) / 6.0
        return dx

    def penalty_eigvals(self) -> np.ndarray:
        """Eigenvalues of K = Q R^-1 Q', the smoother being (I + lambda K)^-1."""
        if self._eigvals is None:
            rhs = self.Q.T.toarray()
            X = sla.solveh_banded(self._R_ab, rhs)
            K = self.Q @ X
            w = np.linalg.eigvalsh(np.asarray(K))
            w[w < 1e-10 * w.max()] = 0.0  # exact null space, computed as ~eps*||K||
            self._eigvals = w
        return self._eigvals

    def df(self, lam: float) -> float:
        if lam == 0:
            return float(self.m)
        w = self.penalty_eigvals()
        return float(np.sum(1.0 / (1.0 + lam * w)))

    def lambda_grid(self, num: int = 60) -> np.ndarray:
        w = self.penalty_eigvals()
        pos = w[w > 1e-12 * w.max()]
        scale = np.exp(np.mean(np.log(pos)))
        return np.logspace(-8, 8, num) / scale


_SPLINE_CACHE: dict[tuple, SmoothingSpline] = {}


def _spline(t: np.ndarray) -> SmoothingSpline:
    key = (t.size, float(t[0]), float(t[-1]))
    s = _SPLINE_CACHE.get(key)
    if s is None or not np.array_equal(s.t, t):
        s = SmoothingSpline(np.asarray(t, dtype=float))
        _SPLINE_CACHE[key] = s
    return s


def smoothing_spline(t, y, lam: float) -> SplineFit:
    """Fit one penalized natural cubic spline; see :class:`SmoothingSpline`."""
    return _spline(np.asarray(t, dtype=float)).fit(np.asarray(y, dtype=float), lam)


def differentiate_by_spline(t, x_hat) -> np.ndarray:
    """Derivatives at the sample times via interpolating natural cubic splines.

    Accepts a single series or a stack of rows.
    """
    t = np.asarray(t, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    s = _spline(t)
    if x_hat.ndim == 1:
        return s.fit(x_hat, 0.0).dx_hat
    return np.vstack([s.fit(row, 0.0).dx_hat for row in x_hat])


# -- l1 trend filtering --------------------------------------------------------


@dataclass
class TrendFilterResult:
    """Trend-filter solution with its dual certificate and solver diagnostics."""

    x_hat: np.ndarray
    dual: np.ndarray
    Dx_hat: np.ndarray
    lam: float
    k: int
    iterations: int
    gap: float
    warm: tuple = field(default=None, repr=False)

    @property
    def df(self) -> float:
        thresh = 1e-6 * max(1.0, float(np.max(np.abs(self.Dx_hat))) if self.Dx_hat.size else 1.0)
        return float(np.count_nonzero(np.abs(self.Dx_hat) > thresh) + self.k + 1)


class _TrendWorkspace:
    """Shared operators for one (m, k): D, its transpose and the banded Gram D D'."""

    def __init__(self, m: int, k: int):
        self.m, self.k = m, k
        self.D = difference_matrix(k + 1, m)
        self.Dt = sp.csr_matrix(self.D.T)
        self.DDt = (self.D @ self.Dt).tocsr()
        self.ddt_ab = _banded_upper(self.DDt, k + 1)
        # row norms used by the duality-gap evaluation error bound
        self.d_inf = 2.0 ** (k + 1)
        self.ddt_inf = float(np.max(np.abs(self.DDt).sum(axis=1)))

    def solve_ddt(self, b: np.ndarray, refine: int = 2) -> np.ndarray:
        # iterative refinement matters: cond(DD') ~ (m/pi)^(2k+2)
        x = sla.solveh_banded(self.ddt_ab, b)
        for _ in range(refine):
            x = x + sla.solveh_banded(self.ddt_ab, b - self.DDt @ x)
        return x


_TREND_CACHE: dict[tuple, _TrendWorkspace] = {}


def _trend_ws(m: int, k: int) -> _TrendWorkspace:
    key = (m, k)
    if key not in _TREND_CACHE:
        _TREND_CACHE[key] = _TrendWorkspace(m, k)
    return _TREND_CACHE[key]


def lambda_max_trend(y, k: int = 3) -> float:
    """Smallest lambda at which the trend filter returns the degree-k polynomial fit."""
    y = np.asarray(y, dtype=float)
    ws = _trend_ws(y.size, k)
    return float(np.max(np.abs(ws.solve_ddt(ws.D @ y))))


def l1_trend_filter(
    y,
    lam: float,
    k: int = 3,
    warm: np.ndarray | None = None,
    max_iter: int = 100000,
    gap_tol: float | None = None,
) -> TrendFilterResult:
    """Solve argmin_x 1/2 ||y - x||^2 + lambda ||D_(k+1) x||_1.

    Works on the dual box QP over nu with ||nu||_inf <= lambda via a
    primal-dual interior-point method whose Newton systems stay banded, so
    every solve is O(m). The returned ``x_hat = y - D' nu`` makes the
    complementary slackness identity checkable directly. ``warm`` is a
    previous dual vector, useful along a lambda grid.

    Termination: duality gap <= gap_tol, where the gap is taken up to its
    own float64 evaluation error. Near lambda_max the true gap of the best
    representable dual vector scales like eps*lambda^2*||DD'||, which can
    exceed an absolute tolerance; the iterate is then accepted only when
    the surrogate gap is below tolerance and complementary slackness holds
    coordinatewise at 1e-6 relative.
    """
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    m = y.size
    if m <= k + 1:
        raise ValueError("need m > k + 1")
    ws = _trend_ws(m, k)
    D, Dt = ws.D, ws.Dt

    if lam == 0:
        return TrendFilterResult(y.copy(), np.zeros(m - k - 1), D @ y, lam, k, 0, 0.0)

    # exact shortcut once the unconstrained dual is feasible: polynomial regime.
    # x_hat is then the degree-k least-squares fit, computed directly since
    # recovering it as y - D'nu would drag in the conditioning of DD'.
    c = D @ y
    nu_star = ws.solve_ddt(c)
    if np.max(np.abs(nu_star)) <= lam:
        V = np.polynomial.legendre.legvander(np.linspace(-1.0, 1.0, m), k)
        coef, *_ = np.linalg.lstsq(V, y, rcond=None)
        x = V @ coef
        Dx = D @ x
        return TrendFilterResult(x, nu_star, Dx, lam, k, 0, 0.0, warm=nu_star)

    if gap_tol is None:
        gap_tol = 1e-8 * (0.5 * float(y @ y) + 1.0)

    r = m - k - 1
    if warm is not None and warm.shape == (r,):
        nu = np.clip(warm, -(1.0 - 1e-6) * lam, (1.0 - 1e-6) * lam)
    else:
        nu = np.zeros(r)

    # primal-dual interior point on the box QP; multipliers mu1, mu2 for
    # nu <= lam and -nu <= lam
    mu1 = np.ones(r)
    mu2 = np.ones(r)
    Hnu = D @ (Dt @ nu)
    step_mu = 2.0
    t = 1.0
    it = 0

    def residual_norm(nu, Hnu, mu1, mu2, t):
        rd = Hnu - c + mu1 - mu2
        rc1 = mu1 * (lam - nu) - 1.0 / t
        rc2 = mu2 * (lam + nu) - 1.0 / t
        return np.sqrt(float(rd @ rd + rc1 @ rc1 + rc2 @ rc2))

    y_inf = float(np.max(np.abs(y)))

    def kkt_ok(Dxk, nu):
        scale = max(1.0, float(np.max(np.abs(Dxk))))
        active = np.abs(Dxk) > 1e-6 * scale
        return not active.any() or np.min(np.abs(nu[active])) >= lam * (1.0 - 1e-6)

    eps = np.finfo(float).eps
    while it < max_iter:
        xk = y - Dt @ nu
        Dxk = D @ xk
        gap = lam * float(np.sum(np.abs(Dxk))) - float(nu @ Dxk)
        f1 = lam - nu  # > 0
        f2 = lam + nu  # > 0
        eta = float(mu1 @ f1 + mu2 @ f2)  # surrogate gap, cancellation-free
        # absolute rounding-error bound for the gap as evaluated above
        floor = 2.0 * m * eps * lam * (ws.ddt_inf * float(np.max(np.abs(nu))) + ws.d_inf * y_inf)
        if gap <= gap_tol or (gap <= gap_tol + floor and eta <= gap_tol):
            if kkt_ok(Dxk, nu):
                return TrendFilterResult(
                    np.asarray(xk), nu.copy(), Dxk, lam, k, it, gap, warm=nu.copy()
                )
        it += 1
        t = max(t, step_mu * 2.0 * r / max(eta, 1e-300))
        rhs = c - Hnu + (1.0 / t) * (1.0 / f2 - 1.0 / f1)
        ab = ws.ddt_ab.copy()
        ab[-1] += mu1 / f1 + mu2 / f2
        dnu = sla.solveh_banded(ab, rhs)
        dmu1 = (1.0 / t + mu1 * dnu) / f1 - mu1
        dmu2 = (1.0 / t - mu2 * dnu) / f2 - mu2
        # longest feasible step, then backtrack on the KKT residual norm
        s = 1.0
        for v, dv in ((mu1, dmu1), (mu2, dmu2), (f1, -dnu), (f2, dnu)):
            neg = dv < 0
            if neg.any():
                s = min(s, 0.99 * float(np.min(-v[neg] / dv[neg])))
        r0 = residual_norm(nu, Hnu, mu1, mu2, t)
        Hdnu = D @ (Dt @ dnu)
        accepted = False
        for _ in range(50):
            nu_t = nu + s * dnu
            if residual_norm(nu_t, Hnu + s * Hdnu, mu1 + s * dmu1, mu2 + s * dmu2, t) <= (
                1.0 - 0.01 * s
            ) * r0:
                accepted = True
                break
            s *= 0.5
        nu = np.clip(nu + s * dnu, -(1 - 1e-14) * lam, (1 - 1e-14) * lam)
        Hnu = D @ (Dt @ nu)
        mu1 = np.maximum(mu1 + s * dmu1, 1e-300)
        mu2 = np.maximum(mu2 + s * dmu2, 1e-300)
        if not accepted and s <= 1e-12:
            break
    xk = y - Dt @ nu
    Dxk = D @ xk
    gap = lam * float(np.sum(np.abs(Dxk))) - float(nu @ Dxk)
    raise SolverFailure(
        f"trend filter did not converge (iterations={it}, gap={gap:.3e})", gap=gap
    )
