"""STLS and weighted basis-pursuit recovery of sparse dynamics.

Each state equation dx_j/dt = Phi(x) xi_j is regressed independently.
STLS alternates least squares on the active support with hard
thresholding; WBPDN iterates an l1-reweighting loop around an in-house
FISTA solver for the basis-pursuit-denoising subproblem

    min ||Phi xi - dx||_2^2 + lam ||W xi||_1,

handled through the column scaling Phi W^-1 so the inner solver only
ever sees a plain l1 penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import DesignMatrix, ExponentTable, evaluate
from .exceptions import SelectionFailure, SolverFailure
from .model_selection import ParetoPoint, pareto_corner, select_by_gcv

__all__ = [
    "StlsConfig",
    "WbpdnConfig",
    "StlsResult",
    "BpdnResult",
    "WbpdnResult",
    "SparseModel",
    "hard_threshold",
    "stls",
    "bpdn",
    "wbpdn",
    "recover_system",
    "stls_gamma_grid",
    "wbpdn_lambda_grid",
    "stls_pareto_evaluator",
    "wbpdn_pareto_evaluator",
]


def _as_array(phi) -> np.ndarray:
    if isinstance(phi, DesignMatrix):
        return phi.phi
    return np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class StlsConfig:
    gamma: float
    k_max: int = 20

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("threshold gamma must be > 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


@dataclass(frozen=True)
class WbpdnConfig:
    lam: float
    q: float = 2.0
    upsilon: float = 1e-4
    k_max: int = 8
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.q <= 0 or self.upsilon <= 0:
            raise ValueError("need q > 0 and upsilon > 0")


@dataclass
class StlsResult:
    xi: np.ndarray
    iterations: int
    empty_support: bool = False


@dataclass
class BpdnResult:
    xi: np.ndarray
    gap: float
    kkt_residual: float
    iterations: int


@dataclass
class WbpdnResult:
    xi: np.ndarray
    weight_history: list
    inner: BpdnResult


def hard_threshold(xi, gamma: float) -> np.ndarray:
    """Zero every component with |xi_i| <= gamma (strictly-greater survives)."""
    if gamma <= 0:
        raise ValueError("threshold gamma must be > 0")
    xi = np.asarray(xi, dtype=float)
    return np.where(np.abs(xi) > gamma, xi, 0.0)


def stls(phi, dx, cfg: StlsConfig) -> StlsResult:
    """Sequentially thresholded least squares on one state equation.

    Least squares is re-solved on the surviving support after each hard
    threshold until the support stops changing or ``cfg.k_max`` passes.
    Rank-deficient restrictions take the minimum-norm solution. An empty
    support signals gamma too large; the zero vector is returned flagged.
    """
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    p = A.shape[1]
    xi_full, *_ = np.linalg.lstsq(A, dx, rcond=None)
    support = np.abs(xi_full) > cfg.gamma
    xi = np.where(support, xi_full, 0.0)
    for k in range(1, cfg.k_max + 1):
        if not support.any():
            return StlsResult(np.zeros(p), k, empty_support=True)
        sub, *_ = np.linalg.lstsq(A[:, support], dx, rcond=None)
        xi = np.zeros(p)
        xi[support] = sub
        new_support = np.abs(xi) > cfg.gamma
        xi = np.where(new_support, xi, 0.0)
        if (new_support == support).all():
            return StlsResult(xi, k)
        support = new_support
    return StlsResult(xi, cfg.k_max)


def _soft(v: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def _bpdn_gap(rss: float, c, lam: float, xi) -> float:
    """Duality gap of min ||A xi - dx||^2 + lam ||xi||_1 at xi.

    The dual point is -2s r with r = dx - A xi and s the largest feasible
    scaling, s = min(1, lam/||c||_inf) for c = 2 A' r; substituting gives
    gap = (1-s)^2 ||r||^2 + lam ||xi||_1 - s c'xi, zero exactly at optimum.
    """
    cmax = float(np.max(np.abs(c))) if c.size else 0.0
    s = 1.0 if cmax <= lam else lam / cmax
    return (
        (1.0 - s) ** 2 * rss
        + lam * float(np.sum(np.abs(xi)))
        - s * float(c @ xi)
    )


def _face_solve(Gss, rhs):
    try:
        sol = np.linalg.solve(Gss, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(Gss, rhs, rcond=None)
    # one refinement pass; with badly scaled columns the first solve can
    # leave the stationarity residual well above rounding level
    sol += np.linalg.lstsq(Gss, rhs - Gss @ sol, rcond=None)[0]
    return sol


def _polish_on_support(G, b, lam: float, xi) -> np.ndarray | None:
    """Sign-restricted Newton polish on the current support.

    On the face sign(xi_S) = s the optimum solves 2 G_SS xi_S - 2 b_S +
    lam s = 0. When the face minimizer flips a sign, the segment from xi
    toward it is followed to the first zero crossing, that coordinate is
    dropped and the reduced face is re-solved; the support only shrinks,
    so this ends. Returns None when no sign-consistent point is found.
    Off-support optimality is up to the caller's gap test.
    """
    z = np.asarray(xi, dtype=float).copy()
    for _ in range(int(np.count_nonzero(xi)) + 1):
        idx = np.flatnonzero(z)
        if idx.size == 0:
            return None
        sgn = np.sign(z[idx])
        Gss = G[np.ix_(idx, idx)]
        sol = _face_solve(Gss, b[idx] - 0.5 * lam * sgn)
        if (np.sign(sol) == sgn).all():
            out = np.zeros_like(z)
            out[idx] = sol
            return out
        cur = z[idx]
        flip = np.sign(sol) != sgn
        # coordinate paths are linear, so only flipped ones cross zero
        t_cross = cur[flip] / (cur[flip] - sol[flip])
        t = float(np.min(t_cross))
        moved = cur + t * (sol - cur)
        moved[flip] = np.where(t_cross <= t * (1.0 + 1e-12), 0.0, moved[flip])
        z = np.zeros_like(z)
        z[idx] = moved
    return None


def _kkt_residual(c, lam: float, xi) -> float:
    """Worst violation of the BPDN stationarity system, relative to lam."""
    on = xi != 0.0
    dev = 0.0
    if on.any():
        dev = float(np.max(np.abs(np.abs(c[on]) - lam)))
    if (~on).any():
        dev = max(dev, float(np.max(np.maximum(np.abs(c[~on]) - lam, 0.0))))
    return dev / lam if lam > 0 else dev


def bpdn(
    phi,
    dx,
    lam: float,
    tol: float | None = None,
    max_iter: int = 100_000,
    normalize: bool = False,
    x0=None,
) -> BpdnResult:
    """Basis pursuit denoising, min ||Phi xi - dx||^2 + lam ||xi||_1.

    FISTA with backtracking line search and gradient-based adaptive
    restart, run to duality gap <= tol (default 1e-8 (||dx||^2 + 1)).
    lam = 0 reduces to ordinary least squares. With ``normalize`` the
    columns are scaled to unit l2 norm first, which turns the penalty
    into lam sum_i ||phi_i|| |xi_i| in the original coordinates; the
    returned coefficients are always unscaled.
    """
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    norms = None
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        A = A / norms
    p = A.shape[1]
    if tol is None:
        tol = 1e-8 * (float(dx @ dx) + 1.0)

    def unscale(v):
        return v if norms is None else v / norms

    if lam == 0.0:
        xi, *_ = np.linalg.lstsq(A, dx, rcond=None)
        r = dx - A @ xi
        c = 2.0 * (A.T @ r)
        return BpdnResult(unscale(xi), abs(float(c @ xi)), _kkt_residual(c, lam, xi), 0)

    # Gram form: p << m, so every iteration runs on the p x p normal
    # quantities instead of the tall design matrix
    G = A.T @ A
    b = A.T @ dx
    ydd = float(dx @ dx)

    def rss_of(v, Gv) -> float:
        return max(ydd - 2.0 * float(b @ v) + float(v @ Gv), 0.0)

    def tall_gap(v):
        # the Gram-form residual products cancel catastrophically once
        # ||r|| is small against ||dx||, flooring the measurable gap; the
        # explicit residual keeps the stop test sharp at any scale
        r = dx - A @ v
        rss = float(r @ r)
        c = 2.0 * (A.T @ r)
        return rss, c, _bpdn_gap(rss, c, lam, v)

    xi = np.zeros(p) if x0 is None else np.asarray(x0, dtype=float) * (norms if norms is not None else 1.0)
    z = xi.copy()
    theta = 1.0
    L = 2.0 * float(np.trace(G)) / p  # mean column energy; backtracking raises it
    gap = np.inf
    support = xi != 0.0
    check_now = True
    for it in range(max_iter + 1):
        if check_now or it % 10 == 0:
            check_now = False
            _, c, gap = tall_gap(xi)
            if gap <= tol:
                return BpdnResult(unscale(xi), gap, _kkt_residual(c, lam, xi), it)
        new_support = xi != 0.0
        if it and it % 5 == 0 and (new_support == support).all():
            # the proximal iterates found a stable face; jump to its
            # stationary point when that strictly improves the objective
            polished = _polish_on_support(G, b, lam, xi)
            if polished is not None:
                obj_now = rss_of(xi, G @ xi) + lam * float(np.sum(np.abs(xi)))
                obj_pol = rss_of(polished, G @ polished) + lam * float(np.sum(np.abs(polished)))
                if obj_pol < obj_now:
                    xi = polished
                    z = xi.copy()
                    theta = 1.0
                    support = xi != 0.0
                    check_now = True
                    continue  # restart the iteration on fresh products
        support = new_support
        Gz = G @ z
        fz = rss_of(z, Gz)
        g = 2.0 * (Gz - b)
        while True:
            cand = _soft(z - g / L, lam / L)
            d = cand - z
            bound = fz + float(g @ d) + 0.5 * L * float(d @ d)
            if rss_of(cand, G @ cand) <= bound + 1e-12 * (abs(bound) + 1.0):
                break
            L *= 2.0
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        momentum = (theta - 1.0) / theta_new
        if float((z - cand) @ (cand - xi)) > 0.0:  # restart: momentum points uphill
            theta_new, momentum = 1.0, 0.0
        z = cand + momentum * (cand - xi)
        xi, theta = cand, theta_new
    _, _, gap = tall_gap(xi)
    raise SolverFailure(
        f"bpdn: duality gap {gap:.3e} > tol {tol:.3e} after {max_iter} iterations",
        gap=gap,
    )


def wbpdn(
    phi,
    dx,
    cfg: WbpdnConfig,
    normalize: bool = False,
    max_iter: int = 100_000,
    tol: float | None = None,
) -> WbpdnResult:
    """Reweighted BPDN (weights 1/(|xi_i|^q + upsilon), initial weights 1).

    Each pass solves the weighted problem through the scaling
    Phi_tilde = Phi W^-1, then un-scales. Column normalization, when
    requested, is applied once up front and the weights act in the
    normalized coordinates. Stops when the relative l2 change of the
    coefficients drops below ``cfg.convergence_tol`` or after
    ``cfg.k_max`` passes; returns the coefficients, the weights used per
    pass, and the last inner-solver diagnostics.

    Inner solves default to a gap of 1e-12 (||dx||^2 + 1), tighter than
    the bare bpdn default: coefficients stalled just under a looser gap
    would pick up weight ~1/upsilon on the next pass and survive as
    spurious support.
    """
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    p = A.shape[1]
    ydd = float(dx @ dx)
    strict = tol is not None
    if tol is None:
        tol = 1e-12 * (ydd + 1.0)
    norms = np.ones(p)
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
    An = A / norms
    w = np.ones(p)
    history = []
    xi_n = np.zeros(p)
    inner = None
    for k in range(cfg.k_max):
        history.append(w.copy())
        warm = w * xi_n if k else None
        try:
            inner = bpdn(
                An / w, dx, cfg.lam, tol=tol,
                max_iter=min(max_iter, 25_000) if not strict else max_iter,
                x0=warm,
            )
        except SolverFailure:
            if strict:
                raise
            # the tight default is best effort; badly conditioned reweighted
            # faces sometimes only reach the plain bpdn guarantee
            inner = bpdn(An / w, dx, cfg.lam, max_iter=max_iter, x0=warm)
        xi_new = inner.xi / w
        change = np.linalg.norm(xi_new - xi_n) / max(np.linalg.norm(xi_n), 1e-300)
        xi_n = xi_new
        if change < cfg.convergence_tol:
            break
        w = 1.0 / (np.abs(xi_n) ** cfg.q + cfg.upsilon)
    return WbpdnResult(xi_n / norms, history, inner)


def stls_gamma_grid(phi, dx, num: int = 40) -> np.ndarray:
    """Log grid [1e-4, 1e2] x median |least-squares solution|.

    When the LS fit is numerically exact the median sits at the rounding
    floor of the dead coefficients and the grid would miss the useful
    range entirely; the dominant coefficient scale anchors it instead.
    """
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    xi_ls, *_ = np.linalg.lstsq(A, dx, rcond=None)
    med = float(np.median(np.abs(xi_ls)))
    big = float(np.max(np.abs(xi_ls))) if xi_ls.size else 0.0
    resid = float(np.linalg.norm(dx - A @ xi_ls))
    if resid <= 1e-12 * (float(np.linalg.norm(dx)) + 1.0):
        med = big
    if med == 0.0:
        med = max(big, 1.0)
    return np.geomspace(1e-4 * med, 1e2 * med, num)


def wbpdn_lambda_grid(phi, dx, normalize: bool = True, num: int = 40) -> np.ndarray:
    """Log grid [1e-6, 1] x ||2 Phi' dx||_inf in the solver's coordinates."""
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        A = A / np.where(norms > 0, norms, 1.0)
    lam_max = float(np.max(np.abs(2.0 * (A.T @ dx))))
    if lam_max == 0.0:
        raise SelectionFailure("zero response: lambda grid is degenerate")
    return np.geomspace(1e-6 * lam_max, lam_max, num)


def stls_pareto_evaluator(phi, dx) -> Callable[[float], ParetoPoint]:
    """Trade-off point for STLS: (log residual, log 1/gamma).

    The complexity axis uses the threshold inverse since the l1 norm of a
    thresholded LS solution does not vary monotonically with gamma.
    """
    A = _as_array(phi)
    dx = np.asarray(dx, dtype=float)
    floor = 1e-15 * (float(np.linalg.norm(dx)) + 1.0)

    def ev(gamma: float) -> ParetoPoint:
        res = stls(A, dx, StlsConfig(gamma))
        resid = float(np.linalg.norm(dx - A @ res.xi))
        return ParetoPoint(gamma, np.log10(max(resid, floor)), -np.log10(gamma), payload=res)

    return ev


def wbpdn_pareto_evaluator(phi_solver, dx) -> Callable[[float], ParetoPoint]:
    """Trade-off point for BPDN at reweight iteration 0: (log ||r||, log ||xi||_1).

    ``phi_solver`` must already be in the solver's coordinates (normalized
    if normalization is in effect), so the penalty read off here is the
    one the solver actually minimizes.
    """
    A = _as_array(phi_solver)
    dx = np.asarray(dx, dtype=float)
    xi_ls, *_ = np.linalg.lstsq(A, dx, rcond=None)
    r_floor = 1e-15 * (float(np.linalg.norm(dx)) + 1.0)
    p_floor = 1e-15 * (float(np.sum(np.abs(xi_ls))) + 1.0)
    warm = {"x0": None}

    def ev(lam: float) -> ParetoPoint:
        res = bpdn(A, dx, lam, x0=warm["x0"])
        warm["x0"] = res.xi
        resid = float(np.linalg.norm(dx - A @ res.xi))
        pen = float(np.sum(np.abs(res.xi)))
        return ParetoPoint(
            lam, np.log10(max(resid, r_floor)), np.log10(max(pen, p_floor)), payload=res
        )

    return ev


@dataclass
class SparseModel:
    """Recovered coefficient matrix with its dictionary and selection record."""

    table: ExponentTable
    xi: np.ndarray
    support: tuple
    selector_info: dict = field(default_factory=dict)

    @classmethod
    def build(cls, table: ExponentTable, xi: np.ndarray, selector_info=None) -> "SparseModel":
        xi = np.asarray(xi, dtype=float)
        support = tuple(tuple(int(i) for i in np.nonzero(xi[:, j])[0]) for j in range(xi.shape[1]))
        return cls(table, xi, support, selector_info or {})

    @property
    def n(self) -> int:
        return self.xi.shape[1]

    def coefficient_map(self) -> list:
        """Per-state {exponent tuple: coefficient} for the nonzero terms."""
        return [
            {self.table.exps[i]: float(self.xi[i, j]) for i in self.support[j]}
            for j in range(self.n)
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "table": json.loads(self.table.to_json()),
                "xi": [[float(v) for v in row] for row in self.xi],
                "support": [list(s) for s in self.support],
                "selector_info": self.selector_info,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SparseModel":
        obj = json.loads(text)
        table = ExponentTable.from_json(json.dumps(obj["table"]))
        xi = np.asarray(obj["xi"], dtype=float)
        support = tuple(tuple(int(i) for i in s) for s in obj["support"])
        return cls(table, xi, support, obj["selector_info"])


def _select_stls(A, dx, selector: str) -> tuple:
    grid = stls_gamma_grid(A, dx)
    info: dict = {"selector": selector}
    if selector == "pareto":
        corner = pareto_corner(stls_pareto_evaluator(A, dx), grid[0], grid[-1])
        info["low_confidence"] = corner.low_confidence
        if not corner.low_confidence:
            info["hyperparameter"] = corner.lam
            return corner.lam, info
        info["fallback"] = "gcv"  # degenerate curve: fall back to GCV
    def ev(gamma):
        res = stls(A, dx, StlsConfig(gamma))
        rss = float(np.sum((dx - A @ res.xi) ** 2))
        return A @ res.xi, float(np.count_nonzero(res.xi)), rss

    gamma, _ = select_by_gcv(ev, grid)
    info["hyperparameter"] = gamma
    return gamma, info


def _select_wbpdn(A, dx, selector: str, normalize: bool) -> tuple:
    norms = np.ones(A.shape[1])
    if normalize:
        norms = np.linalg.norm(A, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
    As = A / norms
    grid = wbpdn_lambda_grid(A, dx, normalize=normalize)
    info: dict = {"selector": selector}
    if selector == "pareto":
        corner = pareto_corner(wbpdn_pareto_evaluator(As, dx), grid[0], grid[-1])
        info["low_confidence"] = corner.low_confidence
        if not corner.low_confidence:
            info["hyperparameter"] = corner.lam
            return corner.lam, info
        info["fallback"] = "gcv"
    warm = {"x0": None}

    def ev(lam):
        res = bpdn(As, dx, lam, x0=warm["x0"])
        warm["x0"] = res.xi
        fit = As @ res.xi
        rss = float(np.sum((dx - fit) ** 2))
        return fit, float(np.count_nonzero(res.xi)), rss

    lam, _ = select_by_gcv(ev, grid)
    info["hyperparameter"] = lam
    return lam, info


def recover_system(
    x_hat,
    dx_hat,
    table: ExponentTable,
    method: str = "wbpdn",
    selector: str = "pareto",
    normalize: bool = True,
    wbpdn_defaults: WbpdnConfig | None = None,
) -> SparseModel:
    """Identify one sparse equation per state from denoised (x, dx/dt).

    Builds the dictionary once, drives the per-state hyperparameter with
    the chosen selector (Pareto corner falling back to GCV on degenerate
    curves), and assembles the coefficient matrix. Per-state failures are
    recorded in ``selector_info`` and leave a zero column rather than
    aborting the remaining states.
    """
    X = np.asarray(x_hat, dtype=float)
    dX = np.asarray(dx_hat, dtype=float)
    if X.shape != dX.shape or X.ndim != 2:
        raise ValueError("x_hat and dx_hat must be matching (n, m) arrays")
    if X.shape[0] != table.n:
        raise ValueError(f"state count {X.shape[0]} does not match table.n={table.n}")
    if method not in ("stls", "wbpdn"):
        raise ValueError(f"unknown method {method!r}")
    if selector not in ("gcv", "pareto"):
        raise ValueError(f"unknown selector {selector!r}")
    A = evaluate(table, X).phi
    n = table.n
    xi = np.zeros((table.p, n))
    info: dict = {}
    for j in range(n):
        dxj = dX[j]
        label = f"x{j + 1}"
        if not dxj.any():
            info[label] = {"method": method, "selector": selector, "status": "zero response"}
            continue
        try:
            if method == "stls":
                gamma, sel = _select_stls(A, dxj, selector)
                res = stls(A, dxj, StlsConfig(gamma))
                col = res.xi
                if res.empty_support:
                    sel["empty_support"] = True
            else:
                lam, sel = _select_wbpdn(A, dxj, selector, normalize)
                cfg = wbpdn_defaults or WbpdnConfig(lam)
                if cfg.lam != lam:
                    cfg = WbpdnConfig(lam, cfg.q, cfg.upsilon, cfg.k_max, cfg.convergence_tol)
                col = wbpdn(A, dxj, cfg, normalize=normalize).xi
            status = "ok"
        except (SolverFailure, SelectionFailure) as exc:
            col, sel, status = np.zeros(table.p), {}, f"failed: {exc}"
        xi[:, j] = col
        info[label] = {"method": method, "status": status, **sel}
    return SparseModel.build(table, xi, info)
