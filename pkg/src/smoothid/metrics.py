"""Error measures, forward prediction, and exclusion-aware aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import ExponentTable
from .dynamics import TrajectoryGrid, rk4_path
from .exceptions import AggregationFailure, IntegrationBlowUp
from .sparse_regression import SparseModel

__all__ = [
    "ErrorReport",
    "PredictionOutcome",
    "AggregateSummary",
    "relative_frobenius",
    "coefficient_error",
    "coefficient_vector",
    "support_mismatch",
    "model_rhs",
    "predict",
    "aggregate",
]


def relative_frobenius(est, truth) -> float:
    """``||est - truth||_F / ||truth||_F``; also the relative l2 error for vectors."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        raise ValueError("truth has zero norm")
    return float(np.linalg.norm(est - truth) / denom)


def coefficient_error(xi_hat, xi_true) -> float:
    """Relative l2 coefficient error for one state's equation.

    Both vectors must live on the same exponent table; align with
    :func:`coefficient_vector` first when the reference comes as a
    {exponents: value} map. A state whose true equation is identically
    zero has no defined error (use :func:`support_mismatch` there).
    """
    xi_hat = np.asarray(xi_hat, dtype=float)
    xi_true = np.asarray(xi_true, dtype=float)
    if xi_hat.ndim != 1 or xi_hat.shape != xi_true.shape:
        raise ValueError("coefficient vectors must be 1-D with equal length")
    denom = np.linalg.norm(xi_true)
    if denom == 0.0:
        raise ValueError("true coefficient vector is zero; error undefined")
    return float(np.linalg.norm(xi_hat - xi_true) / denom)


def coefficient_vector(table: ExponentTable, terms: dict) -> np.ndarray:
    """Place a {exponent tuple: value} map onto the table's column order."""
    xi = np.zeros(table.p)
    for exps, value in terms.items():
        try:
            xi[table.index_of(exps)] = float(value)
        except KeyError:
            raise ValueError(f"term {tuple(exps)} not representable at degree {table.degree}") from None
    return xi


def support_mismatch(xi_hat, xi_true) -> int:
    """Number of dictionary columns whose active/inactive status disagrees."""
    xi_hat = np.asarray(xi_hat, dtype=float)
    xi_true = np.asarray(xi_true, dtype=float)
    if xi_hat.shape != xi_true.shape:
        raise ValueError("coefficient vectors must have equal shape")
    return int(np.count_nonzero((xi_hat != 0) != (xi_true != 0)))


def model_rhs(model: SparseModel):
    """Vector field x -> Xi^T phi(x) of a recovered model, for pointwise use."""
    E = np.asarray(model.table.exps, dtype=float)
    xi = np.asarray(model.xi, dtype=float)

    def f(x):
        phi = np.prod(x[np.newaxis, :] ** E, axis=1)
        return xi.T @ phi

    return f


@dataclass(frozen=True)
class PredictionOutcome:
    """Forward simulation of a recovered model, or the blow-up flag.

    Blow-up is a value: ``traj`` is None, ``t_blow_up`` marks the first
    sample that was non-finite or exceeded ``threshold`` in magnitude.
    """

    traj: TrajectoryGrid | None
    blew_up: bool
    t_blow_up: float | None = None
    threshold: float = np.inf

    @property
    def ok(self) -> bool:
        return not self.blew_up


def predict(
    model: SparseModel,
    x0,
    t_span,
    dt: float,
    training_amplitude: float | None = None,
    substeps: int = 10,
) -> PredictionOutcome:
    """Integrate ``xdot = Xi^T phi(x)`` over ``t_span`` sampled every ``dt``.

    The integration runs through :func:`dynamics.rk4_path`, the same
    routine the benchmark trajectories use. A sample whose magnitude
    exceeds 1e3 times the training amplitude (default: ``max|x0|``) or
    goes non-finite marks the model as blown up.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},)")
    t0, t1 = (float(v) for v in t_span)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    m = int(round((t1 - t0) / dt)) + 1
    t = t0 + dt * np.arange(m)

    amp = float(np.max(np.abs(x0))) if training_amplitude is None else float(training_amplitude)
    if amp < 0:
        raise ValueError("training_amplitude must be nonnegative")
    threshold = 1e3 * amp

    try:
        X = rk4_path(model_rhs(model), x0, t, substeps=substeps)
    except IntegrationBlowUp as exc:
        return PredictionOutcome(None, True, exc.t, threshold)
    over = np.abs(X) > threshold
    if over.any():
        first = int(np.argmax(over.any(axis=0)))
        return PredictionOutcome(None, True, float(t[first]), threshold)
    return PredictionOutcome(TrajectoryGrid(t, X), False, None, threshold)


@dataclass
class ErrorReport:
    """One realization's error measures for a single pipeline cell.

    ``e_pred`` aggregates the prediction error over all states;
    ``e_pred_states`` holds the per-state values. Excluded realizations
    (blown-up predictions) carry neither.
    """

    e_X: float
    e_dX: float
    e_xi: tuple
    e_pred: float | None = None
    e_pred_states: tuple | None = None
    excluded: bool = False
    reason: str = ""

    def __post_init__(self):
        self.e_X = float(self.e_X)
        self.e_dX = float(self.e_dX)
        self.e_xi = tuple(float(v) for v in self.e_xi)
        if self.e_pred_states is not None:
            self.e_pred_states = tuple(float(v) for v in self.e_pred_states)
        if self.excluded and (self.e_pred is not None or self.e_pred_states is not None):
            raise ValueError("excluded records must not carry prediction errors")
        for v in (self.e_X, self.e_dX, *self.e_xi):
            if v < 0:
                raise ValueError("error measures must be nonnegative")
        if self.e_pred is not None and self.e_pred < 0:
            raise ValueError("error measures must be nonnegative")


@dataclass(frozen=True)
class AggregateSummary:
    """Mean/std per metric over the non-excluded records of one cell."""

    cell: str
    included: int
    excluded: int
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)


def aggregate(records, cell: str = "") -> AggregateSummary:
    """Mean and population std over non-excluded records, counting exclusions."""
    records = list(records)
    kept = [r for r in records if not r.excluded]
    if not kept:
        raise AggregationFailure(cell or "(unnamed cell)")

    mean: dict = {}
    std: dict = {}
    for name in ("e_X", "e_dX"):
        vals = np.array([getattr(r, name) for r in kept])
        mean[name] = float(vals.mean())
        std[name] = float(vals.std())
    exi = np.array([r.e_xi for r in kept])
    mean["e_xi"] = exi.mean(axis=0)
    std["e_xi"] = exi.std(axis=0)
    preds = np.array([r.e_pred for r in kept if r.e_pred is not None])
    if preds.size:
        mean["e_pred"] = float(preds.mean())
        std["e_pred"] = float(preds.std())
    return AggregateSummary(cell, len(kept), len(records) - len(kept), mean, std)
