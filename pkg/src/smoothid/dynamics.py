"""Benchmark dynamical systems and fixed-step RK4 integration.

Trajectories are sampled on uniform grids. Integration runs on a finer
internal step (``substeps`` per sampling interval) so discretization error
stays far below the measurement-noise floors used downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import IntegrationBlowUp

__all__ = [
    "OdeSystem",
    "TrajectoryGrid",
    "ExtendedTrajectory",
    "BenchmarkPreset",
    "lorenz63",
    "duffing",
    "van_der_pol",
    "benchmark",
    "BENCHMARK_NAMES",
    "rhs",
    "rhs_function",
    "true_coefficient_map",
    "integrate_rk4",
    "rk4_path",
    "simulate_training_window",
]


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous ODE ``x' = f(x)`` with named parameters."""

    name: str
    dim: int
    params: dict


def lorenz63(gamma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> OdeSystem:
    """Lorenz 63 convection model (chaotic at the default parameters)."""
    return OdeSystem("lorenz63", 3, {"gamma": gamma, "rho": rho, "beta": beta})


def duffing(kappa: float = 1.0, delta: float = 0.1, epsilon: float = 5.0) -> OdeSystem:
    """Unforced Duffing oscillator with linear damping and cubic stiffness."""
    return OdeSystem("duffing", 2, {"kappa": kappa, "delta": delta, "epsilon": epsilon})


def van_der_pol(gamma: float = 2.0, mu: float = 2.0) -> OdeSystem:
    """Van der Pol oscillator with state-dependent damping ``-gamma + mu*x1^2``."""
    return OdeSystem("van_der_pol", 2, {"gamma": gamma, "mu": mu})


def rhs_function(system: OdeSystem) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``f`` with ``f(x) -> dx/dt`` for a benchmark system."""
    p = system.params
    if system.name == "lorenz63":
        g, r, b = p["gamma"], p["rho"], p["beta"]

        def f(x):
            return np.array(
                [g * (x[1] - x[0]), x[0] * (r - x[2]) - x[1], x[0] * x[1] - b * x[2]]
            )

    elif system.name == "duffing":
        k, d, e = p["kappa"], p["delta"], p["epsilon"]

        def f(x):
            return np.array([x[1], -d * x[1] - (k + e * x[0] * x[0]) * x[0]])

    elif system.name == "van_der_pol":
        g, mu = p["gamma"], p["mu"]

        def f(x):
            return np.array([x[1], -(-g + mu * x[0] * x[0]) * x[1] - x[0]])

    else:
        raise ValueError(f"unknown system {system.name!r}")
    return f


def rhs(system: OdeSystem, x) -> np.ndarray:
    """Evaluate the vector field at a single state ``x`` (length ``dim``)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise ValueError(f"state must have shape ({system.dim},), got {x.shape}")
    return rhs_function(system)(x)


def true_coefficient_map(system: OdeSystem) -> list[dict[tuple, float]]:
    """Governing equations as monomial-exponent -> coefficient maps, one per state.

    Exponent tuples follow state order, e.g. for Lorenz ``(1, 0, 1)`` is ``x1*x3``.
    """
    p = system.params
    if system.name == "lorenz63":
        g, r, b = p["gamma"], p["rho"], p["beta"]
        return [
            {(1, 0, 0): -g, (0, 1, 0): g},
            {(1, 0, 0): r, (0, 1, 0): -1.0, (1, 0, 1): -1.0},
            {(1, 1, 0): 1.0, (0, 0, 1): -b},
        ]
    if system.name == "duffing":
        k, d, e = p["kappa"], p["delta"], p["epsilon"]
        return [
            {(0, 1): 1.0},
            {(1, 0): -k, (0, 1): -d, (3, 0): -e},
        ]
    if system.name == "van_der_pol":
        g, mu = p["gamma"], p["mu"]
        return [
            {(0, 1): 1.0},
            {(1, 0): -1.0, (0, 1): g, (2, 1): -mu},
        ]
    raise ValueError(f"unknown system {system.name!r}")


@dataclass
class TrajectoryGrid:
    """States sampled on a uniform time grid; rows of ``X`` are state components."""

    t: np.ndarray
    X: np.ndarray
    dXdt: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.t.ndim != 1 or self.t.size < 2:
            raise ValueError("t must be 1-D with at least two samples")
        if self.X.ndim != 2 or self.X.shape[1] != self.t.size:
            raise ValueError("X must be (n_states, len(t))")
        dt = np.diff(self.t)
        if not np.all(np.abs(dt - dt[0]) <= 1e-12 * max(abs(dt[0]), 1.0)):
            raise ValueError("time grid must be uniform")
        if self.dXdt is not None:
            self.dXdt = np.asarray(self.dXdt, dtype=float)
            if self.dXdt.shape != self.X.shape:
                raise ValueError("dXdt must match X in shape")

    @property
    def m(self) -> int:
        return self.t.size

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass
class ExtendedTrajectory:
    """Trajectory on a margin-extended window plus the margin width in samples."""

    full: TrajectoryGrid
    margin: int

    @property
    def training(self) -> TrajectoryGrid:
        """The inner window the margin was added around."""
        sl = slice(self.margin, self.full.m - self.margin)
        d = None if self.full.dXdt is None else self.full.dXdt[:, sl]
        return TrajectoryGrid(self.full.t[sl], self.full.X[:, sl], d)

    def trim(self, X_full: np.ndarray) -> np.ndarray:
        """Cut margin columns off an array aligned with the full grid."""
        return X_full[..., self.margin : self.full.m - self.margin]


def rk4_path(
    f: Callable[[np.ndarray], np.ndarray],
    x0,
    t: np.ndarray,
    substeps: int = 10,
) -> np.ndarray:
    """Classical RK4 along the sample times ``t`` with ``substeps`` internal steps.

    ``t`` must be uniform but may run in either direction. Raises
    :class:`IntegrationBlowUp` at the first non-finite sample.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    t = np.asarray(t, dtype=float)
    x = np.array(x0, dtype=float)
    X = np.empty((x.size, t.size))
    X[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(t.size - 1):
            h = (t[i + 1] - t[i]) / substeps
            for _ in range(substeps):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationBlowUp(t[i + 1])
            X[:, i + 1] = x
    return X


def integrate_rk4(
    system: OdeSystem,
    x0,
    t0: float,
    t1: float,
    dt_sample: float,
    substeps: int = 10,
    with_derivatives: bool = True,
) -> TrajectoryGrid:
    """Integrate a benchmark system over ``[t0, t1]`` sampled every ``dt_sample``.

    The number of samples is ``round((t1 - t0)/dt_sample) + 1``; ``t1`` should be
    an integer multiple of ``dt_sample`` away from ``t0``. When
    ``with_derivatives`` is set, ``dXdt`` holds the exact vector field evaluated
    on the samples.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have shape ({system.dim},)")
    if dt_sample <= 0:
        raise ValueError("dt_sample must be positive")
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    m = int(round((t1 - t0) / dt_sample)) + 1
    t = t0 + dt_sample * np.arange(m)
    f = rhs_function(system)
    X = rk4_path(f, x0, t, substeps)
    dXdt = _field_on_samples(f, X) if with_derivatives else None
    return TrajectoryGrid(t, X, dXdt)


def _field_on_samples(f, X: np.ndarray) -> np.ndarray:
    out = np.empty_like(X)
    for i in range(X.shape[1]):
        out[:, i] = f(X[:, i])
    return out


def simulate_training_window(
    system: OdeSystem,
    x0,
    t0: float,
    t1: float,
    dt_sample: float,
    margin_frac: float = 0.05,
    substeps: int = 10,
) -> ExtendedTrajectory:
    """Simulate on a window extended by ``ceil(margin_frac * m_train)`` samples per side.

    ``x0`` is the state at ``t0``; the left extension is obtained by integrating
    backward in time from there, so the inner window is unchanged by the margin.
    """
    if not 0.0 <= margin_frac < 1.0:
        raise ValueError("margin_frac must lie in [0, 1)")
    m_train = int(round((t1 - t0) / dt_sample)) + 1
    margin = int(np.ceil(margin_frac * m_train))
    f = rhs_function(system)
    x0 = np.asarray(x0, dtype=float)

    fwd_t = t0 + dt_sample * np.arange(m_train + margin)
    X_fwd = rk4_path(f, x0, fwd_t, substeps)
    if margin > 0:
        back_t = t0 - dt_sample * np.arange(margin + 1)
        X_back = rk4_path(f, x0, back_t, substeps)
        X = np.hstack([X_back[:, :0:-1], X_fwd])
        t = t0 + dt_sample * np.arange(-margin, m_train + margin)
    else:
        X, t = X_fwd, fwd_t
    dXdt = _field_on_samples(f, X)
    return ExtendedTrajectory(TrajectoryGrid(t, X, dXdt), margin)


@dataclass(frozen=True)
class BenchmarkPreset:
    """Default experimental protocol for one benchmark system."""

    system: OdeSystem
    x0: np.ndarray
    t_train: tuple
    dt: float
    basis_degree: int
    noise_levels: tuple
    horizon: float


_PRESETS = {
    "lorenz63": dict(
        factory=lorenz63,
        x0=(-8.0, 7.0, 27.0),
        t_train=(0.0, 2.2),
        basis_degree=3,
        noise_levels=(0.001, 0.01, 0.1, 1.0),
        horizon=8.0,
    ),
    "duffing": dict(
        factory=duffing,
        x0=(1.0, 0.0),
        t_train=(0.1, 2.1),
        basis_degree=4,
        noise_levels=(0.0001, 0.001, 0.01, 0.1),
        horizon=20.0,
    ),
    "van_der_pol": dict(
        factory=van_der_pol,
        x0=(0.0, 1.0),
        t_train=(0.1, 2.1),
        basis_degree=4,
        noise_levels=(0.0001, 0.001, 0.01, 0.1),
        horizon=20.0,
    ),
}

BENCHMARK_NAMES = tuple(_PRESETS)


def benchmark(name: str, dt: float = 0.01) -> BenchmarkPreset:
    """Benchmark preset by name; ``x0`` is the nominal state at t=0."""
    try:
        p = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; pick from {BENCHMARK_NAMES}") from None
    return BenchmarkPreset(
        system=p["factory"](),
        x0=np.array(p["x0"]),
        t_train=p["t_train"],
        dt=dt,
        basis_degree=p["basis_degree"],
        noise_levels=p["noise_levels"],
        horizon=p["horizon"],
    )


def window_start_state(preset: BenchmarkPreset, substeps: int = 10) -> np.ndarray:
    """State at the start of the training window, reached from the nominal IC at t=0."""
    t0 = preset.t_train[0]
    if t0 == 0.0:
        return preset.x0.copy()
    traj = integrate_rk4(
        preset.system, preset.x0, 0.0, t0, preset.dt, substeps, with_derivatives=False
    )
    return traj.X[:, -1].copy()
