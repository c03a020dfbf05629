"""Additive measurement noise: white and power-law colored, plus SNR.

Colored series are synthesized by shaping a complex Gaussian spectrum so the
power spectral density follows 1/|f|^d (pink d=1, blue d=-1, brown d=-2) and
are rescaled to a prescribed sample standard deviation, keeping the noise
"level" comparable across colors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import TrajectoryGrid

__all__ = ["NoiseSpec", "white_noise", "colored_noise", "corrupt", "snr_db"]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level, spectral color and RNG seed for one corruption draw."""

    sigma: float
    color_exponent: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _white(rng: np.random.Generator, m: int, sigma: float) -> np.ndarray:
    return sigma * rng.standard_normal(m)


def _colored(rng: np.random.Generator, m: int, d: float, sigma: float) -> np.ndarray:
    nf = m // 2 + 1
    f = np.fft.rfftfreq(m)
    scale = np.zeros(nf)
    scale[1:] = f[1:] ** (-d / 2.0)  # PSD ~ |f|^-d, amplitude ~ f^(-d/2)
    spec = (rng.standard_normal(nf) + 1j * rng.standard_normal(nf)) * scale
    spec[0] = 0.0  # zero mean
    if m % 2 == 0:
        spec[-1] = spec[-1].real  # Nyquist bin must be real
    e = np.fft.irfft(spec, n=m)
    if sigma == 0.0:
        return np.zeros(m)
    s = e.std()
    return e * (sigma / s)


def white_noise(m: int, sigma: float, seed: int) -> np.ndarray:
    """I.i.d. N(0, sigma^2) samples, deterministic given seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return _white(np.random.default_rng(seed), m, sigma)


def colored_noise(m: int, color_exponent: float, sigma: float, seed: int) -> np.ndarray:
    """Power-law noise with PSD ~ 1/|f|^d, rescaled to sample std exactly sigma."""
    if m < 2:
        raise ValueError("m must be >= 2")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return _colored(np.random.default_rng(seed), m, color_exponent, sigma)


def corrupt(traj: TrajectoryGrid, spec) -> TrajectoryGrid:
    """Add independent noise to every state row; drops exact derivatives.

    ``spec`` is a shared :class:`NoiseSpec` (states drawn sequentially from one
    stream) or a sequence with one spec per state.
    """
    if isinstance(spec, NoiseSpec):
        rng = np.random.default_rng(spec.seed)
        rows = []
        for _ in range(traj.n):
            if spec.color_exponent == 0.0:
                rows.append(_white(rng, traj.m, spec.sigma))
            else:
                rows.append(_colored(rng, traj.m, spec.color_exponent, spec.sigma))
        E = np.vstack(rows)
    else:
        specs = list(spec)
        if len(specs) != traj.n:
            raise ValueError("need one NoiseSpec per state")
        E = np.vstack(
            [
                white_noise(traj.m, s.sigma, s.seed)
                if s.color_exponent == 0.0
                else colored_noise(traj.m, s.color_exponent, s.sigma, s.seed)
                for s in specs
            ]
        )
    return TrajectoryGrid(traj.t, traj.X + E, None)


def snr_db(traj: TrajectoryGrid, sigma: float) -> np.ndarray:
    """Per-state SNR_j = 10 log10( sum_k x_j(t_k)^2 / sigma^2 ) in decibels."""
    if sigma <= 0:
        raise ValueError("sigma must be positive for a finite SNR")
    power = np.sum(traj.X**2, axis=1)
    return 10.0 * np.log10(power / sigma**2)
