"""Spectral building blocks on the periodic phase grid.

Axis 0 is x, axis 1 is p.  The exact sub-flows used by the splitting
integrators live here so that the wave-field and density solvers share them.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .core import PhaseGrid

_WORKERS = None


def set_workers(n):
    """Thread count handed to scipy.fft (None lets scipy decide)."""
    global _WORKERS
    _WORKERS = n


def fft(a, axis):
    return sfft.fft(a, axis=axis, workers=_WORKERS)


def ifft(a, axis):
    return sfft.ifft(a, axis=axis, workers=_WORKERS)


# -- derivatives -------------------------------------------------------------


def d_dx(values, grid: PhaseGrid):
    return ifft(1j * grid.kx[:, None] * fft(values, 0), 0)


def d_dp(values, grid: PhaseGrid):
    return ifft(1j * grid.kp[None, :] * fft(values, 1), 1)


def d2_dp2(values, grid: PhaseGrid):
    return ifft(-(grid.kp_full[None, :] ** 2) * fft(values, 1), 1)


def d2_dxdp(values, grid: PhaseGrid):
    return d_dx(d_dp(values, grid), grid)


# -- exact transport -----------------------------------------------------------


def transport_x_hat(values_xhat, grid: PhaseGrid, tau: float, mass: float, hbar: float,
                    with_phase: bool = True):
    """Free streaming ``f(x - p tau/m, p)`` applied in x-Fourier space.

    With ``with_phase`` the kinetic phase ``exp(i tau p^2 / 2 m hbar)`` is
    folded in (both factors are diagonal in (k_x, p)).
    """
    p = grid.p[None, :]
    arg = -grid.kx[:, None] * p * (tau / mass)
    if with_phase:
        arg = arg + (tau / (2.0 * mass * hbar)) * p**2
    return values_xhat * np.exp(1j * arg)


def transport_p(values, grid: PhaseGrid, shift_per_x):
    """``f(x, p + shift(x))`` by a spectral shift along p."""
    mult = np.exp(1j * grid.kp[None, :] * np.asarray(shift_per_x)[:, None])
    return ifft(mult * fft(values, 1), 1)


def shift_x(values, grid: PhaseGrid, a):
    """``f(x - a, p)`` for a scalar ``a``."""
    return ifft(np.exp(-1j * grid.kx * a)[:, None] * fft(values, 0), 0)


def shift_p(values, grid: PhaseGrid, b):
    """``f(x, p - b)`` for a scalar ``b``."""
    return ifft(np.exp(-1j * grid.kp * b)[None, :] * fft(values, 1), 1)


# -- Ornstein-Uhlenbeck flow in p --------------------------------------------


@lru_cache(maxsize=32)
def _scaled_dtft(n_p: int, p_min: float, dp: float, scale: float) -> np.ndarray:
    """Matrix ``M[j, k] = dp * exp(-i kappa_k * scale * p_j)``.

    Right-multiplying samples by ``M`` evaluates their transform at the
    contracted frequencies ``scale * kappa_k``.
    """
    kappa = 2.0 * np.pi * np.fft.fftfreq(n_p, dp)
    p = p_min + dp * np.arange(n_p)
    m = dp * np.exp(-1j * np.outer(p, kappa * scale))
    m.flags.writeable = False
    return m


@lru_cache(maxsize=32)
def _inverse_phase(n_p: int, p_min: float, dp: float) -> np.ndarray:
    kappa = 2.0 * np.pi * np.fft.fftfreq(n_p, dp)
    out = np.exp(1j * kappa * p_min) / dp
    out.flags.writeable = False
    return out


def ou_flow(values, grid: PhaseGrid, tau: float, variance: float, centers=None):
    """Exact flow of ``df/dt = d/dp[(p - c) f + variance * df/dp]`` for time ``tau``.

    Each row ``values[i, :]`` relaxes towards centre ``centers[i]`` (zero when
    omitted).  In Fourier space the solution is

        f^(kappa, tau) = f^(kappa e^-tau) exp(-variance kappa^2 (1 - e^-2tau)/2
                                             - i c kappa (1 - e^-tau)),

    where ``f^`` at the contracted frequencies is evaluated directly from the
    samples.  The zero frequency is untouched, so total mass is conserved to
    rounding, and ``exp(-(p - c)^2 / 2 variance)`` is a fixed point.
    """
    if tau == 0.0:
        return np.array(values, dtype=complex)
    e1 = math.exp(-tau)
    kappa = grid.kp_full
    m = _scaled_dtft(grid.n_p, grid.p_min, grid.dp, e1)
    spec = np.asarray(values, dtype=complex) @ m
    damp = np.exp(-0.5 * variance * (1.0 - e1 * e1) * kappa**2)
    mult = (damp * _inverse_phase(grid.n_p, grid.p_min, grid.dp))[None, :]
    if centers is not None:
        mult = mult * np.exp(-1j * (1.0 - e1) * np.outer(centers, kappa))
    return ifft(spec * mult, 1)


def ou_flow_dense(values, grid: PhaseGrid, tau: float, variance: float, centers=None):
    """Reference: same flow via the matrix exponential of the spectral generator."""
    from scipy.linalg import expm

    n = grid.n_p
    eye = np.eye(n)
    d1 = ifft(1j * grid.kp[:, None] * fft(eye, 0), 0)
    d2 = ifft(-(grid.kp_full[:, None] ** 2) * fft(eye, 0), 0)
    out = np.empty(np.shape(values), dtype=complex)
    centers = np.zeros(np.shape(values)[0]) if centers is None else centers
    for i, c in enumerate(centers):
        q = np.diag(grid.p - c)
        gen = eye + q @ d1 + variance * d2
        out[i] = expm(tau * gen) @ values[i]
    return out


# -- legacy diffusion operator ---------------------------------------------


def mehler_flow(values_xhat, grid: PhaseGrid, tau: float, a: float, b: float, hbar: float):
    """Exact flow of the legacy diffusion operator for time ``tau``.

    Per x-wavenumber ``s`` the operator is an inverted harmonic oscillator in
    ``q = p - hbar s``:  ``b^2 d2/dq2 - (a/hbar)^2 q^2 + ab/hbar``.  Its
    semigroup factors exactly into Gaussian multiplier, heat kernel, Gaussian
    multiplier with hyperbolic coefficients.
    """
    if tau == 0.0:
        return np.array(values_xhat, dtype=complex)
    chi = a * b * tau / hbar
    alpha = (a / (2.0 * b * hbar)) * math.tanh(chi)
    beta = (b * hbar / (2.0 * a)) * math.sinh(2.0 * chi)
    q = grid.p[None, :] - hbar * grid.kx[:, None]
    gauss = np.exp(-alpha * q**2 + 0.5 * chi)
    heat = np.exp(-beta * grid.kp_full**2)[None, :]
    out = gauss * values_xhat
    out = ifft(heat * fft(out, 1), 1)
    return gauss * out
