"""Maps between configuration wave functions, phase-space wave fields and
phase-space distributions.

The stationary subspace of the momentum-diffusion operator is spanned, per
x-wavenumber ``s``, by ``exp(i s x) * exp(-(p - hbar s)^2 / (2 kT m))``.
:func:`lift_to_phase_space` and :func:`project_stationary` move between that
subspace and configuration space.  Both use per-mode profiles normalised on
the p-grid, which makes the lift an isometry.
"""

from __future__ import annotations

import math
import warnings
from typing import Optional

import numpy as np

from . import _spectral as S
from .core import (
    ConfigWavefunction,
    DensityField,
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    ResolutionWarning,
    ValidationError,
    WaveField,
    eval_potential,
)

__all__ = [
    "stationary_profiles",
    "lift_to_phase_space",
    "project_stationary",
    "StationaryProjection",
    "wigner",
    "husimi",
    "galileo_boost",
    "schrodinger_eigenstates",
    "gaussian_wavefunction",
    "phase_space_gaussian",
    "phase_aligned_distance",
]


def _variance(params: PhysicalParams, variance: Optional[float]) -> float:
    v = params.momentum_variance if variance is None else float(variance)
    if not v > 0:
        raise ValidationError("stationary momentum variance kT*m must be > 0 (kT = 0 is degenerate)")
    return v


def stationary_profiles(grid: PhaseGrid, hbar: float, variance: float) -> np.ndarray:
    """Row ``s`` holds the unit-norm p-profile of the stationary mode with wavenumber ``kx[s]``."""
    q2 = (grid.p[None, :] - hbar * grid.kx[:, None]) ** 2
    # shift the exponent per row so profiles centred outside the p-box do not underflow
    g = np.exp(-(q2 - q2.min(axis=1, keepdims=True)) / (2.0 * variance))
    norms = np.sqrt(np.sum(g**2, axis=1) * grid.dp)
    return g / norms[:, None]


def lift_to_phase_space(psi: ConfigWavefunction, params: PhysicalParams, grid: PhaseGrid,
                        variance: Optional[float] = None) -> WaveField:
    """Embed ``psi`` into the stationary subspace, normalised to unit L2 norm.

    ``variance`` overrides the momentum width ``kT*m`` (the legacy diffusion
    model uses ``hbar*b/a``).
    """
    if not psi.matches(grid):
        raise ValidationError("wave function x-axis does not match the grid")
    var = _variance(params, variance)
    prof = stationary_profiles(grid, params.hbar, var)
    phi_hat = np.fft.fft(psi.values)[:, None] * prof
    phi = np.fft.ifft(phi_hat, axis=0)
    out = WaveField(grid, phi, psi.time)
    n = out.norm()
    if n == 0:
        raise ValidationError("cannot lift a zero wave function")
    return out.with_values(phi / n)


class StationaryProjection(tuple):
    """``(projected, psi, residual)``; ``psi`` has the norm of ``projected``."""

    __slots__ = ()

    def __new__(cls, projected, psi, residual):
        return super().__new__(cls, (projected, psi, residual))

    projected = property(lambda self: self[0])
    psi = property(lambda self: self[1])
    residual = property(lambda self: self[2])


def project_stationary(field: WaveField, params: PhysicalParams,
                       variance: Optional[float] = None) -> StationaryProjection:
    """Orthogonal projection onto the stationary subspace, mode by mode."""
    grid = field.grid
    var = _variance(params, variance)
    total = field.norm()
    if total == 0:
        raise ValidationError("cannot project a zero-norm field")
    prof = stationary_profiles(grid, params.hbar, var)
    phi_hat = np.fft.fft(field.values, axis=0)
    coeff = np.sum(prof * phi_hat, axis=1) * grid.dp
    proj = np.fft.ifft(coeff[:, None] * prof, axis=0)
    projected = field.with_values(proj)
    psi = ConfigWavefunction.on(grid, np.fft.ifft(coeff), field.time)
    residual = (field - projected).norm() / total
    return StationaryProjection(projected, psi, residual)


# ---------------------------------------------------------------------------
# quasi-distributions
# ---------------------------------------------------------------------------


def _upsample2(values: np.ndarray) -> np.ndarray:
    n = values.size
    c = np.fft.fft(values)
    out = np.zeros(2 * n, dtype=complex)
    h = n // 2
    out[:h] = c[:h]
    out[-h:] = c[-h:]
    if n % 2 == 0:
        out[h] = 0.5 * c[h]
        out[-h] = 0.5 * c[h]
    else:
        out[h] = c[h]
    return np.fft.ifft(out) * 2.0


def wigner(psi: ConfigWavefunction, params: PhysicalParams, target: PhaseGrid,
           return_imag: bool = False):
    """Wigner quasi-distribution of ``psi`` on ``target``.

    The lag integral is taken on the half-step lattice of a spectrally
    upsampled copy of ``psi``, which is taken to vanish outside the x-box.
    The result is periodic in p with period ``2 pi hbar / dx``.  With ``return_imag`` the largest imaginary residue
    (relative to the largest value) is returned as well.
    """
    if not psi.matches(target):
        raise ValidationError("wave function x-axis does not match the target grid")
    hbar = params.hbar
    n = psi.n_x
    dx = psi.dx
    period = 2.0 * math.pi * hbar / dx
    if target.p_length > period * (1.0 + 1e-12):
        warnings.warn(
            f"p-extent {target.p_length:.4g} exceeds the Wigner period {period:.4g}; "
            "the distribution will alias",
            ResolutionWarning,
            stacklevel=2,
        )
    fine = _upsample2(psi.values)
    m = 2 * n
    j = np.arange(-n, n)
    rows = 2 * np.arange(n)[:, None]
    hi, lo = rows + j[None, :], rows - j[None, :]
    # psi is treated as zero outside the box so periodic images do not pair up
    inside = (hi >= 0) & (hi < m) & (lo >= 0) & (lo < m)
    kern = np.where(inside, np.conj(fine[hi % m]) * fine[lo % m], 0.0)
    y = j * (dx / 2.0)
    phase = np.exp(2j * np.outer(y, target.p) / hbar)
    w = (kern @ phase) * (dx / 2.0) / (math.pi * hbar)
    peak = np.abs(w).max()
    imag = float(np.abs(w.imag).max() / peak) if peak > 0 else 0.0
    if return_imag:
        return w.real, imag
    return w.real


def husimi(psi: ConfigWavefunction, params: PhysicalParams, sigma_x: Optional[float],
           target: PhaseGrid) -> DensityField:
    """Wigner distribution smoothed by a minimum-uncertainty Gaussian.

    The x-deviation is ``sigma_x`` (default ``hbar*a/(2b)`` when both legacy
    amplitudes are set) and the p-deviation is ``hbar / (2 sigma_x)``.
    """
    if sigma_x is None:
        if params.a > 0 and params.b > 0:
            sigma_x = params.hbar * params.a / (2.0 * params.b)
        else:
            raise ValidationError("sigma_x is required when the diffusion amplitudes a, b are not set")
    if not sigma_x > 0:
        raise ValidationError("sigma_x must be > 0")
    sigma_p = params.hbar / (2.0 * sigma_x)
    w = wigner(psi, params, target)
    kernel = np.exp(-0.5 * (sigma_x**2 * target.kx_full[:, None] ** 2
                            + sigma_p**2 * target.kp_full[None, :] ** 2))
    q = np.fft.ifft2(kernel * np.fft.fft2(w)).real
    return DensityField(target, q, psi.time)


# ---------------------------------------------------------------------------
# Galileo boost
# ---------------------------------------------------------------------------


def galileo_boost(field: WaveField, u: float, params: PhysicalParams, t: float) -> WaveField:
    """Field seen from a frame moving with velocity ``u``.

    ``phi'(x', p') = exp(-(i/hbar)(m u x' + m u^2 t / 2)) phi(x' + u t, p' + m u)``,
    with both shifts done spectrally.
    """
    grid = field.grid
    m, hbar = params.mass, params.hbar
    ax, bp = u * t, m * u
    if abs(ax) > grid.x_length / 2 or abs(bp) > grid.p_length / 2:
        warnings.warn("boost shift exceeds half the domain; periodic wrap-around will alias",
                      ResolutionWarning, stacklevel=2)
    vals = field.values
    if ax != 0.0:
        vals = S.shift_x(vals, grid, -ax)
    if bp != 0.0:
        vals = S.shift_p(vals, grid, -bp)
    if u != 0.0:
        phase = np.exp(-1j * (m * u * grid.x + 0.5 * m * u * u * t) / hbar)
        vals = vals * phase[:, None]
    return field.with_values(vals)


# ---------------------------------------------------------------------------
# configuration-space helpers
# ---------------------------------------------------------------------------


def schrodinger_eigenstates(grid: PhaseGrid, params: PhysicalParams, spec: PotentialSpec,
                            n_states: int, sigma: float = 0.0, t: float = 0.0):
    """Lowest eigenpairs of the spectrally discretised ``-hbar^2/2m d2/dx2 + V_sigma``.

    Returns ``(energies, [ConfigWavefunction, ...])``, each state normalised
    and real, with its first significant lobe positive.
    """
    n = grid.n_x
    if not 1 <= n_states <= n:
        raise ValidationError("n_states out of range")
    eye = np.eye(n)
    k2 = grid.kx_full**2
    kinetic = np.fft.ifft(k2[:, None] * np.fft.fft(eye, axis=0), axis=0).real
    kinetic = 0.5 * (kinetic + kinetic.T) * (params.hbar**2 / (2.0 * params.mass))
    V, _ = eval_potential(spec.smoothed(sigma, grid), grid, t)
    energies, vecs = np.linalg.eigh(kinetic + np.diag(V))
    states = []
    for i in range(n_states):
        v = vecs[:, i] / math.sqrt(grid.dx)
        lead = np.flatnonzero(np.abs(v) > 1e-3 * np.abs(v).max())[0]
        if v[lead] < 0:
            v = -v
        states.append(ConfigWavefunction.on(grid, v.astype(complex)))
    return energies[:n_states], states


def gaussian_wavefunction(grid: PhaseGrid, x0: float = 0.0, k0: float = 0.0,
                          sigma: float = 1.0) -> ConfigWavefunction:
    """Normalised ``exp(-(x-x0)^2 / (4 sigma^2) + i k0 x)``; ``sigma`` is the std of ``|psi|^2``."""
    x = grid.x
    v = np.exp(-((x - x0) ** 2) / (4.0 * sigma**2) + 1j * k0 * x)
    return ConfigWavefunction.on(grid, v).normalized()


def phase_space_gaussian(grid: PhaseGrid, x0: float = 0.0, p0: float = 0.0,
                         sigma_x: float = 1.0, sigma_p: float = 1.0) -> WaveField:
    """Unit-norm real Gaussian bump on the phase grid (stds refer to ``|phi|^2``)."""
    X, P = grid.mesh
    v = np.exp(-((X - x0) ** 2) / (4.0 * sigma_x**2) - ((P - p0) ** 2) / (4.0 * sigma_p**2))
    return WaveField(grid, v).normalized()


def phase_aligned_distance(a, b) -> float:
    """``min_theta ||a - e^{i theta} b||`` for two states on the same axis."""
    ov = a.inner(b)
    phase = np.conj(ov) / abs(ov) if ov != 0 else 1.0
    diff = a.values - phase * b.values
    dvol = a.dx if isinstance(a, ConfigWavefunction) else a.grid.cell
    return float(math.sqrt(np.sum(np.abs(diff) ** 2) * dvol))
