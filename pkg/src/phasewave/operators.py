"""Right-hand-side operators of the phase-space wave equations.

Every operator returns a time-derivative contribution as a new
:class:`~phasewave.core.WaveField`; nothing is updated in place.  All
derivatives are spectral on the periodic grid.  Products with the momentum
coordinate are expanded by the product rule (``d/dp (p f) = f + p df/dp``)
because ``p`` itself is not periodic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import _spectral as S
from .core import (
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    ValidationError,
    WaveField,
    eval_potential,
)

__all__ = [
    "apply_A",
    "apply_B",
    "apply_delta_ab",
    "GaugePotentials",
    "GaugeFunction",
    "GaugeValues",
    "standard_potentials",
    "apply_generalized_rhs",
    "gauge_transform",
    "gauge_shift_potentials",
    "modified_kramers_rhs",
]


def _potential_for(field: WaveField, spec: PotentialSpec, t: float):
    try:
        spec.validate_on(field.grid)
    except ValidationError as exc:
        raise ValidationError(f"potential does not match the field grid: {exc}") from None
    return eval_potential(spec, field.grid, t)


def apply_A(field: WaveField, params: PhysicalParams, spec: PotentialSpec, t: float) -> WaveField:
    """Hamiltonian transport plus the fast phase rotation.

    ``V' dphi/dp - (p/m) dphi/dx - (i/hbar)(mc^2 + V - p^2/2m) phi``
    """
    grid = field.grid
    V, dV = _potential_for(field, spec, t)
    phi = field.values
    p = grid.p[None, :]
    out = dV[:, None] * S.d_dp(phi, grid) - (p / params.mass) * S.d_dx(phi, grid)
    energy = params.rest_phase_energy + V[:, None] - p**2 / (2.0 * params.mass)
    out = out - (1j / params.hbar) * energy * phi
    return field.with_values(out)


def apply_B(field: WaveField, params: PhysicalParams) -> WaveField:
    """Momentum diffusion with ``p`` replaced by ``p + i hbar d/dx`` (before the gamma factor)."""
    grid = field.grid
    phi = field.values
    phi_p = S.d_dp(phi, grid)
    out = (
        phi
        + grid.p[None, :] * phi_p
        + 1j * params.hbar * S.d_dx(phi_p, grid)
        + params.momentum_variance * S.d2_dp2(phi, grid)
    )
    return field.with_values(out)


def modified_kramers_rhs(field: WaveField, params: PhysicalParams, spec: PotentialSpec,
                         t: float) -> WaveField:
    """``A phi + gamma B phi``."""
    out = apply_A(field, params, spec, t)
    if params.gamma:
        out = out + apply_B(field, params) * params.gamma
    return out


def apply_delta_ab(field: WaveField, params: PhysicalParams) -> WaveField:
    """Legacy diffusion operator: x-diffusion with the ``-ip/hbar`` connection plus p-diffusion."""
    params.require_legacy()
    grid = field.grid
    a, b, hbar = params.a, params.b, params.hbar
    phi_hat = S.fft(field.values, 0)
    q = grid.kx[:, None] - grid.p[None, :] / hbar
    x_part = S.ifft(-(a * a) * q**2 * phi_hat, 0)
    out = x_part + (b * b) * S.d2_dp2(field.values, grid) + (a * b / hbar) * field.values
    return field.with_values(out)


# ---------------------------------------------------------------------------
# gauge structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaugePotentials:
    """Connection coefficients on the grid at one time.

    ``A0`` enters the time derivative, ``Ax`` the x-derivative and ``Bp`` the
    p-derivative.  The p-derivatives of ``Ax`` and ``Bp`` are carried
    alongside because the diffusion block differentiates them and neither is
    periodic in general.
    """

    grid: PhaseGrid
    time: float
    A0: np.ndarray
    Ax: np.ndarray
    Bp: np.ndarray
    dAx_dp: np.ndarray
    dBp_dp: np.ndarray

    def __post_init__(self):
        for name in ("A0", "Ax", "Bp", "dAx_dp", "dBp_dp"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), self.grid.shape)
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"gauge potential {name} has non-finite entries")
            object.__setattr__(self, name, a)


def standard_potentials(grid: PhaseGrid, params: PhysicalParams, spec: PotentialSpec,
                        t: float) -> GaugePotentials:
    """Potentials that reduce the covariant equation to ``A + gamma B``."""
    V, _ = eval_potential(spec, grid, t)
    p = grid.p[None, :]
    A0 = params.rest_phase_energy + p**2 / (2.0 * params.mass) + V[:, None]
    return GaugePotentials(grid, t, A0, -p + 0.0 * V[:, None], 0.0, -1.0, 0.0)


@dataclass(frozen=True)
class GaugeValues:
    g: np.ndarray
    g_t: np.ndarray
    g_x: np.ndarray
    g_p: np.ndarray
    g_xp: np.ndarray
    g_pp: np.ndarray


Partial = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class GaugeFunction:
    """Real gauge function g(x, p, t) with the partials the transformation needs.

    Build one with :meth:`analytic` (closed-form partials) or
    :meth:`from_table` (spectral partials of a periodic table).
    """

    value: Partial
    d_t: Partial
    d_x: Partial
    d_p: Partial
    d_xp: Partial
    d_pp: Partial

    @classmethod
    def analytic(cls, value, d_t=None, d_x=None, d_p=None, d_xp=None, d_pp=None) -> "GaugeFunction":
        zero = _zero_partial
        return cls(value, d_t or zero, d_x or zero, d_p or zero, d_xp or zero, d_pp or zero)

    @classmethod
    def from_table(cls, grid: PhaseGrid, table, table_t=None) -> "GaugeFunction":
        g = np.asarray(table, dtype=float)
        if g.shape != grid.shape:
            raise ValidationError("gauge table must match the grid shape")
        g_t = np.zeros_like(g) if table_t is None else np.asarray(table_t, dtype=float)
        g_x = S.d_dx(g, grid).real
        g_p = S.d_dp(g, grid).real
        g_xp = S.d_dx(g_p, grid).real
        g_pp = S.d2_dp2(g, grid).real
        const = lambda a: (lambda X, P, t: a)  # noqa: E731
        return cls(const(g), const(g_t), const(g_x), const(g_p), const(g_xp), const(g_pp))

    @classmethod
    def zero(cls) -> "GaugeFunction":
        return cls.analytic(_zero_partial)

    def evaluate(self, grid: PhaseGrid, t: float) -> GaugeValues:
        X, P = grid.mesh
        vals = [np.broadcast_to(np.asarray(f(X, P, t), dtype=float), grid.shape)
                for f in (self.value, self.d_t, self.d_x, self.d_p, self.d_xp, self.d_pp)]
        return GaugeValues(*vals)


def _zero_partial(X, P, t):
    return np.zeros(np.broadcast(X, P).shape)


def apply_generalized_rhs(field: WaveField, pots: GaugePotentials, params: PhysicalParams,
                          H_spec: PotentialSpec, t: float) -> WaveField:
    """Time derivative implied by the gauge-covariant form of the equation.

    With ``Dp = d/dp + i Bp/hbar``, ``Dx = d/dx + i Ax/hbar`` and
    ``D0 = d/dt + i A0/hbar`` the equation reads

        D0 phi = H_x Dp phi - H_p Dx phi + gamma Dp(i hbar Dx phi + kTm Dp phi)

    where ``H = mc^2 + p^2/2m + V``.  The returned rate is the right-hand side
    minus ``(i/hbar) A0 phi``.
    """
    grid = field.grid
    if pots.grid != grid:
        raise ValidationError("gauge potentials and field live on different grids")
    hbar, D = params.hbar, params.momentum_variance
    _, H_x = _potential_for(field, H_spec, t)
    H_p = grid.p[None, :] / params.mass
    phi = field.values
    phi_p = S.d_dp(phi, grid)
    phi_x = S.d_dx(phi, grid)
    ih = 1j / hbar
    Dp = phi_p + ih * pots.Bp * phi
    Dx = phi_x + ih * pots.Ax * phi
    out = -ih * pots.A0 * phi + H_x[:, None] * Dp - H_p * Dx
    if params.gamma:
        # d/dp of (i hbar Dx phi + D Dp phi), expanded so no non-periodic
        # coefficient is differentiated spectrally
        d_inner = (
            1j * hbar * S.d_dx(phi_p, grid)
            - pots.dAx_dp * phi
            - pots.Ax * phi_p
            + D * S.d2_dp2(phi, grid)
            + ih * D * (pots.dBp_dp * phi + pots.Bp * phi_p)
        )
        inner = 1j * hbar * Dx + D * Dp
        out = out + params.gamma * (d_inner + ih * pots.Bp * inner)
    return field.with_values(out)


def gauge_transform(field: WaveField, g: GaugeFunction, t: float, direction: str = "forward",
                    hbar: float = 1.0) -> WaveField:
    """Multiply by ``exp(-i g/hbar)`` (forward) or ``exp(+i g/hbar)`` (inverse)."""
    if direction not in ("forward", "inverse"):
        raise ValidationError("direction must be 'forward' or 'inverse'")
    sign = -1.0 if direction == "forward" else 1.0
    theta = (sign / hbar) * g.evaluate(field.grid, t).g
    return field.with_values(field.values * np.exp(1j * theta))


def gauge_shift_potentials(pots: GaugePotentials, g: GaugeFunction,
                           t: Optional[float] = None) -> GaugePotentials:
    """Add the partials of ``g`` to the potentials (the companion of :func:`gauge_transform`)."""
    t = pots.time if t is None else t
    gv = g.evaluate(pots.grid, t)
    return replace(
        pots,
        A0=pots.A0 + gv.g_t,
        Ax=pots.Ax + gv.g_x,
        Bp=pots.Bp + gv.g_p,
        dAx_dp=pots.dAx_dp + gv.g_xp,
        dBp_dp=pots.dBp_dp + gv.g_pp,
    )
