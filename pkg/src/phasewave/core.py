"""Grids, parameters, potentials and field containers shared by every solver.

Everything here is an immutable value object.  Arrays stored on the field
types are flagged read-only so that a field can be shared between threads
without copying.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "NumericalError",
    "ResolutionWarning",
    "PhaseGrid",
    "make_grid",
    "PhysicalParams",
    "PotentialTerm",
    "PotentialSpec",
    "zero",
    "harmonic",
    "quartic",
    "double_well",
    "tabulated",
    "eval_potential",
    "WaveField",
    "DensityField",
    "ConfigWavefunction",
    "Ensemble",
    "FieldMetrics",
    "l2_norm",
    "field_metrics",
    "check_p_boundary",
]

BOUNDARY_DECAY_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class NumericalError(RuntimeError):
    """Raised when a solver produces non-finite values or loses its state."""


class ResolutionWarning(UserWarning):
    """Emitted when a grid or time step is too coarse for the requested run."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform periodic grid on the (x, p) plane.

    Samples sit at ``x_min + i*dx`` and ``p_min + j*dp``; the right edges are
    identified with the left ones.  Arrays are indexed ``[ix, ip]``.
    """

    n_x: int
    n_p: int
    x_min: float
    x_max: float
    p_min: float
    p_max: float

    def __post_init__(self):
        for name in ("n_x", "n_p"):
            n = getattr(self, name)
            if int(n) != n or n < 8:
                raise ValidationError(f"{name} must be an integer >= 8, got {n!r}")
        for lo, hi, axis in ((self.x_min, self.x_max, "x"), (self.p_min, self.p_max, "p")):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValidationError(f"{axis} extent must be finite")
            if not hi > lo:
                raise ValidationError(f"{axis}_max must exceed {axis}_min, got ({lo}, {hi})")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_p)

    @property
    def cell(self) -> float:
        return self.dx * self.dp

    @property
    def x_length(self) -> float:
        return self.x_max - self.x_min

    @property
    def p_length(self) -> float:
        return self.p_max - self.p_min

    @cached_property
    def x(self) -> np.ndarray:
        return _readonly(self.x_min + self.dx * np.arange(self.n_x))

    @cached_property
    def p(self) -> np.ndarray:
        return _readonly(self.p_min + self.dp * np.arange(self.n_p))

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        X, P = np.meshgrid(self.x, self.p, indexing="ij")
        return _readonly(X), _readonly(P)

    # Fourier conventions: first-derivative wavenumbers have the Nyquist entry
    # zeroed; second derivatives keep the full -k**2 symbol.
    @cached_property
    def kx(self) -> np.ndarray:
        return _readonly(_wavenumbers(self.n_x, self.dx, nyquist_zero=True))

    @cached_property
    def kp(self) -> np.ndarray:
        return _readonly(_wavenumbers(self.n_p, self.dp, nyquist_zero=True))

    @cached_property
    def kx_full(self) -> np.ndarray:
        return _readonly(_wavenumbers(self.n_x, self.dx, nyquist_zero=False))

    @cached_property
    def kp_full(self) -> np.ndarray:
        return _readonly(_wavenumbers(self.n_p, self.dp, nyquist_zero=False))

    def same_as(self, other: "PhaseGrid") -> bool:
        return self == other


def _wavenumbers(n: int, d: float, nyquist_zero: bool) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.fftfreq(n, d)
    if nyquist_zero and n % 2 == 0:
        k[n // 2] = 0.0
    return k


def make_grid(nx: int, np_: int, x_extent: Sequence[float], p_extent: Sequence[float]) -> PhaseGrid:
    """Build a :class:`PhaseGrid` from sample counts and ``(min, max)`` extents."""
    try:
        x_lo, x_hi = (float(v) for v in x_extent)
        p_lo, p_hi = (float(v) for v in p_extent)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"extents must be pairs of reals: {exc}") from None
    return PhaseGrid(int(nx), int(np_), x_lo, x_hi, p_lo, p_hi)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalParams:
    """Model constants in nondimensional units.

    ``gamma`` is the friction per unit mass; ``kT`` sets the equilibrium
    momentum variance ``kT * mass``.  ``a`` and ``b`` are the position and
    momentum diffusion amplitudes of the legacy diffusion model.
    """

    hbar: float = 1.0
    mass: float = 1.0
    kT: float = 1.0
    gamma: float = 0.0
    rest_energy: float = 0.0
    a: float = 0.0
    b: float = 0.0
    include_rest_phase: bool = False

    def __post_init__(self):
        for name in ("hbar", "mass", "kT", "gamma", "rest_energy", "a", "b"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
        if self.hbar <= 0:
            raise ValidationError("hbar must be > 0")
        if self.mass <= 0:
            raise ValidationError("mass must be > 0")
        for name in ("kT", "gamma", "rest_energy", "a", "b"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def momentum_variance(self) -> float:
        """Variance ``kT*m`` of the stationary momentum profile."""
        return self.kT * self.mass

    @property
    def rest_phase_energy(self) -> float:
        return self.rest_energy if self.include_rest_phase else 0.0

    def require_legacy(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValidationError("legacy diffusion model needs a > 0 and b > 0")

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

_KINDS = {"zero": 0, "harmonic": 1, "quartic": 1, "double_well": 2, "tabulated": 0}


@dataclass(frozen=True)
class PotentialTerm:
    """One analytic or tabulated function of x.

    kinds and coefficients::

        zero                 0
        harmonic(k)          k x^2 / 2
        quartic(c4)          c4 x^4
        double_well(h, d)    h ((x/d)^2 - 1)^2
        tabulated            samples on the grid's x-axis
    """

    kind: str = "zero"
    coeffs: tuple = ()
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown potential kind {self.kind!r}")
        if len(self.coeffs) != _KINDS[self.kind]:
            raise ValidationError(f"{self.kind} takes {_KINDS[self.kind]} coefficient(s)")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise ValidationError("potential coefficients must be finite")
        if self.kind == "double_well" and self.coeffs[1] == 0:
            raise ValidationError("double_well width d must be nonzero")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValidationError("tabulated potential needs samples")
            if not all(math.isfinite(v) for v in self.table):
                raise ValidationError("tabulated samples must be finite")

    def _table_on(self, grid: PhaseGrid) -> np.ndarray:
        if len(self.table) != grid.n_x:
            raise ValidationError(
                f"tabulated potential has {len(self.table)} samples but the grid has n_x={grid.n_x}"
            )
        return np.asarray(self.table, dtype=float)

    def evaluate(self, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
        x = grid.x
        if self.kind == "zero":
            return np.zeros_like(x), np.zeros_like(x)
        if self.kind == "harmonic":
            (k,) = self.coeffs
            return 0.5 * k * x**2, k * x
        if self.kind == "quartic":
            (c4,) = self.coeffs
            return c4 * x**4, 4.0 * c4 * x**3
        if self.kind == "double_well":
            h, d = self.coeffs
            u = (x / d) ** 2 - 1.0
            return h * u**2, 4.0 * h * u * x / d**2
        v = self._table_on(grid)
        dv = np.fft.ifft(1j * grid.kx * np.fft.fft(v)).real
        return v, dv

    def second_derivative(self, grid: PhaseGrid) -> np.ndarray:
        x = grid.x
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            return np.full_like(x, self.coeffs[0])
        if self.kind == "quartic":
            return 12.0 * self.coeffs[0] * x**2
        if self.kind == "double_well":
            h, d = self.coeffs
            return h * (12.0 * x**2 / d**4 - 4.0 / d**2)
        v = self._table_on(grid)
        return np.fft.ifft(-grid.kx_full**2 * np.fft.fft(v)).real

    def smoothed(self, sigma: float, grid: Optional[PhaseGrid] = None) -> "PotentialTerm":
        """Convolution with a centred Gaussian of standard deviation ``sigma``.

        Polynomial kinds are smoothed in closed form; tables are smoothed
        spectrally under the periodic topology and therefore need ``grid``.
        """
        if sigma < 0:
            raise ValidationError("smoothing sigma must be >= 0")
        if sigma == 0 or self.kind == "zero":
            return self
        s2 = sigma**2
        if self.kind == "harmonic":
            (k,) = self.coeffs
            # E[(x + sZ)^2] = x^2 + s^2
            return _poly(quad=0.5 * k, const=0.5 * k * s2)
        if self.kind == "quartic":
            (c4,) = self.coeffs
            return _poly(quart=c4, quad=6.0 * c4 * s2, const=3.0 * c4 * s2**2)
        if self.kind == "double_well":
            h, d = self.coeffs
            a4, a2 = h / d**4, -2.0 * h / d**2
            return _poly(
                quart=a4, quad=6.0 * a4 * s2 + a2, const=3.0 * a4 * s2**2 + a2 * s2 + h
            )
        if grid is None:
            raise ValidationError("smoothing a tabulated potential needs the grid")
        v = self._table_on(grid)
        vs = np.fft.ifft(np.exp(-0.5 * s2 * grid.kx_full**2) * np.fft.fft(v)).real
        return tabulated(vs)


@dataclass(frozen=True)
class _Polynomial(PotentialTerm):
    """Even quartic polynomial; the result of smoothing an analytic term."""

    kind: str = "poly"

    def __post_init__(self):
        if len(self.coeffs) != 3:
            raise ValidationError("polynomial term takes (quart, quad, const)")

    def evaluate(self, grid):
        c4, c2, c0 = self.coeffs
        x = grid.x
        return c4 * x**4 + c2 * x**2 + c0, 4.0 * c4 * x**3 + 2.0 * c2 * x

    def second_derivative(self, grid):
        c4, c2, _ = self.coeffs
        return 12.0 * c4 * grid.x**2 + 2.0 * c2

    def smoothed(self, sigma, grid=None):
        c4, c2, c0 = self.coeffs
        s2 = sigma**2
        return _poly(
            quart=c4, quad=c2 + 6.0 * c4 * s2, const=c0 + c2 * s2 + 3.0 * c4 * s2**2
        )


def _poly(quart: float = 0.0, quad: float = 0.0, const: float = 0.0) -> PotentialTerm:
    return _Polynomial(coeffs=(float(quart), float(quad), float(const)))


def zero() -> PotentialTerm:
    return PotentialTerm("zero")


def harmonic(k: float) -> PotentialTerm:
    return PotentialTerm("harmonic", (float(k),))


def quartic(c4: float) -> PotentialTerm:
    return PotentialTerm("quartic", (float(c4),))


def double_well(h: float, d: float) -> PotentialTerm:
    return PotentialTerm("double_well", (float(h), float(d)))


def tabulated(values) -> PotentialTerm:
    return PotentialTerm("tabulated", table=tuple(float(v) for v in np.ravel(values)))


@dataclass(frozen=True)
class PotentialSpec:
    """``V(x, t) = base(x) + drive(x) * cos(omega * t)``."""

    base: PotentialTerm = field(default_factory=zero)
    drive: Optional[PotentialTerm] = None
    omega: float = 0.0

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", zero())
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise ValidationError("omega must be finite and >= 0")

    @property
    def time_dependent(self) -> bool:
        return self.drive is not None and self.drive.kind != "zero" and self.omega != 0.0

    @property
    def is_zero(self) -> bool:
        return self.base.kind == "zero" and (self.drive is None or self.drive.kind == "zero")

    def smoothed(self, sigma: float, grid: Optional[PhaseGrid] = None) -> "PotentialSpec":
        drive = None if self.drive is None else self.drive.smoothed(sigma, grid)
        return PotentialSpec(self.base.smoothed(sigma, grid), drive, self.omega)

    def validate_on(self, grid: PhaseGrid) -> None:
        for term in (self.base, self.drive):
            if term is not None and term.kind == "tabulated":
                term._table_on(grid)


def eval_potential(spec: PotentialSpec, grid: PhaseGrid, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Potential and its x-gradient on the grid's x-axis at time ``t``."""
    V, dV = spec.base.evaluate(grid)
    if spec.drive is not None:
        V1, dV1 = spec.drive.evaluate(grid)
        c = math.cos(spec.omega * t) if spec.omega != 0.0 else 1.0
        V = V + c * V1
        dV = dV + c * dV1
    return V, dV


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _as_field_array(values, dtype, shape) -> np.ndarray:
    a = np.array(values, dtype=dtype)
    if a.shape != shape:
        raise ValidationError(f"field values have shape {a.shape}, grid expects {shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("field contains non-finite entries")
    return _readonly(a)


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex phase-space wave function sampled on a grid at one time."""

    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_field_array(self.values, complex, self.grid.shape))

    def with_values(self, values, time: Optional[float] = None) -> "WaveField":
        return WaveField(self.grid, values, self.time if time is None else time)

    def __mul__(self, c) -> "WaveField":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "WaveField") -> "WaveField":
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "WaveField") -> "WaveField":
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values - other.values)

    def norm(self) -> float:
        return l2_norm(self)

    def normalized(self) -> "WaveField":
        n = l2_norm(self)
        if n == 0:
            raise ValidationError("cannot normalize a zero field")
        return self.with_values(self.values / n)

    def inner(self, other: "WaveField") -> complex:
        """``<self, other>`` with the conjugate on ``self``."""
        _same_grid(self.grid, other.grid)
        return complex(np.vdot(self.values, other.values) * self.grid.cell)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Real phase-space density (classical reference equations)."""

    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_field_array(self.values, float, self.grid.shape))

    def with_values(self, values, time: Optional[float] = None) -> "DensityField":
        return DensityField(self.grid, values, self.time if time is None else time)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell)

    def min_value(self) -> float:
        return float(self.values.min())

    def is_nonnegative(self, eps_pos: float = 1e-9) -> bool:
        return self.min_value() >= -eps_pos


@dataclass(frozen=True, eq=False)
class ConfigWavefunction:
    """Complex psi(x) on the x-axis of a phase grid."""

    n_x: int
    x_min: float
    x_max: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.n_x < 1 or not self.x_max > self.x_min:
            raise ValidationError("invalid x-axis for wave function")
        object.__setattr__(self, "values", _as_field_array(self.values, complex, (self.n_x,)))

    @classmethod
    def on(cls, grid: PhaseGrid, values, time: float = 0.0) -> "ConfigWavefunction":
        return cls(grid.n_x, grid.x_min, grid.x_max, values, time)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @property
    def k(self) -> np.ndarray:
        return _wavenumbers(self.n_x, self.dx, nyquist_zero=True)

    def matches(self, grid: PhaseGrid) -> bool:
        return (self.n_x, self.x_min, self.x_max) == (grid.n_x, grid.x_min, grid.x_max)

    def with_values(self, values, time: Optional[float] = None) -> "ConfigWavefunction":
        return ConfigWavefunction(self.n_x, self.x_min, self.x_max, values,
                                  self.time if time is None else time)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.dx))

    def normalized(self) -> "ConfigWavefunction":
        n = self.norm()
        if n == 0:
            raise ValidationError("cannot normalize a zero wave function")
        return self.with_values(self.values / n)

    def inner(self, other: "ConfigWavefunction") -> complex:
        return complex(np.vdot(self.values, other.values) * self.dx)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weighted mixture of wave fields sharing one grid and time stamp."""

    members: tuple

    def __post_init__(self):
        members = tuple((float(w), f) for w, f in self.members)
        if not members:
            raise ValidationError("ensemble needs at least one member")
        grid, time = members[0][1].grid, members[0][1].time
        for w, f in members:
            if not (math.isfinite(w) and w > 0):
                raise ValidationError("ensemble weights must be finite and > 0")
            if f.grid != grid:
                raise ValidationError("ensemble members must share one grid")
            if f.time != time:
                raise ValidationError("ensemble members must share one time stamp")
        object.__setattr__(self, "members", members)

    @property
    def grid(self) -> PhaseGrid:
        return self.members[0][1].grid

    @property
    def time(self) -> float:
        return self.members[0][1].time

    def trace(self) -> float:
        return float(sum(w * l2_norm(f) ** 2 for w, f in self.members))

    def normalized(self) -> "Ensemble":
        tr = self.trace()
        if not tr > 0:
            raise NumericalError("ensemble trace collapsed to zero")
        s = 1.0 / math.sqrt(tr)
        return Ensemble(tuple((w, f * s) for w, f in self.members))

    def mixed_density(self) -> DensityField:
        rho = sum(w * np.abs(f.values) ** 2 for w, f in self.members)
        tr = np.sum(rho) * self.grid.cell
        return DensityField(self.grid, rho / tr, self.time)


def _same_grid(a: PhaseGrid, b: PhaseGrid) -> None:
    if a != b:
        raise ValidationError("fields live on different grids")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldMetrics:
    l2_norm: float
    density: DensityField
    centroid: tuple[float, float]


def l2_norm(f) -> float:
    """``sqrt(sum |values|^2 dx dp)``."""
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * f.grid.cell))


def field_metrics(f: WaveField) -> FieldMetrics:
    rho = np.abs(f.values) ** 2
    grid = f.grid
    mass = np.sum(rho)
    if mass > 0:
        wx = rho.sum(axis=1)
        wp = rho.sum(axis=0)
        centroid = (float(np.dot(wx, grid.x) / mass), float(np.dot(wp, grid.p) / mass))
    else:
        centroid = (float("nan"), float("nan"))
    return FieldMetrics(float(np.sqrt(mass * grid.cell)), DensityField(grid, rho, f.time), centroid)


def check_p_boundary(values: np.ndarray, tol: float = BOUNDARY_DECAY_TOL, stacklevel: int = 2) -> float:
    """Warn if the field has not decayed at the momentum edges.

    Returns the largest edge magnitude relative to the field maximum.
    """
    a = np.abs(values)
    peak = a.max()
    if peak == 0:
        return 0.0
    edge = max(a[:, 0].max(), a[:, -1].max()) / peak
    if edge > tol:
        warnings.warn(
            f"field reaches {edge:.2e} of its peak at the momentum boundary (tolerance {tol:.0e})",
            ResolutionWarning,
            stacklevel=stacklevel,
        )
    return float(edge)
