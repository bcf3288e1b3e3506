"""Time integrators.

All wave-field and density steppers are operator splittings whose sub-flows
are solved exactly on the grid:

* free streaming along x (diagonal in (k_x, p)),
* the force kick along p (a spectral shift by ``V'(x) tau``) together with
  the pointwise phase,
* the momentum-diffusion flow, which per x-wavenumber is an
  Ornstein-Uhlenbeck process centred at ``hbar*s`` (``_spectral.ou_flow``),
* the legacy diffusion flow (``_spectral.mehler_flow``).

Strang composition of these gives second order in ``dt``.  Time-dependent
potentials are sampled at the sub-step midpoint.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Union

import numpy as np

from . import _spectral as S
from .core import (
    ConfigWavefunction,
    DensityField,
    Ensemble,
    NumericalError,
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    ResolutionWarning,
    ValidationError,
    WaveField,
    eval_potential,
    l2_norm,
)

__all__ = [
    "EvolveSpec",
    "Trajectory",
    "step_modified_kramers",
    "evolve",
    "step_legacy_diffusion",
    "evolve_legacy",
    "kramers_rhs",
    "step_kramers_fp",
    "step_liouville",
    "evolve_density",
    "step_schrodinger",
    "evolve_schrodinger",
    "evolve_ensemble",
    "EnsembleTrajectory",
    "SmallDensityMatrix",
    "generator_matrix",
    "step_density_matrix_small",
    "check_resolution",
    "energy",
    "SCHEMES",
]

SCHEMES = ("strang", "lie")
MASS_DRIFT_TOL = 1e-8
DENSE_LIMIT = 4096


@dataclass(frozen=True)
class EvolveSpec:
    """Fixed-step schedule.

    ``t_final`` is split into ``round(t_final/dt)`` equal steps; the step is
    adjusted by at most a relative 1e-9 so the last step lands on ``t_final``.
    """

    dt: float
    t_final: float
    scheme: str = "strang"
    snapshot_stride: int = 1
    renormalize: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("dt must be > 0")
        if not (math.isfinite(self.t_final) and self.t_final >= 0):
            raise ValidationError("t_final must be >= 0")
        if self.t_final > 0 and self.dt > self.t_final * (1 + 1e-12):
            raise ValidationError("dt must not exceed t_final")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValidationError("snapshot_stride must be an integer >= 1")
        n = self.n_steps
        if n and abs(n * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ValidationError("t_final must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt)) if self.t_final > 0 else 0

    @property
    def step(self) -> float:
        n = self.n_steps
        return self.t_final / n if n else self.dt

    def snapshot_steps(self) -> list[int]:
        n = self.n_steps
        steps = list(range(0, n + 1, self.snapshot_stride))
        if steps[-1] != n:
            steps.append(n)
        return steps


@dataclass
class Trajectory:
    """Snapshots plus one row of scalar diagnostics per step."""

    times: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)
    step_times: list = dc_field(default_factory=list)
    diagnostics: dict = dc_field(default_factory=dict)

    def record(self, t, snap):
        if self.times and not t > self.times[-1]:
            raise NumericalError("snapshot times must increase strictly")
        self.times.append(float(t))
        self.snapshots.append(snap)

    @property
    def final(self):
        return self.snapshots[-1]

    def diagnostics_table(self) -> tuple[list[str], np.ndarray]:
        """Header and rows ``[t, <diagnostics...>]`` (one row per step)."""
        names = sorted(self.diagnostics)
        cols = [np.asarray(self.step_times)] + [np.asarray(self.diagnostics[k]) for k in names]
        return ["t"] + names, np.column_stack(cols) if cols[0].size else np.zeros((0, len(cols)))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _finite(values, substep: str, t: float) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values after the {substep} sub-step at t = {t:.6g}")


def check_resolution(grid: PhaseGrid, params: PhysicalParams, spec: PotentialSpec, dt: float,
                     t: float = 0.0, stacklevel: int = 3) -> list[str]:
    """Warn when ``max|p|/m dt > dx`` or ``max|V'| dt > dp`` (or ``omega dt > 0.2``)."""
    issues = []
    pmax = max(abs(grid.p_min), abs(grid.p_max))
    if pmax / params.mass * dt > grid.dx:
        issues.append(f"streaming CFL: max|p|/m*dt = {pmax / params.mass * dt:.3g} > dx = {grid.dx:.3g}")
    _, dV = eval_potential(spec, grid, t)
    if spec.drive is not None:
        _, d1 = spec.drive.evaluate(grid)
        dV = np.abs(dV) + np.abs(d1)
    if np.abs(dV).max() * dt > grid.dp:
        issues.append(f"force CFL: max|V'|*dt = {np.abs(dV).max() * dt:.3g} > dp = {grid.dp:.3g}")
    if spec.time_dependent and spec.omega * dt > 0.2:
        issues.append(f"drive resolution: omega*dt = {spec.omega * dt:.3g} > 0.2")
    for msg in issues:
        warnings.warn(msg, ResolutionWarning, stacklevel=stacklevel)
    return issues


# Sub-flows act on "hat" arrays: Fourier transformed along x, sampled along p.
# Streaming and both diffusion flows are applied there directly; only the
# force kick needs physical x.


@lru_cache(maxsize=16)
def _stream_mult(grid: PhaseGrid, tau: float, mass: float, hbar: float, with_phase: bool):
    m = S.transport_x_hat(np.ones(grid.shape, dtype=complex), grid, tau, mass, hbar, with_phase)
    m.flags.writeable = False
    return m


def _kick_hat(hat, grid, tau, params, spec, t_mid, with_phase, label, t):
    v = S.ifft(hat, 0)
    V, dV = eval_potential(spec, grid, t_mid)
    if np.any(dV):
        v = S.transport_p(v, grid, dV * tau)
    if with_phase:
        e = params.rest_phase_energy + V
        if np.any(e):
            v = v * np.exp((-1j * tau / params.hbar) * e)[:, None]
    _finite(v, f"{label}/kick", t)
    return S.fft(v, 0)


def _hamiltonian_hat(hat, grid, params, spec, t, dt, scheme, with_phase=True, label="A"):
    m, hbar = params.mass, params.hbar
    free = spec.is_zero and not (with_phase and params.rest_phase_energy)
    if free:
        # streaming alone is exact; no splitting needed
        out = hat * _stream_mult(grid, dt, m, hbar, with_phase)
        _finite(out, f"{label}/stream", t)
        return out
    t_mid = t + 0.5 * dt
    if scheme == "lie":
        v = hat * _stream_mult(grid, dt, m, hbar, with_phase)
        _finite(v, f"{label}/stream", t)
        return _kick_hat(v, grid, dt, params, spec, t_mid, with_phase, label, t)
    half = _stream_mult(grid, 0.5 * dt, m, hbar, with_phase)
    v = hat * half
    _finite(v, f"{label}/stream", t)
    v = _kick_hat(v, grid, dt, params, spec, t_mid, with_phase, label, t)
    v = v * half
    _finite(v, f"{label}/stream", t)
    return v


def _b_hat(hat, grid, params, tau, t):
    """Exact ``exp(tau * gamma * B)``: per x-wavenumber OU flow centred at ``hbar s``."""
    if params.gamma == 0.0 or tau == 0.0:
        return hat
    out = S.ou_flow(hat, grid, params.gamma * tau, params.momentum_variance,
                    centers=params.hbar * grid.kx)
    _finite(out, "B (momentum diffusion)", t)
    return out


def _mk_step_hat(hat, grid, params, spec, t, dt, scheme):
    if scheme == "lie":
        v = _hamiltonian_hat(hat, grid, params, spec, t, dt, "lie")
        return _b_hat(v, grid, params, dt, t)
    v = _b_hat(hat, grid, params, 0.5 * dt, t)
    v = _hamiltonian_hat(v, grid, params, spec, t, dt, "strang")
    return _b_hat(v, grid, params, 0.5 * dt, t)


def _mk_step(values, grid, params, spec, t, dt, scheme):
    return S.ifft(_mk_step_hat(S.fft(values, 0), grid, params, spec, t, dt, scheme), 0)


# ---------------------------------------------------------------------------
# modified Kramers equation
# ---------------------------------------------------------------------------


def step_modified_kramers(field: WaveField, params: PhysicalParams, spec: PotentialSpec, dt: float,
                          scheme: str = "strang") -> WaveField:
    """One step of ``dphi/dt = A phi + gamma B phi`` starting at ``field.time``."""
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    if scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}")
    spec.validate_on(field.grid)
    check_resolution(field.grid, params, spec, dt, field.time)
    out = _mk_step(field.values, field.grid, params, spec, field.time, dt, scheme)
    return WaveField(field.grid, out, field.time + dt)


def energy(field: WaveField, params: PhysicalParams, spec: PotentialSpec, t: Optional[float] = None) -> float:
    """Mean of ``p^2/2m + V`` under ``|phi|^2`` (normalised)."""
    grid = field.grid
    V, _ = eval_potential(spec, grid, field.time if t is None else t)
    rho = np.abs(field.values) ** 2
    tot = rho.sum()
    if tot == 0:
        return float("nan")
    h = grid.p[None, :] ** 2 / (2 * params.mass) + V[:, None]
    return float((rho * h).sum() / tot)


Observer = Union[str, Callable]


def _observer_fns(observers, params, spec, variance=None):
    from .transforms import project_stationary

    fns = {"norm": lambda f: l2_norm(f)}
    for ob in observers or ():
        if callable(ob):
            fns[getattr(ob, "__name__", f"obs{len(fns)}")] = ob
        elif ob == "energy":
            fns["energy"] = lambda f: energy(f, params, spec)
        elif ob == "stationary_residual":
            fns["stationary_residual"] = lambda f: project_stationary(f, params, variance).residual
        elif ob == "norm":
            pass
        else:
            raise ValidationError(f"unknown observer {ob!r}")
    return fns


def _drive(field, params, spec, ev, observers, stepper, variance=None, density=False):
    """Fixed-step loop over hat arrays; fields are rebuilt only when needed."""
    n = ev.n_steps
    dt = ev.step
    grid = field.grid
    traj = Trajectory()
    traj.record(field.time, field)
    if n == 0:
        return traj
    check_resolution(grid, params, spec, dt, field.time, stacklevel=4)
    if density:
        fns = {"mass": lambda f: f.mass(), "min": lambda f: f.min_value()}
    else:
        fns = _observer_fns(observers, params, spec, variance)
    need_field = density or set(fns) != {"norm"}
    for k in fns:
        traj.diagnostics[k] = []
    snaps = set(ev.snapshot_steps())
    cls = DensityField if density else WaveField
    hat = S.fft(field.values, 0)
    t0 = field.time
    for i in range(1, n + 1):
        t = t0 + (i - 1) * dt
        try:
            hat = stepper(hat, t, dt)
        except NumericalError as exc:
            raise NumericalError(f"{exc} (step {i}, t = {t:.6g})") from None
        if ev.renormalize and not density:
            nv = _hat_norm(hat, grid)
            if not nv > 0:
                raise NumericalError(f"norm collapsed at t = {t + dt:.6g}")
            hat = hat / nv
        tnow = t0 + i * dt
        traj.step_times.append(tnow)
        cur = None
        if need_field or i in snaps:
            vals = S.ifft(hat, 0)
            cur = cls(grid, vals.real if density else vals, tnow)
        for k, fn in fns.items():
            traj.diagnostics[k].append(_hat_norm(hat, grid) if cur is None else float(fn(cur)))
        if i in snaps:
            traj.record(tnow, cur)
    return traj


def _hat_norm(hat, grid) -> float:
    return math.sqrt(float(np.sum(np.abs(hat) ** 2)) / grid.n_x * grid.cell)


def evolve(field: WaveField, params: PhysicalParams, spec: PotentialSpec, ev: EvolveSpec,
           observers: Iterable[Observer] = ()) -> Trajectory:
    """Fixed-step evolution of the modified Kramers equation.

    ``observers`` may contain ``"energy"``, ``"stationary_residual"`` or
    callables ``f(WaveField) -> float``; the norm is always recorded.
    """
    spec.validate_on(field.grid)

    def stepper(hat, t, dt):
        return _mk_step_hat(hat, field.grid, params, spec, t, dt, ev.scheme)

    return _drive(field, params, spec, ev, observers, stepper)


# ---------------------------------------------------------------------------
# legacy diffusion model
# ---------------------------------------------------------------------------


def _delta_hat(hat, grid, params, tau, t):
    out = S.mehler_flow(hat, grid, tau, params.a, params.b, params.hbar)
    _finite(out, "diffusion", t)
    return out


def _legacy_step_hat(hat, grid, params, spec, t, dt, scheme):
    if scheme == "lie":
        v = _hamiltonian_hat(hat, grid, params, spec, t, dt, "lie", label="H")
        return _delta_hat(v, grid, params, dt, t)
    v = _delta_hat(hat, grid, params, 0.5 * dt, t)
    v = _hamiltonian_hat(v, grid, params, spec, t, dt, "strang", label="H")
    return _delta_hat(v, grid, params, 0.5 * dt, t)


def step_legacy_diffusion(field: WaveField, params: PhysicalParams, spec: PotentialSpec, dt: float,
                          scheme: str = "strang") -> WaveField:
    """One step of the Hamiltonian transport plus the ``Delta_{a,b}`` diffusion."""
    params.require_legacy()
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    spec.validate_on(field.grid)
    check_resolution(field.grid, params, spec, dt, field.time)
    out = S.ifft(_legacy_step_hat(S.fft(field.values, 0), field.grid, params, spec, field.time, dt, scheme), 0)
    return WaveField(field.grid, out, field.time + dt)


def evolve_legacy(field: WaveField, params: PhysicalParams, spec: PotentialSpec, ev: EvolveSpec,
                  observers: Iterable[Observer] = ()) -> Trajectory:
    params.require_legacy()
    spec.validate_on(field.grid)
    var = params.hbar * params.b / params.a

    def stepper(hat, t, dt):
        return _legacy_step_hat(hat, field.grid, params, spec, t, dt, ev.scheme)

    return _drive(field, params, spec, ev, observers, stepper, variance=var)


# ---------------------------------------------------------------------------
# classical densities
# ---------------------------------------------------------------------------


def kramers_rhs(density: DensityField, params: PhysicalParams, spec: PotentialSpec, t: float = 0.0) -> np.ndarray:
    """Spectral right-hand side of the Kramers equation (reference for tests)."""
    grid = density.grid
    f = density.values
    _, dV = eval_potential(spec, grid, t)
    f_p = S.d_dp(f, grid)
    out = dV[:, None] * f_p - (grid.p[None, :] / params.mass) * S.d_dx(f, grid)
    if params.gamma:
        out = out + params.gamma * (f + grid.p[None, :] * f_p + params.momentum_variance * S.d2_dp2(f, grid))
    return out.real


def _ou_density_hat(hat, grid, params, tau, t):
    if params.gamma == 0.0 or tau == 0.0:
        return hat
    out = S.ou_flow(hat, grid, params.gamma * tau, params.momentum_variance)
    _finite(out, "Ornstein-Uhlenbeck", t)
    return out


def _density_step_hat(hat, grid, params, spec, t, dt, check_mass=True):
    # the kx = 0 row carries the x-integrated density, so its p-sum is the mass
    m0 = float(np.sum(hat[0]).real)
    v = _ou_density_hat(hat, grid, params, 0.5 * dt, t)
    v = _hamiltonian_hat(v, grid, params, spec, t, dt, "strang", with_phase=False, label="transport")
    v = _ou_density_hat(v, grid, params, 0.5 * dt, t)
    if check_mass:
        m1 = float(np.sum(v[0]).real)
        scale = max(abs(m0), 1e-300)
        if abs(m1 - m0) > MASS_DRIFT_TOL * scale:
            raise NumericalError(f"mass drift {abs(m1 - m0) / scale:.3e} exceeds {MASS_DRIFT_TOL:.0e} at t = {t:.6g}")
    return v


def step_kramers_fp(density: DensityField, params: PhysicalParams, spec: PotentialSpec,
                    dt: float) -> DensityField:
    """One Strang step: half OU in p, exact-shift transport, half OU."""
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    spec.validate_on(density.grid)
    check_resolution(density.grid, params, spec, dt, density.time)
    out = S.ifft(_density_step_hat(S.fft(density.values, 0), density.grid, params, spec, density.time, dt), 0).real
    return DensityField(density.grid, out, density.time + dt)


def step_liouville(density: DensityField, params: PhysicalParams, spec: PotentialSpec,
                   dt: float) -> DensityField:
    """Classical transport only (the ``gamma = 0`` path of :func:`step_kramers_fp`)."""
    return step_kramers_fp(density, params.with_(gamma=0.0), spec, dt)


def evolve_density(density: DensityField, params: PhysicalParams, spec: PotentialSpec,
                   ev: EvolveSpec) -> Trajectory:
    spec.validate_on(density.grid)

    def stepper(hat, t, dt):
        return _density_step_hat(hat, density.grid, params, spec, t, dt)

    return _drive(density, params, spec, ev, (), stepper, density=True)


# ---------------------------------------------------------------------------
# configuration-space reference
# ---------------------------------------------------------------------------


def step_schrodinger(psi: ConfigWavefunction, params: PhysicalParams, spec: PotentialSpec, dt: float,
                     smoothing_sigma: float = 0.0, grid: Optional[PhaseGrid] = None,
                     _smoothed: Optional[PotentialSpec] = None) -> ConfigWavefunction:
    """Split-step Fourier step for ``i hbar psi_t = -hbar^2/2m psi_xx + V_sigma psi``."""
    if smoothing_sigma < 0:
        raise ValidationError("smoothing_sigma must be >= 0")
    if grid is None:
        grid = PhaseGrid(psi.n_x, 8, psi.x_min, psi.x_max, -1.0, 1.0)
    elif not psi.matches(grid):
        raise ValidationError("wave function x-axis does not match the grid")
    vs = _smoothed if _smoothed is not None else spec.smoothed(smoothing_sigma, grid)
    half = np.exp(-0.25j * dt * params.hbar / params.mass * grid.kx_full**2)
    V, _ = eval_potential(vs, grid, psi.time + 0.5 * dt)
    V = V + params.rest_phase_energy
    v = np.fft.ifft(half * np.fft.fft(psi.values))
    v = v * np.exp(-1j * dt / params.hbar * V)
    v = np.fft.ifft(half * np.fft.fft(v))
    _finite(v, "Schrodinger", psi.time)
    return psi.with_values(v, psi.time + dt)


def evolve_schrodinger(psi: ConfigWavefunction, params: PhysicalParams, spec: PotentialSpec,
                       ev: EvolveSpec, smoothing_sigma: float = 0.0) -> tuple[list, list]:
    """Returns ``(times, states)`` at the snapshot steps of ``ev``."""
    grid = PhaseGrid(psi.n_x, 8, psi.x_min, psi.x_max, -1.0, 1.0)
    vs = spec.smoothed(smoothing_sigma, grid)
    snaps = set(ev.snapshot_steps())
    times, states = [psi.time], [psi]
    cur = psi
    for i in range(1, ev.n_steps + 1):
        cur = step_schrodinger(cur, params, spec, ev.step, smoothing_sigma, grid, _smoothed=vs)
        if i in snaps:
            times.append(cur.time)
            states.append(cur)
    return times, states


# ---------------------------------------------------------------------------
# ensembles and density operators
# ---------------------------------------------------------------------------


@dataclass
class EnsembleTrajectory:
    times: list
    ensembles: list
    traces: list


def evolve_ensemble(ens: Ensemble, params: PhysicalParams, spec: PotentialSpec,
                    ev: EvolveSpec) -> EnsembleTrajectory:
    """Advance every member; after each step rescale all members by one positive factor."""
    grid = ens.grid
    for _, f in ens.members:
        if f.grid != grid:
            raise ValidationError("ensemble member grid mismatch")
    tr = ens.trace()
    if abs(tr - 1.0) > 1e-10:
        raise ValidationError(f"ensemble must have trace 1 (got {tr:.12g})")
    spec.validate_on(grid)
    check_resolution(grid, params, spec, ev.step, ens.time)
    weights = [w for w, _ in ens.members]
    vals = [S.fft(f.values, 0) for _, f in ens.members]
    snaps = set(ev.snapshot_steps())
    out = EnsembleTrajectory([ens.time], [ens], [tr])
    dt = ev.step
    for i in range(1, ev.n_steps + 1):
        t = ens.time + (i - 1) * dt
        vals = [_mk_step_hat(v, grid, params, spec, t, dt, ev.scheme) for v in vals]
        tr = sum(w * _hat_norm(v, grid) ** 2 for w, v in zip(weights, vals))
        if not tr > 0:
            raise NumericalError(f"ensemble trace collapsed at t = {t + dt:.6g}")
        s = 1.0 / math.sqrt(tr)
        vals = [v * s for v in vals]
        tr = sum(w * _hat_norm(v, grid) ** 2 for w, v in zip(weights, vals))
        if i in snaps:
            tnow = ens.time + i * dt
            out.times.append(tnow)
            out.ensembles.append(Ensemble(tuple((w, WaveField(grid, S.ifft(v, 0), tnow)) for w, v in zip(weights, vals))))
            out.traces.append(tr)
    return out


@dataclass(frozen=True, eq=False)
class SmallDensityMatrix:
    """Dense density operator on a tiny grid.

    The basis is the flattened grid (x outer, p inner); the matrix of a pure
    state is ``cell * phi phi^H`` so that its trace is ``||phi||^2``.
    """

    grid: PhaseGrid
    matrix: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = self.grid.n_x * self.grid.n_p
        if n > DENSE_LIMIT:
            raise ValidationError(f"dense density matrix needs n_x*n_p <= {DENSE_LIMIT}")
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (n, n):
            raise ValidationError(f"density matrix must have shape ({n}, {n})")
        if not np.all(np.isfinite(m)):
            raise NumericalError("density matrix has non-finite entries")
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.conj().T).max() > 1e-10 * scale:
            raise ValidationError("density matrix must be Hermitian")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def pure(cls, field: WaveField) -> "SmallDensityMatrix":
        v = field.values.ravel()
        m = np.outer(v, v.conj()) * field.grid.cell
        m = 0.5 * (m + m.conj().T)
        return cls(field.grid, m / np.trace(m).real, field.time)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.matrix))[::-1]


def generator_matrix(grid: PhaseGrid, params: PhysicalParams, spec: PotentialSpec,
                     t: float = 0.0) -> np.ndarray:
    """Dense matrix of ``A + gamma B`` on the flattened grid."""
    from .operators import modified_kramers_rhs

    n = grid.n_x * grid.n_p
    if n > DENSE_LIMIT:
        raise ValidationError(f"dense generator needs n_x*n_p <= {DENSE_LIMIT}")
    D = np.empty((n, n), dtype=complex)
    for j in range(n):
        e = np.zeros(n, dtype=complex)
        e[j] = 1.0
        D[:, j] = modified_kramers_rhs(WaveField(grid, e.reshape(grid.shape)), params, spec, t).values.ravel()
    return D


_PROP_CACHE: list = []


def _propagator(D, dt):
    for gen, h, P in _PROP_CACHE:
        if gen is D and h == dt:
            return P
    P = np.eye(D.shape[0]) + dt * D + (0.5 * dt * dt) * (D @ D)
    _PROP_CACHE[:] = [(D, dt, P)]
    return P


def step_density_matrix_small(rho: SmallDensityMatrix, generator: np.ndarray, dt: float) -> SmallDensityMatrix:
    """Second-order step of ``rho' = D rho + rho D^H - rho Tr(D rho + rho D^H)``.

    Uses ``P = I + dt D + dt^2 D^2 / 2``, ``rho <- P rho P^H / Tr``, then
    re-symmetrises.  The normalised linear flow solves the nonlinear equation
    exactly, so this is consistent to second order.
    """
    n = rho.matrix.shape[0]
    D = np.asarray(generator, dtype=complex)
    if D.shape != (n, n):
        raise ValidationError("generator shape does not match the density matrix")
    P = _propagator(D, dt)
    m = P @ rho.matrix @ P.conj().T
    tr = np.trace(m).real
    if not tr > 0:
        raise NumericalError(f"density-matrix trace collapsed ({tr:.3e}); dt too large")
    m = m / tr
    m = 0.5 * (m + m.conj().T)
    return SmallDensityMatrix(rho.grid, m, rho.time + dt)
