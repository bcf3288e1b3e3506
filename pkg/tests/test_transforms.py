import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasewave.core import ConfigWavefunction, PhysicalParams, PotentialSpec, ResolutionWarning, harmonic, make_grid
from phasewave.transforms import (
    galileo_boost,
    gaussian_wavefunction,
    husimi,
    lift_to_phase_space,
    phase_aligned_distance,
    phase_space_gaussian,
    project_stationary,
    schrodinger_eigenstates,
    wigner,
)

GRID = make_grid(128, 128, (-10, 10), (-16, 16))
PR = PhysicalParams(kT=1.0)


def test_lift_is_isometry_and_round_trips():
    psi = gaussian_wavefunction(GRID, 0.7, 1.1, 0.8)
    phi = lift_to_phase_space(psi, PR, GRID)
    assert phi.norm() == pytest.approx(1.0, abs=1e-14)
    pj = project_stationary(phi, PR)
    assert pj.residual < 1e-12
    assert np.abs(pj.psi.values - psi.values).max() < 1e-10


def test_projection_removes_orthogonal_part():
    phi = phase_space_gaussian(GRID, 0.0, 2.0, 1.0, 0.4)
    pj = project_stationary(phi, PR)
    again = project_stationary(pj.projected, PR)
    assert again.residual < 1e-12
    assert 0.0 < pj.residual < 1.0
    # Pythagoras: |phi|^2 = |P phi|^2 + |(1-P) phi|^2
    assert pj.projected.norm() ** 2 + pj.residual**2 == pytest.approx(1.0, abs=1e-12)


def test_lift_rejects_mismatched_axis():
    psi = gaussian_wavefunction(make_grid(64, 8, (-10, 10), (-1, 1)))
    with pytest.raises(ValueError):
        lift_to_phase_space(psi, PR, GRID)


def test_wigner_of_gaussian_matches_closed_form():
    g = make_grid(128, 128, (-10, 10), (-6, 6))
    s, x0, p0 = 0.9, 0.5, -0.7
    psi = gaussian_wavefunction(g, x0, p0, s)
    W, imag = wigner(psi, PR, g, return_imag=True)
    X, P = g.mesh
    ref = np.exp(-((X - x0) ** 2) / (2 * s**2) - 2 * s**2 * (P - p0) ** 2) / math.pi
    assert np.abs(W - ref).max() < 1e-10
    assert imag < 1e-12
    assert W.sum() * g.cell == pytest.approx(1.0, abs=1e-10)


def test_wigner_warns_when_p_range_exceeds_period():
    g = make_grid(16, 16, (-4, 4), (-20, 20))
    with pytest.warns(ResolutionWarning):
        wigner(gaussian_wavefunction(g), PR, g)


def test_husimi_of_coherent_state():
    # the smoothing is periodic in p, so the box must hold the wider tails
    g = make_grid(128, 128, (-10, 10), (-10, 10))
    s = 1 / math.sqrt(2)
    psi = gaussian_wavefunction(g, 1.0, 0.5, s)
    Q = husimi(psi, PR, s, g).values
    X, P = g.mesh
    ref = np.exp(-((X - 1.0) ** 2) / (4 * s**2) - s**2 * (P - 0.5) ** 2) / (2 * math.pi)
    assert np.abs(Q - ref).max() < 1e-10


def test_husimi_needs_a_width():
    with pytest.raises(ValueError):
        husimi(gaussian_wavefunction(GRID), PR, None, GRID)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1.0), min_size=3, max_size=3),
       st.floats(-3, 3), st.floats(0.5, 1.2))
def test_husimi_is_nonnegative(amps, sep, s):
    g = make_grid(64, 64, (-8, 8), (-6, 6))
    x = g.x
    v = sum(a * np.exp(-((x - sep * (i - 1)) ** 2) / 2 + 0.5j * i * x) for i, a in enumerate(amps))
    if np.abs(v).max() < 1e-3:
        return
    psi = ConfigWavefunction.on(g, v).normalized()
    Q = husimi(psi, PR, 1 / math.sqrt(2), g)
    assert Q.min_value() >= -1e-9


def test_boost_identity_and_norm():
    phi = phase_space_gaussian(GRID, 0.3, 0.2, 1.0, 1.0)
    assert np.array_equal(galileo_boost(phi, 0.0, PR, 1.0).values, phi.values)
    b = galileo_boost(phi, 0.8, PR, 1.5)
    assert b.norm() == pytest.approx(phi.norm(), abs=1e-13)


def test_boost_composes_on_densities():
    phi = phase_space_gaussian(GRID, 0.3, 0.2, 1.0, 1.0)
    t = 0.7
    two = galileo_boost(galileo_boost(phi, 0.4, PR, t), 0.5, PR, t)
    one = galileo_boost(phi, 0.9, PR, t)
    # the phases differ by a constant, densities agree
    d = np.abs(np.abs(two.values) ** 2 - np.abs(one.values) ** 2).max()
    assert d < 1e-10


def test_harmonic_eigenenergies():
    g = make_grid(128, 8, (-10, 10), (-1, 1))
    E, states = schrodinger_eigenstates(g, PR, PotentialSpec(harmonic(1.0)), 5)
    assert np.allclose(E, np.arange(5) + 0.5, atol=1e-10)
    for s in states:
        assert np.sum(np.abs(s.values) ** 2) * g.dx == pytest.approx(1.0)


def test_phase_aligned_distance_ignores_global_phase():
    psi = gaussian_wavefunction(GRID, 0.1, 0.4, 1.0)
    assert phase_aligned_distance(psi, psi.with_values(psi.values * np.exp(2.1j))) < 1e-14
    other = gaussian_wavefunction(GRID, 0.6, 0.4, 1.0)
    assert phase_aligned_distance(psi, other) > 0.1
