import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasewave.core import (
    ConfigWavefunction,
    DensityField,
    Ensemble,
    NumericalError,
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    PotentialTerm,
    ResolutionWarning,
    ValidationError,
    WaveField,
    check_p_boundary,
    double_well,
    eval_potential,
    field_metrics,
    harmonic,
    make_grid,
    quartic,
    tabulated,
)


def test_grid_geometry():
    g = make_grid(16, 32, (-4, 4), (-2, 6))
    assert g.dx == 0.5 and g.dp == 0.25
    assert g.x[0] == -4 and g.x[-1] == pytest.approx(3.5)
    assert g.cell == pytest.approx(0.125)
    assert g.shape == (16, 32)


def test_nyquist_zeroed_only_in_derivative_wavenumbers():
    g = make_grid(16, 16, (-1, 1), (-1, 1))
    assert g.kx[8] == 0.0
    assert g.kx_full[8] == pytest.approx(-math.pi / g.dx)


@pytest.mark.parametrize("args", [(4, 16, -1, 1, -1, 1), (16, 16, 1, -1, -1, 1), (16, 16, -1, 1, 2, 2)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ValidationError):
        PhaseGrid(*args)


@pytest.mark.parametrize("name", ["hbar", "mass"])
def test_params_positive(name):
    with pytest.raises(ValidationError, match=name):
        PhysicalParams(**{name: 0.0})


def test_params_negative_gamma():
    with pytest.raises(ValidationError, match="gamma must be >= 0"):
        PhysicalParams(gamma=-1.0)


def test_rest_phase_only_when_enabled():
    assert PhysicalParams(rest_energy=5.0).rest_phase_energy == 0.0
    assert PhysicalParams(rest_energy=5.0, include_rest_phase=True).rest_phase_energy == 5.0


def test_potential_values_and_gradients():
    g = make_grid(32, 8, (-2, 2), (-1, 1))
    x = g.x
    V, dV = double_well(1.5, 0.8).evaluate(g)
    assert np.allclose(V, 1.5 * ((x / 0.8) ** 2 - 1) ** 2)
    assert np.allclose(dV, 1.5 * 2 * ((x / 0.8) ** 2 - 1) * 2 * x / 0.64)


def test_tabulated_gradient_is_spectral():
    g = make_grid(64, 8, (-math.pi, math.pi), (-1, 1))
    V, dV = tabulated(np.sin(g.x)).evaluate(g)
    assert np.allclose(dV, np.cos(g.x), atol=1e-12)


def test_tabulated_length_checked():
    g = make_grid(16, 8, (-1, 1), (-1, 1))
    with pytest.raises(ValidationError, match="samples"):
        PotentialSpec(tabulated(np.zeros(10))).validate_on(g)


def test_drive_modulation():
    g = make_grid(16, 8, (-1, 1), (-1, 1))
    spec = PotentialSpec(harmonic(1.0), quartic(0.5), omega=2.0)
    V, _ = eval_potential(spec, g, 0.7)
    assert np.allclose(V, 0.5 * g.x**2 + math.cos(1.4) * 0.5 * g.x**4)
    assert spec.time_dependent


@pytest.mark.parametrize("term", [harmonic(1.3), quartic(0.2), double_well(0.7, 1.1)])
def test_smoothing_matches_quadrature(term):
    # Gauss-Hermite quadrature of V(x + sigma Z)
    g = make_grid(16, 8, (-2, 2), (-1, 1))
    sigma = 0.35
    z, w = np.polynomial.hermite_e.hermegauss(20)
    w = w / w.sum()
    ref = sum(wi * term.evaluate(PhaseGrid(16, 8, -2 + sigma * zi, 2 + sigma * zi, -1, 1))[0]
              for zi, wi in zip(z, w))
    got = term.smoothed(sigma).evaluate(g)[0]
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_smoothed_table_needs_grid():
    with pytest.raises(ValidationError):
        tabulated(np.zeros(16)).smoothed(0.1)


def test_potential_term_validation():
    with pytest.raises(ValidationError):
        PotentialTerm("harmonic", (1.0, 2.0))
    with pytest.raises(ValidationError):
        PotentialTerm("cubic", (1.0,))
    with pytest.raises(ValidationError):
        double_well(1.0, 0.0)


def test_fields_are_read_only_and_finite():
    g = make_grid(8, 8, (-1, 1), (-1, 1))
    f = WaveField(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0
    bad = np.ones(g.shape)
    bad[1, 1] = np.nan
    with pytest.raises(NumericalError):
        WaveField(g, bad)
    with pytest.raises(ValidationError):
        DensityField(g, np.ones((8, 9)))


def test_norm_and_inner():
    g = make_grid(8, 8, (-1, 1), (-1, 1))
    f = WaveField(g, np.full(g.shape, 2.0))
    assert f.norm() == pytest.approx(2.0 * math.sqrt(4.0))
    assert f.normalized().norm() == pytest.approx(1.0)
    assert f.inner(f * 1j) == pytest.approx(1j * f.norm() ** 2)


def test_field_metrics_centroid():
    g = make_grid(64, 64, (-8, 8), (-8, 8))
    X, P = g.mesh
    f = WaveField(g, np.exp(-((X - 1.0) ** 2 + (P + 0.5) ** 2)))
    m = field_metrics(f)
    assert m.centroid == pytest.approx((1.0, -0.5), abs=1e-10)
    assert m.density.mass() == pytest.approx(m.l2_norm**2)


def test_ensemble_trace_and_mixture():
    g = make_grid(8, 8, (-1, 1), (-1, 1))
    a = WaveField(g, np.ones(g.shape)).normalized()
    b = WaveField(g, np.ones(g.shape) * 1j).normalized()
    e = Ensemble(((0.25, a), (0.75, b)))
    assert e.trace() == pytest.approx(1.0)
    assert e.mixed_density().mass() == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        Ensemble(((0.0, a),))


def test_boundary_warning():
    g = make_grid(8, 8, (-1, 1), (-1, 1))
    with pytest.warns(ResolutionWarning):
        check_p_boundary(np.ones(g.shape))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = np.zeros(g.shape)
        v[4, 4] = 1.0
        assert check_p_boundary(v) == 0.0


def test_config_wavefunction_axis():
    g = make_grid(16, 8, (-2, 2), (-1, 1))
    psi = ConfigWavefunction.on(g, np.ones(16))
    assert psi.matches(g)
    assert np.allclose(psi.x, g.x)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 1.0))
def test_harmonic_smoothing_shifts_by_constant(x0, sigma):
    g = make_grid(16, 8, (x0 - 1, x0 + 1), (-1, 1))
    k = 1.7
    diff = harmonic(k).smoothed(sigma).evaluate(g)[0] - harmonic(k).evaluate(g)[0]
    assert np.allclose(diff, 0.5 * k * sigma**2)
