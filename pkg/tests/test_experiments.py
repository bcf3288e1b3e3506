import json
import math

import numpy as np
import pytest

from phasewave.core import PhysicalParams, PotentialSpec, ValidationError, harmonic, make_grid
from phasewave.evolvers import EvolveSpec
from phasewave.experiments import (
    ExperimentConfig,
    InitialState,
    Knobs,
    fit_decay_rate,
    random_gauges,
    run_experiment,
    run_relaxation,
)

GRID = make_grid(32, 32, (-6, 6), (-8, 8))


def test_fit_decay_rate_recovers_exponential():
    t = np.linspace(0, 2, 30)
    rate, r2 = fit_decay_rate(t, 0.7 * np.exp(-1.9 * t))
    assert rate == pytest.approx(1.9, rel=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_decay_rate_needs_positive_samples():
    rate, r2 = fit_decay_rate([0, 1, 2], [1.0, 0.0, -1.0])
    assert math.isnan(rate) and r2 == 0.0


def test_digest_is_stable_and_sensitive():
    a = ExperimentConfig("relaxation", GRID)
    b = ExperimentConfig("relaxation", GRID)
    assert a.digest() == b.digest()
    c = ExperimentConfig("relaxation", GRID, params=PhysicalParams(gamma=0.1))
    assert c.digest() != a.digest()
    json.dumps(a.to_dict())


def test_config_rejects_unknown_kind():
    with pytest.raises(ValidationError):
        ExperimentConfig("bogus", GRID)
    with pytest.raises(ValidationError):
        Knobs(model="other")
    with pytest.raises(ValidationError):
        InitialState(kind="gaussian", sigma=0.0)


def test_plain_evolution_is_not_an_experiment():
    with pytest.raises(ValidationError, match="plain evolution"):
        run_experiment(ExperimentConfig("evolve", GRID))


def test_random_gauges_are_reproducible():
    a = [c for c, _ in random_gauges(3, 2)]
    b = [c for c, _ in random_gauges(3, 2)]
    assert a == b


def test_failing_control_withholds_results():
    # at V = 0 streaming pushes a lifted state off the stationary subspace
    cfg = ExperimentConfig(
        "relaxation", GRID,
        params=PhysicalParams(a=0.5, b=0.5),
        knobs=Knobs(model="legacy", fit_samples=8, fit_window=1.0),
    )
    rep = run_relaxation(cfg)
    assert not rep.controls_passed
    assert "fitted_rates" not in rep.scalars
    assert any("withheld" in n for n in rep.notes)


def test_relaxation_report_is_deterministic():
    cfg = ExperimentConfig(
        "relaxation", make_grid(64, 64, (-8, 8), (-10, 10)),
        params=PhysicalParams(kT=1.0),
        potential=PotentialSpec(harmonic(1.0)),
        initial=InitialState(kind="eigenstate"),
        evolve=EvolveSpec(0.01, 0.1),
        # the null control sees Strang splitting error of order dt^2/gamma
        knobs=Knobs(gamma_sweep=(5.0, 10.0), fit_samples=40, fit_window=1.0),
    )
    a = run_experiment(cfg).to_json()
    b = run_experiment(cfg).to_json()
    assert a == b
    rep = json.loads(a)
    assert rep["controls_passed"] and rep["input_digest"] == cfg.digest()
    assert len(rep["scalars"]["fitted_rates"]) == 2
