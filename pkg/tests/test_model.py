import math

import mpmath
import numpy as np
import pytest

from mkvdp import ConfigError, ModelError, ModelSpec, satmr
from mkvdp.measure import EmpiricalMeasure
from mkvdp.model import ActionSet, constant_model, evaluate_dynamics, validate_model


def test_satmr_at_origin():
    m = satmr()
    b, sig = evaluate_dynamics(m, [0.0], EmpiricalMeasure.dirac([0.0]), [0.0])
    assert b.tolist() == [0.0]
    # sigma0 + sigma1 / (1 + 0^2)
    assert sig.tolist() == [[1.0]]
    _, sig0 = evaluate_dynamics(satmr(sigma1=0.0), [0.0], EmpiricalMeasure.dirac([0.0]), [0.0])
    assert sig0.tolist() == [[0.5]]


def test_satmr_mean_field_drift_against_high_precision():
    m = satmr(theta2=1.0)
    b, _ = evaluate_dynamics(m, [0.0], EmpiricalMeasure.dirac([10.0]), [0.0])
    mpmath.mp.dps = 40
    assert b[0] == pytest.approx(float(mpmath.tanh(10)), rel=1e-15, abs=0)


def test_evaluation_is_deterministic():
    m = satmr()
    mu = EmpiricalMeasure([[0.3], [-1.2], [2.0]], [0.2, 0.5, 0.3])
    a = evaluate_dynamics(m, [0.7], mu, [0.4])
    b = evaluate_dynamics(m, [0.7], mu, [0.4])
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_errors():
    m = satmr()
    with pytest.raises(ModelError):
        evaluate_dynamics(m, [0.0], EmpiricalMeasure.dirac([0.0]), [5.0])
    with pytest.raises(ModelError):
        evaluate_dynamics(m, [float("nan")], EmpiricalMeasure.dirac([0.0]), [0.0])
    with pytest.raises(ConfigError, match="unknown drift key"):
        ModelSpec(dim=1, action_set=ActionSet.box([(-1, 1)]), drift_id="nope")
    with pytest.raises(ConfigError):
        satmr(bogus=1.0)


def test_analytic_constants_by_hand():
    c = satmr().constants
    slope = 3 * math.sqrt(3) / 8  # max of |d/dx 1/(1+x^2)|
    assert c["C1"] == pytest.approx(max(1.0 + 0.5 * slope, 0.5))
    assert c["C2"] == pytest.approx((1.0 + 0.5) + 1.0 + 1.0)
    assert c["C3"] == pytest.approx(max(slope + slope, 2 * 0.5))
    assert c["C4"] == pytest.approx((1 + 0.5 + 0.5) + 1)


def test_declared_constants_override_and_validate():
    m = satmr(constants={"C2": 10.0})
    assert m.constants["C2"] == 10.0
    with pytest.raises(ConfigError):
        satmr(constants={"C9": 1.0})
    with pytest.raises(ConfigError):
        satmr(constants={"C1": -1.0})


def test_drift_bound_on_random_triples(rng):
    m = satmr()
    x = rng.normal(0, 5, size=(10_000, 1))
    atoms = rng.normal(0, 5, size=(10_000, 3, 1))
    s = {k: v[:, None] if v.ndim == 1 else v for k, v in m.stats_of(atoms).items()}
    u = m.action_set.sample(rng, 10_000)
    b = m.drift(x, s, u)
    assert np.abs(b).max() <= m.constants["C2"]


def test_audit_constant_model_is_zero():
    rep = validate_model(constant_model(), samples=500)
    assert rep.ok
    assert rep.ratios["drift"] == 0.0 and rep.bounds["drift"] == 0.0


def test_audit_satmr_analytic_constants_hold():
    rep = validate_model(satmr(), samples=100_000, seed=3)
    assert rep.ok, rep.violations
    # the audit gets close to the analytic Lipschitz constant from below
    assert 0.5 * satmr().constants["C1"] < rep.ratios["C1"] <= satmr().constants["C1"] * 1.01


def test_audit_flags_misdeclared_bound():
    rep = validate_model(satmr(sigma0=1.0, constants={"C2": 0.0}), samples=200)
    assert not rep.ok
    assert any(v.startswith("C2") for v in rep.violations)


def test_audit_two_dimensional():
    rep = validate_model(satmr(dim=2), samples=300)
    assert rep.ok


def test_action_grid_contains_endpoints():
    a = ActionSet.box([(-1.0, 2.0), (0.0, 1.0)], [3, 2])
    g = a.grid()
    assert g.shape == (6, 2)
    assert {-1.0, 2.0} <= set(g[:, 0]) and {0.0, 1.0} <= set(g[:, 1])
    assert ActionSet.box([(0.0, 2.0)], [1]).grid().tolist() == [[1.0]]
    assert ActionSet.from_dict(a.to_dict()) == a


def test_full_matrix_diffusion():
    m = ModelSpec(dim=2, action_set=ActionSet.finite([[0.0, 0.0]]), drift_id="constant",
                  diffusion_id="matrix", running_cost_id="constant", terminal_cost_id="constant",
                  diffusion_params={"matrix": [[1.0, 0.5], [0.0, 1.0]]})
    _, sig = evaluate_dynamics(m, [0.0, 0.0], EmpiricalMeasure.dirac([0.0, 0.0]), [0.0, 0.0])
    assert sig.tolist() == [[1.0, 0.5], [0.0, 1.0]]
    assert not m.diagonal
