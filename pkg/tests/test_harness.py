import json
import math

import numpy as np
import pytest

from mkvdp import ConfigError, em, harness, satmr
from mkvdp.harness import ExperimentPlan, fit_slope, inversions
from mkvdp.measure import StateGrid
from mkvdp.model import constant_model


def test_fit_slope_recovers_power_law():
    h = 2.0 ** -np.arange(3, 8)
    s, c, r = fit_slope(h, 3.0 * h ** 0.5)
    assert s == pytest.approx(0.5, abs=1e-12) and math.exp(c) == pytest.approx(3.0)
    assert r < 1e-12
    assert fit_slope(h[:3], h[:3]) is None
    assert fit_slope(h, np.r_[h[:-1], 0.0]) is None
    assert inversions([3, 2, 2.5, 1]) == 1


def test_plan_validation():
    with pytest.raises(ConfigError):
        ExperimentPlan("bogus")
    with pytest.raises(ConfigError):
        ExperimentPlan("value_rate", h_list=(0.1, 0.2, 0.05))
    with pytest.raises(ConfigError):
        ExperimentPlan("strong_error", replications=8)
    with pytest.raises(ConfigError):
        ExperimentPlan("chaos", seeds=range(4))
    assert ExperimentPlan("strong_error").band == (0.7, 1.3)


def _small_strong(**kw):
    base = dict(h_list=(2.0 ** -2, 2.0 ** -3, 2.0 ** -4, 2.0 ** -5), h_ref=2.0 ** -9, N=8,
                replications=16)
    base.update(kw)
    return ExperimentPlan("strong_error", **base)


def test_strong_lockstep_matches_separate_runs():
    plan = _small_strong()
    m = plan.model
    pol = harness.strong_error_policy(plan)
    errs = harness._strong_block(m, plan, pol, list(range(4)))
    ref = em.simulate(m, em.TimeGrid(plan.h_ref, 1.0), pol.refine(2 ** 7), 8, 0, 4)
    for li, h in enumerate(plan.h_list):
        f = int(round(h / plan.h_ref))
        lvl = em.simulate(m, em.TimeGrid(h, 1.0), pol.refine(int(round(plan.h_list[0] / h))), 8, 0, 4,
                          noise_step=plan.h_ref)
        e = np.max(np.sum((ref.states[::f] - lvl.states) ** 2, axis=-1), axis=0).mean(axis=1)
        assert np.array_equal(errs[li], e)


def test_reference_level_has_zero_error():
    plan = _small_strong(h_list=(2.0 ** -2, 2.0 ** -3, 2.0 ** -4, 2.0 ** -5), h_ref=2.0 ** -5)
    pol = harness.strong_error_policy(plan)
    errs = harness._strong_block(plan.model, plan, pol, [0, 1])
    assert np.all(errs[-1] == 0) and np.all(errs[0] > 0)


def test_strong_error_degenerate_without_noise():
    plan = _small_strong(model=constant_model(drift=0.5, actions=(-1.0, 1.0), control_gain=0.25))
    rep = harness.run(plan)
    assert rep.degenerate and rep.status == "degenerate" and rep.slope is None


def test_strong_error_workers_do_not_change_result():
    a = harness.run(_small_strong(workers=1))
    b = harness.run(_small_strong(workers=3))
    assert a.to_dict() == b.to_dict()
    assert a.slope is not None


def test_value_rate_unit_cost_is_degenerate():
    m = constant_model(cost=1.0, diffusion=1.0)
    plan = ExperimentPlan("value_rate", model=m, h_list=(0.5, 0.25, 0.125, 0.0625, 0.03125), m=2, n=2,
                          mc_replications=2, mc_particles=4)
    rep = harness.run(plan)
    assert [p["value"] for p in rep.points] == [1.0] * 5
    assert rep.degenerate and all(p["gap"] == 0 for p in rep.points)


def test_discounted_rate_reports_contraction():
    plan = ExperimentPlan("discounted_rate", h_list=(0.5, 0.25, 0.125, 0.0625, 0.03125), m=3, n=3)
    rep = harness.run_discounted_rate(plan, monte_carlo=False)
    for p in rep.points:
        assert p["max_ratio"] <= p["beta"] + 1e-12
    assert len([p for p in rep.points if p["difference"] is not None]) == 4


def test_chaos_reference_has_zero_distance():
    plan = ExperimentPlan("chaos", N_list=(8, 16, 32), seeds=range(16), h=0.25, m=3, n=3)
    rep = harness.run(plan)
    assert rep.points[-1]["median_w1"] == 0.0
    assert set(rep.checks) >= {"w1_inversions", "gap_share"}


def test_n_particle_gap_runs():
    plan = ExperimentPlan("n_particle_gap", N_list=(4, 8), replications=16, h=0.25, m=3, n=3)
    rep = harness.run(plan)
    assert [p["N"] for p in rep.points] == [4, 8]


def test_report_serialisation():
    h = [0.5, 0.25, 0.125, 0.0625]
    rep = harness.RateReport("value_rate", "h", [{"h": x, "difference": x ** 0.5} for x in h],
                             slope=0.5, band=(0.25, 1.0), passed=True)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["status"] == "pass" and d["slope"]["points_used"] == 4
    lines = rep.to_csv().splitlines()
    assert lines[0] == "h,difference" and lines[1] == "0.5,0.70710678118654757"


def test_kernel_continuity_is_finite():
    K = harness.kernel_continuity(satmr(), StateGrid(2.0, 5), 0.25, deltas=(0.1, 0.01), pairs=20)
    assert all(0 < v < math.inf for v in K.values())
