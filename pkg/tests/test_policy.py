import math

import numpy as np
import pytest

from mkvdp import ConfigError, PolicyError, em, satmr
from mkvdp.measure import MeasureIndex, StateGrid
from mkvdp.model import constant_model
from mkvdp.policy import (MarkovPolicy, OpenLoopPolicy, deploy_interpolated, discount_horizon,
                          evaluate_discounted, evaluate_finite_horizon, load_policy,
                          policy_from_dict, save_policy)

ZERO = OpenLoopPolicy.constant([0.0])


def test_unit_cost_finite_horizon_is_T():
    m = constant_model(cost=1.0, diffusion=0.3)
    est = evaluate_finite_horizon(m, em.TimeGrid(0.125, 1.0), ZERO, 8, 4, seed=1)
    assert est.mean == 1.0 and est.std_error == 0.0
    assert est.criterion == "finite_horizon" and est.parameters == {"T": 1.0, "h": 0.125, "N": 8}


def test_zero_cost_and_single_replication():
    est = evaluate_finite_horizon(constant_model(diffusion=1.0), em.TimeGrid(0.1, 1.0), ZERO, 4, 1)
    assert est.mean == 0.0 and est.std_error is None
    with pytest.raises(ConfigError):
        evaluate_finite_horizon(satmr(), em.TimeGrid(0.1, 1.0), ZERO, 4, 0)


def _straight_loop(h, T, N, R, seed):
    """Per-agent satmr cost under u = 0, written as a plain loop with numpy noise."""
    g = np.random.default_rng(seed)
    K = em.step_count(h, T)
    out = []
    for _ in range(R):
        x = np.full(N, 1.0)
        total = 0.0
        for _ in range(K):
            m = np.tanh(x).mean()
            c = x * x / (1 + x * x) + 0.5 * m * m
            total += h * c.mean()
            x = x + (-np.tanh(x) + 0.5 * m) * h + (0.5 + 0.5 / (1 + x * x)) * math.sqrt(h) * g.normal(size=N)
        total += (x * x / (1 + x * x)).mean()
        out.append(total)
    out = np.array(out)
    return out.mean(), out.std(ddof=1) / math.sqrt(R)


def test_matches_straight_loop_estimator():
    h, N, R = 2.0 ** -6, 512, 64
    est = evaluate_finite_horizon(satmr(), em.TimeGrid(h, 1.0), ZERO, N, R, seed=3)
    mean, se = _straight_loop(h, 1.0, N, R, seed=3)
    assert abs(est.mean - mean) <= 2 * math.hypot(se, est.std_error)


def test_cost_shift_moves_estimate_exactly():
    g = em.TimeGrid(0.25, 1.0)
    a = evaluate_finite_horizon(constant_model(cost=0.5, diffusion=1.0), g, ZERO, 4, 3, seed=2)
    b = evaluate_finite_horizon(constant_model(cost=1.5, terminal=0.25, diffusion=1.0), g, ZERO, 4, 3,
                                seed=2)
    assert b.mean - a.mean == pytest.approx(1.25, abs=1e-15)


def test_discount_horizon_geometric_series():
    h, alpha = 0.1, 1.0
    K, beta, tail = discount_horizon(h, alpha, 1.0)
    assert beta == math.exp(-0.1)
    assert beta ** K <= 1e-6 < beta ** (K - 1)
    assert tail == pytest.approx(beta ** K * h / (1 - beta))
    est = evaluate_discounted(constant_model(cost=1.0), h, alpha, ZERO, 3, 2)
    assert est.mean == pytest.approx(h * (1 - beta ** K) / (1 - beta), rel=1e-13)
    assert est.mean + est.tail_bound >= h / (1 - beta) - 1e-12
    with pytest.raises(ConfigError):
        discount_horizon(1e-9, 1e-3, 1.0, max_steps=1000)


def test_discounted_equals_weighted_finite_sum():
    m = satmr()
    h, alpha, K = 0.125, 1.0, 16
    est = evaluate_discounted(m, h, alpha, ZERO, 8, 4, horizon_steps=K, seed=5)
    b = em.simulate(m, em.TimeGrid(h, K * h), ZERO, 8, seed=5, replications=4)
    beta = math.exp(-alpha * h)
    w = beta ** np.arange(K)
    want = np.einsum("k,krn->rn", w, b.running_costs).mean(axis=1).mean()
    assert est.mean == pytest.approx(want, rel=1e-13)
    assert est.parameters["horizon_steps"] == K


def test_open_loop_indexing():
    p = OpenLoopPolicy([[1.0], [-1.0], [0.0]])
    assert p.action(1).tolist() == [-1.0]
    with pytest.raises(PolicyError):
        p.action(3)
    assert p.refine(2).table[:, 0].tolist() == [1, 1, -1, -1, 0, 0]
    assert OpenLoopPolicy.constant([0.5]).action(99).tolist() == [0.5]
    with pytest.raises(ConfigError):
        OpenLoopPolicy(np.zeros((0, 1)))


def test_interpolated_deployment():
    g = em.TimeGrid(0.5, 1.0)
    ctl = deploy_interpolated(OpenLoopPolicy([[0.2], [0.7]]), g)
    assert ctl.step_index(0.75) == 1
    assert ctl(0.0).tolist() == [0.2]
    assert ctl(0.5).tolist() == [0.7]
    assert ctl(0.4999).tolist() == [0.2]
    with pytest.raises(PolicyError):
        ctl(1.25)
    with pytest.raises(PolicyError):
        ctl(-0.1)


def _markov(stationary=False):
    grid = StateGrid(2.0, 3, 1)
    idx = MeasureIndex(grid, 2)
    shape = (len(idx), grid.n_cells) if stationary else (2, len(idx), grid.n_cells)
    table = np.arange(np.prod(shape)).reshape(shape) % 3
    return MarkovPolicy(table, [[-1.0], [0.0], [1.0]], grid, 2, stationary=stationary)


@pytest.mark.parametrize("stationary", [False, True])
def test_markov_round_trip(tmp_path, stationary):
    p = _markov(stationary)
    save_policy(p, tmp_path / "p.json", {"h": 0.5})
    q = load_policy(tmp_path / "p.json")
    assert q.kind == p.kind and np.array_equal(q.table, p.table)
    assert np.array_equal(q.action_grid, p.action_grid)
    x = np.random.default_rng(0).normal(scale=3, size=(4, 5, 1))
    assert np.array_equal(q.actions(0, x), p.actions(0, x))
    o = policy_from_dict(OpenLoopPolicy([[0.1], [0.2]]).to_dict())
    assert o.table[:, 0].tolist() == [0.1, 0.2]


def test_markov_lookup_is_total():
    p = _markov()
    g = np.random.default_rng(1)
    for scale in (0.1, 1.0, 100.0):
        x = g.normal(scale=scale, size=(3, 7, 1))
        a = p.actions(1, x)
        assert a.shape == (3, 7, 1) and np.all(np.isin(a, [-1.0, 0.0, 1.0]))
    cells, meas = p.lookup(np.array([[[-50.0], [50.0]]]))
    assert cells.tolist() == [[0, 2]]
    assert p.index.comps[meas[0]].tolist() == [1, 0, 1]
    with pytest.raises(PolicyError):
        p.actions(2, x)


def test_markov_table_validation():
    grid = StateGrid(2.0, 3, 1)
    with pytest.raises(ConfigError):
        MarkovPolicy(np.zeros((1, 2, 3), dtype=int), [[0.0]], grid, 2)
    with pytest.raises(ConfigError):
        MarkovPolicy(np.full((1, 6, 3), 4), [[0.0]], grid, 2)
    with pytest.raises(ConfigError):
        MarkovPolicy(np.zeros((6, 3), dtype=int), [[0.0]], grid, 2)
    with pytest.raises(ConfigError):
        policy_from_dict({"kind": "neural"})


def test_markov_policy_drives_simulation():
    p = _markov(stationary=True)
    b = em.simulate(satmr(), em.TimeGrid(0.5, 1.0), p, 6, seed=1, replications=2)
    assert np.all(np.isfinite(b.states))
