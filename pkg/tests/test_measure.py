import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from mkvdp import ConfigError, SizeError
from mkvdp.measure import (EmpiricalMeasure, MeasureIndex, QuantizedMeasure, StateGrid, compositions,
                           dequantize, largest_remainder, n_compositions, quantize, w1_lp,
                           wasserstein1)


def assignment_w1(a, b):
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c].sum() / len(a)


def test_w1_dirac_pair():
    assert wasserstein1(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([3.5])) == 3.5
    d = wasserstein1(EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac([3.0, 4.0]))
    assert d == pytest.approx(5.0)


def test_w1_quantile_matches_assignment(rng):
    for _ in range(100):
        k = rng.integers(1, 65)
        a, b = rng.normal(size=k), rng.normal(1, 2, size=k)
        w = wasserstein1(EmpiricalMeasure(a), EmpiricalMeasure(b))
        assert w == pytest.approx(assignment_w1(a, b), abs=1e-9)


def test_w1_weighted_matches_lp(rng):
    for _ in range(50):
        a, b = rng.normal(size=rng.integers(1, 20)), rng.normal(size=rng.integers(1, 20))
        wa, wb = rng.dirichlet(np.ones(len(a))), rng.dirichlet(np.ones(len(b)))
        assert wasserstein1(EmpiricalMeasure(a, wa), EmpiricalMeasure(b, wb)) == pytest.approx(
            w1_lp(a, wa, b, wb), abs=1e-9)


def test_w1_2d_assignment_and_lp_agree(rng):
    a, b = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    w = wasserstein1(EmpiricalMeasure(a), EmpiricalMeasure(b))
    assert w == pytest.approx(w1_lp(a, np.full(12, 1 / 12), b, np.full(12, 1 / 12)), abs=1e-9)
    wb = rng.dirichlet(np.ones(7))
    c = rng.normal(size=(7, 2))
    assert wasserstein1(EmpiricalMeasure(a), EmpiricalMeasure(c, wb)) > 0


def test_w1_errors():
    with pytest.raises(ConfigError):
        wasserstein1(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([0.0, 1.0]))
    big = EmpiricalMeasure(np.zeros((513, 2)))
    with pytest.raises(SizeError):
        wasserstein1(big, big)


def test_empirical_measure_validation():
    with pytest.raises(ConfigError):
        EmpiricalMeasure(np.zeros((0, 1)))
    with pytest.raises(ConfigError):
        EmpiricalMeasure([[0.0], [1.0]], [0.5, 0.6])
    mu = EmpiricalMeasure([[0.1, 2.0], [3.0, -1.0]], [0.25, 0.75])
    back = EmpiricalMeasure.from_csv(mu.to_csv())
    assert np.array_equal(back.atoms, mu.atoms) and np.array_equal(back.weights, mu.weights)


def test_grid_cells_and_overflow():
    g = StateGrid(2.0, 4)
    assert g.edges.tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert g.axis_centers.tolist() == [-1.5, -0.5, 0.5, 1.5]
    idx = g.cell_index(np.array([[-100.0], [-1.0], [-0.999], [0.0], [1.99], [50.0]]))
    # edges belong to the cell on their right
    assert idx.tolist() == [0, 1, 1, 2, 3, 3]
    g2 = StateGrid(1.0, 2, dim=2)
    assert g2.cell_index(np.array([[-0.5, 0.5], [0.5, -0.5]])).tolist() == [1, 2]
    assert g2.centers.tolist() == [[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]]


def test_cell_masses_batched():
    g = StateGrid(1.0, 2)
    x = np.array([[[-0.5], [0.5], [0.7], [9.0]], [[-3.0], [-2.0], [-1.0], [0.2]]])
    assert g.cell_masses(x).tolist() == [[0.25, 0.75], [0.75, 0.25]]


def test_largest_remainder_ties_lowest_index():
    assert largest_remainder([0.5, 0.5], 1).tolist() == [1, 0]
    assert largest_remainder([1 / 3, 1 / 3, 1 / 3], 2).tolist() == [1, 1, 0]
    assert largest_remainder([0.1, 0.6, 0.3], 10).tolist() == [1, 6, 3]


def test_quantize_dequantize():
    g = StateGrid(2.0, 4)
    q = quantize(EmpiricalMeasure([[-1.5], [0.1], [0.2], [5.0]]), g, 4)
    assert q.counts == (1, 0, 2, 1)
    d = dequantize(q, g)
    assert d.atoms[:, 0].tolist() == g.axis_centers.tolist()
    assert d.weights.tolist() == [0.25, 0.0, 0.5, 0.25]


@pytest.mark.parametrize("n,cells", [(1, 1), (3, 2), (6, 5), (4, 4)])
def test_composition_count_stars_and_bars(n, cells):
    c = compositions(n, cells)
    assert len(c) == math.comb(n + cells - 1, cells - 1) == n_compositions(n, cells)
    assert np.all(c.sum(axis=1) == n)
    assert len({tuple(r) for r in c}) == len(c)
    # ascending lexicographic order
    assert [tuple(r) for r in c] == sorted(tuple(r) for r in c)


def test_composition_cap():
    with pytest.raises(SizeError):
        compositions(30, 10)


def test_index_round_trip():
    ix = MeasureIndex(StateGrid(1.0, 4), 5)
    assert ix.index_of(ix.comps).tolist() == list(range(len(ix)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=4, max_size=4).filter(lambda v: sum(v) > 0),
       st.integers(1, 7))
def test_projection_matches_bruteforce_including_ties(counts, n):
    ix = MeasureIndex(StateGrid(2.0, 4), n)
    p = np.array(counts, dtype=float) / sum(counts)
    assert ix.project(p) == ix.project_bruteforce(p)


def test_projection_tie_prefers_lexicographically_smallest():
    ix = MeasureIndex(StateGrid(1.0, 2), 1)
    # (0,1) and (1,0) are equidistant from (1/2, 1/2)
    assert ix.comps[ix.project(np.array([0.5, 0.5]))].tolist() == [0, 1]


def test_projection_two_dimensional_bruteforce(rng):
    ix = MeasureIndex(StateGrid(1.0, 2, dim=2), 2)
    p = rng.dirichlet(np.ones(4))
    d = ix.distances(p)
    assert d[ix.project(p)] == pytest.approx(d.min())


def test_quantized_measure_validation():
    with pytest.raises(ConfigError):
        QuantizedMeasure((0, 0))
    assert QuantizedMeasure((1, 2)).n == 3
