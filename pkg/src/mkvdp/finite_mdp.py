"""Finite-model approximation on quantized measures.

The discrete-time problem is lifted to a deterministic control problem whose
state is a quantized measure (a composition of ``n`` over grid cells) and
whose action is a decision rule (an action index per cell).  One step
propagates the cell masses through the exact Gaussian one-step kernel,
integrated over the cells by CDF differences, and projects the result back
onto the enumerated measures.  Both the transition and the stage cost of
every (measure, rule) pair are tabulated once, after which backward
induction and value iteration are pure table operations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._backend import kernels
from .errors import ConfigError, SizeError, UnsupportedStructure
from .measure import EmpiricalMeasure, MeasureIndex, QuantizedMeasure, StateGrid, quantize
from .model import ModelSpec
from .policy import MarkovPolicy

RULE_CAP = 1_000_000
TABLE_CAP = 50_000_000


def check_structure(model: ModelSpec, grid: StateGrid):
    if grid.dim != model.dim:
        raise ConfigError("grid and model dimensions differ")
    if model.dim > 2:
        raise UnsupportedStructure("finite models support d <= 2 only")
    if not model.diagonal:
        raise UnsupportedStructure("finite models need a diagonal diffusion")
    if not model.diffusion_floor() > 0:
        raise UnsupportedStructure("finite models need a diffusion bounded away from zero")


def cell_probabilities(model: ModelSpec, grid: StateGrid, h, x, stats, u):
    """Cell masses of the one-step law ``N(x + b h, diag(sigma)^2 h)``.

    ``x`` is ``(..., d)``, ``u`` is ``(..., d_u)`` and ``stats`` holds arrays
    broadcastable against ``x``.  Mass beyond the box lands in the boundary
    cells.  Returns ``(..., m**d)`` in flat cell order.
    """
    x = np.asarray(x, dtype=float)
    mean = x + model.drift(x, stats, u) * h
    sd = np.broadcast_to(model.diffusion(x, stats), x.shape) * math.sqrt(h)
    cuts = np.concatenate(([-np.inf], grid.edges[1:-1], [np.inf]))
    out = None
    for k in range(grid.dim):
        z = (cuts - mean[..., k, None]) / sd[..., k, None]
        pk = np.diff(ndtr(z), axis=-1)
        out = pk if out is None else (out[..., :, None] * pk[..., None, :]).reshape(
            pk.shape[:-1] + (-1,))
    return out


def kernel_row(model: ModelSpec, grid: StateGrid, h, x, mu: EmpiricalMeasure, u):
    """One kernel row for an arbitrary state, measure and action."""
    s = model.stats_of(mu.atoms, mu.weights)
    return cell_probabilities(model, grid, h, np.asarray(x, dtype=float), s,
                              np.atleast_1d(np.asarray(u, dtype=float)))


class FiniteModel:
    """Quantized model with cached kernels and lift tables.

    ``P[mu, cell, action]`` is the kernel row from the centre of ``cell``
    under the dequantized measure ``mu``.  ``next_index[mu, rule]`` and
    ``stage_cost[mu, rule]`` tabulate the lifted step for every rule in
    ``rules`` (lexicographic order of action-index tuples).
    """

    def __init__(self, model: ModelSpec, grid: StateGrid, n: int, h: float, action_grid=None,
                 rule_cap: int = RULE_CAP, build: bool = True):
        check_structure(model, grid)
        if not (h > 0 and math.isfinite(h)):
            raise ConfigError("h must be positive")
        self.model = model
        self.grid = grid
        self.n = int(n)
        self.h = float(h)
        ag = model.action_set.grid() if action_grid is None else np.asarray(action_grid, dtype=float)
        if ag.ndim == 1:
            ag = ag[:, None]
        self.action_grid = ag
        self.index = MeasureIndex(grid, self.n)
        self.rule_cap = int(rule_cap)
        self.P = None
        self.rules = None
        self.next_index = None
        self.stage_cost = None
        if build:
            build_transition(model, self)

    @property
    def n_actions(self):
        return self.action_grid.shape[0]

    @property
    def n_measures(self):
        return len(self.index)

    @property
    def n_rules(self):
        return self.n_actions ** self.grid.n_cells

    def measure_stats(self):
        """Model statistics of every dequantized measure, each ``(M, 1, ...)``."""
        w = self.index.probabilities()
        atoms = np.broadcast_to(self.grid.centers, (len(w),) + self.grid.centers.shape)
        return {k: v[:, None, :] for k, v in self.model.stats_of(atoms, w).items()}

    def terminal_values(self):
        """Lifted terminal cost ``<c_T(., mu), mu>`` per measure."""
        w = self.index.probabilities()
        cT = self.model.terminal_cost(self.grid.centers[None], self.measure_stats())
        return np.sum(w * np.broadcast_to(cT, w.shape), axis=-1)

    def initial_index(self, x0=None):
        x0 = self.model.initial_state if x0 is None else x0
        q = quantize(EmpiricalMeasure.dirac(x0), self.grid, self.n)
        return int(self.index.index_of(np.array(q.counts)))

    def rule_actions(self, rule_idx):
        """Action-index vector of rule(s) by their position in ``rules``."""
        return self.rules[rule_idx]

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(), "n": self.n, "h": self.h,
            "action_grid": self.action_grid.tolist(),
            "measure_count": self.n_measures, "rule_count": self.n_rules,
            "measure_order": "lexicographic ascending",
            "model": self.model.to_dict(),
        }


def build_transition(model: ModelSpec, fm: FiniteModel) -> FiniteModel:
    """Fill the kernel cache and the lifted transition and cost tables."""
    check_structure(model, fm.grid)
    cells, A, M = fm.grid.n_cells, fm.n_actions, fm.n_measures
    if fm.n_rules > fm.rule_cap:
        raise SizeError(f"{A}^{cells} = {fm.n_rules} decision rules exceed the cap {fm.rule_cap}")
    if M * fm.n_rules * cells > TABLE_CAP:
        raise SizeError(f"lift tables of {M} x {fm.n_rules} entries are too large")
    s = {k: v[:, :, None] for k, v in fm.measure_stats().items()}
    x = np.broadcast_to(fm.grid.centers[None, :, None, :], (M, cells, A, model.dim))
    u = np.broadcast_to(fm.action_grid[None, None], (M, cells, A, fm.action_grid.shape[1]))
    fm.P = cell_probabilities(model, fm.grid, fm.h, x, s, u)
    crun = np.broadcast_to(model.running_cost(x, s, u), (M, cells, A))

    rules = np.array(list(itertools.product(range(A), repeat=cells)), dtype=np.int64)
    fm.rules = rules
    w = fm.index.probabilities()
    Q = w[:, :, None, None] * fm.P
    nxt = np.empty((M, len(rules)), dtype=np.int64)
    cost = np.zeros((M, len(rules)))
    chunk = max(1, TABLE_CAP // 10 // max(1, len(rules) * cells))
    for a in range(0, M, chunk):
        b = min(M, a + chunk)
        masses = np.zeros((b - a, len(rules), cells))
        for c in range(cells):
            masses += Q[a:b, c, rules[:, c], :]
            cost[a:b] += w[a:b, c, None] * crun[a:b, c][:, rules[:, c]]
        nxt[a:b] = fm.index.project(masses)
    fm.next_index = nxt
    fm.stage_cost = cost * fm.h
    return fm


def lift_step(fm: FiniteModel, mu: QuantizedMeasure, rule):
    """Next quantized measure and stage cost from ``mu`` under ``rule``.

    Computed directly from the kernel cache, independent of the lift tables.
    """
    rule = np.asarray(rule, dtype=np.int64)
    counts = np.asarray(mu.counts, dtype=np.int64)
    if counts.sum() != fm.n or len(counts) != fm.grid.n_cells:
        raise ConfigError("measure does not belong to this finite model")
    i = int(fm.index.index_of(counts))
    w = counts / fm.n
    cells = np.arange(fm.grid.n_cells)
    masses = w @ fm.P[i, cells, rule]
    nxt = fm.index.comps[int(fm.index.project(masses))]
    s = {k: v[i] for k, v in fm.measure_stats().items()}
    c = fm.model.running_cost(fm.grid.centers, s, fm.action_grid[rule])
    return QuantizedMeasure(tuple(nxt)), float(fm.h * np.sum(w * c))


@dataclass
class ValueTable:
    """Values over measure indices: one row per stage, or one stationary row."""

    criterion: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def value(self, mu_index, k=0):
        v = self.values if self.values.ndim == 1 else self.values[k]
        return float(v[mu_index])

    def to_dict(self, fm: FiniteModel | None = None):
        d = {"criterion": self.criterion, "values": self.values.tolist(), "meta": self.meta}
        if fm is not None:
            d["finite_model"] = {k: v for k, v in fm.to_dict().items() if k != "model"}
            d["measures"] = fm.index.comps.tolist()
        return d


def _policy(fm, rule_idx, stationary):
    table = fm.rules[rule_idx]
    if not stationary and table.ndim == 2:
        table = table[None]
    return MarkovPolicy(table, fm.action_grid, fm.grid, fm.n, stationary=stationary, index=fm.index)


def solve_finite_horizon(fm: FiniteModel, n_steps: int):
    """Backward induction over ``n_steps`` stages.

    Returns the per-stage value table (stage ``n_steps`` holds the lifted
    terminal cost) and the Markov policy of first-minimising rules.
    """
    if n_steps < 0:
        raise ConfigError("stage count must be nonnegative")
    M = fm.n_measures
    V = np.empty((n_steps + 1, M))
    V[n_steps] = fm.terminal_values()
    idx = np.empty((n_steps, M), dtype=np.int64)
    for k in range(n_steps - 1, -1, -1):
        V[k], idx[k] = kernels.minplus_backup(fm.stage_cost, fm.next_index, V[k + 1])
    table = fm.rules[idx] if n_steps else np.zeros((0, M, fm.grid.n_cells), dtype=np.int64)
    pol = MarkovPolicy(table, fm.action_grid, fm.grid, fm.n, index=fm.index)
    vt = ValueTable("finite_horizon", V, {"stages": n_steps, "h": fm.h})
    return vt, pol


def solve_discounted(fm: FiniteModel, alpha: float, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Value iteration from zero, in double-double arithmetic.

    Stops once the sup-norm residual is at most ``tol (1 - beta) / (2 beta)``,
    which puts the returned table within ``tol`` of the fixed point.  The
    residual of every iteration and its ratio to the previous one are kept
    in the metadata.
    """
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    beta = math.exp(-alpha * fm.h)
    if not beta < 1:
        raise ConfigError("discount factor must be below 1")
    stop = tol * (1 - beta) / (2 * beta) if beta > 0 else math.inf
    M = fm.n_measures
    hi, lo = np.zeros(M), np.zeros(M)
    residuals, ratios = [], []
    for _ in range(max_iter):
        nhi, nlo, idx = kernels.bellman_dd(fm.stage_cost, fm.next_index, hi, lo, beta)
        r = kernels.dd_sup_diff(nhi, nlo, hi, lo)
        if residuals:
            ratios.append(r / residuals[-1] if residuals[-1] > 0 else 0.0)
        residuals.append(r)
        hi, lo = nhi, nlo
        if r <= stop:
            break
    else:
        raise SizeError(f"value iteration did not converge in {max_iter} iterations")
    _, _, idx = kernels.bellman_dd(fm.stage_cost, fm.next_index, hi, lo, beta)
    meta = {"alpha": alpha, "beta": beta, "h": fm.h, "tol": tol, "iterations": len(residuals),
            "residuals": residuals, "ratios": ratios,
            "max_ratio": max(ratios) if ratios else 0.0}
    return ValueTable("discounted", hi + lo, meta), _policy(fm, idx, stationary=True)


def rollout_cost(fm: FiniteModel, mu_index: int, rule_sequence, terminal=True):
    """Total lifted cost of a rule-index sequence from ``mu_index``."""
    total, i = 0.0, int(mu_index)
    for r in rule_sequence:
        total += fm.stage_cost[i, r]
        i = int(fm.next_index[i, r])
    if terminal:
        total += fm.terminal_values()[i]
    return total
