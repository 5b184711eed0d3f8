"""Policies and Monte Carlo cost evaluation.

Three deterministic policy classes are supported: open-loop (one action per
step), Markov (an action table indexed by step, grid cell and quantized
measure) and stationary Markov (no step index).  Markov tables are looked
up by the particle's cell and by the W1-nearest quantized measure to the
system's empirical cell masses, so every state resolves to an action.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import em
from .errors import ConfigError, PolicyError
from .jsonio import dumps
from .measure import MeasureIndex, StateGrid
from .model import ModelSpec


class OpenLoopPolicy:
    """Action ``actions[k]`` at step ``k``; a single row applies at every step."""

    kind = "open_loop"

    def __init__(self, actions):
        a = np.asarray(actions, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] == 0:
            raise ConfigError("open-loop actions must be a nonempty (K, d_u) array")
        self.table = a

    @classmethod
    def constant(cls, u):
        return cls(np.atleast_1d(np.asarray(u, dtype=float))[None, :])

    def action(self, k):
        if self.table.shape[0] == 1:
            return self.table[0]
        if not 0 <= k < self.table.shape[0]:
            raise PolicyError(f"open-loop policy has no action for step {k}")
        return self.table[k]

    def actions(self, k, x):
        return np.broadcast_to(self.action(k), x.shape[:-1] + (self.table.shape[1],))

    def refine(self, factor):
        """The same control path on a grid ``factor`` times finer."""
        if self.table.shape[0] == 1:
            return self
        return OpenLoopPolicy(np.repeat(self.table, int(factor), axis=0))

    def to_dict(self):
        return {"kind": self.kind, "actions": self.table.tolist()}


class MarkovPolicy:
    """Action table over (step, quantized measure, cell).

    ``table`` is ``(K, n_measures, n_cells)`` for the time-dependent class
    or ``(n_measures, n_cells)`` when ``stationary``.
    """

    def __init__(self, table, action_grid, grid: StateGrid, n: int, stationary=False,
                 index: MeasureIndex | None = None):
        self.table = np.asarray(table, dtype=np.int64)
        self.action_grid = np.asarray(action_grid, dtype=float)
        self.grid = grid
        self.n = int(n)
        self.stationary = bool(stationary)
        self.index = index if index is not None else MeasureIndex(grid, n)
        want = 2 if self.stationary else 3
        if self.table.ndim != want:
            raise ConfigError(f"Markov table must have {want} axes")
        if self.table.shape[-2:] != (len(self.index), grid.n_cells):
            raise ConfigError("Markov table does not match the measure set and grid")
        if self.table.size and (self.table.min() < 0 or self.table.max() >= len(self.action_grid)):
            raise ConfigError("Markov table refers to actions outside the action grid")

    @property
    def kind(self):
        return "stationary_markov" if self.stationary else "markov"

    @property
    def n_steps(self):
        return None if self.stationary else self.table.shape[0]

    def rule(self, k, measure_index):
        if self.stationary:
            return self.table[measure_index]
        if not 0 <= k < self.table.shape[0]:
            raise PolicyError(f"Markov policy has no rule for step {k}")
        return self.table[k][measure_index]

    def lookup(self, x):
        """Cell indices ``(R, N)`` and measure indices ``(R,)`` for states ``(R, N, d)``."""
        cells = self.grid.cell_index(x)
        masses = self.grid.cell_masses(x)
        return cells, self.index.project(masses)

    def actions(self, k, x):
        cells, meas = self.lookup(x)
        table = self.table if self.stationary else self.table[self._step(k)]
        idx = table[meas[:, None], cells]
        return self.action_grid[idx]

    def _step(self, k):
        if not 0 <= k < self.table.shape[0]:
            raise PolicyError(f"Markov policy has no rule for step {k}")
        return k

    def to_dict(self):
        return {
            "kind": self.kind,
            "grid": self.grid.to_dict(),
            "measure_set": {"kind": "compositions", "n": self.n, "count": len(self.index),
                            "order": "lexicographic ascending"},
            "action_grid": self.action_grid.tolist(),
            "table": self.table.tolist(),
        }


def policy_from_dict(d):
    kind = d.get("kind")
    if kind == "open_loop":
        return OpenLoopPolicy(d["actions"])
    if kind in ("markov", "stationary_markov"):
        grid = StateGrid.from_dict(d["grid"])
        return MarkovPolicy(d["table"], d["action_grid"], grid, d["measure_set"]["n"],
                            stationary=(kind == "stationary_markov"))
    raise ConfigError(f"unknown policy kind {kind!r}")


def save_policy(policy, path, extra=None):
    d = policy.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(d))


def load_policy(path):
    with open(path, encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))


class PiecewiseConstantControl:
    """Continuous-time control ``t -> U_k`` for ``t`` in ``[t_k, t_{k+1})``."""

    def __init__(self, policy, grid: em.TimeGrid):
        self.policy = policy
        self.grid = grid

    def step_index(self, t):
        if t < 0 or t > self.grid.T:
            raise PolicyError(f"time {t} outside [0, {self.grid.T}]")
        return em.step_count(self.grid.h, t)

    def __call__(self, t):
        """Open-loop action at time ``t``."""
        if not isinstance(self.policy, OpenLoopPolicy):
            raise PolicyError("feedback policies need the state; use actions_at")
        return self.policy.action(self.step_index(t))

    def actions_at(self, t, x, model=None):
        return np.asarray(self.policy.actions(self.step_index(t), x), dtype=float)


def deploy_interpolated(policy, grid: em.TimeGrid) -> PiecewiseConstantControl:
    return PiecewiseConstantControl(policy, grid)


@dataclass
class CostEstimate:
    mean: float
    std_error: float | None
    replications: int
    criterion: str
    parameters: dict = field(default_factory=dict)
    tail_bound: float | None = None

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "replications": self.replications,
                "criterion": self.criterion, "parameters": self.parameters,
                "tail_bound": self.tail_bound}


def _estimate(per_rep, criterion, params, tail=None):
    R = len(per_rep)
    mean = float(np.mean(per_rep))
    se = float(np.std(per_rep, ddof=1) / math.sqrt(R)) if R >= 2 else None
    return CostEstimate(mean, se, R, criterion, params, tail)


def evaluate_finite_horizon(model: ModelSpec, grid: em.TimeGrid, policy, N: int,
                            replications: int, seed: int = 0, workers: int = 1) -> CostEstimate:
    """Per-agent finite-horizon cost, averaged over independent replications."""
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    bundle = em.simulate(model, grid, policy, N, seed, replications, workers=workers, record=False)
    per_rep = (bundle.running_costs.sum(axis=0) + bundle.terminal_costs).mean(axis=1)
    return _estimate(per_rep, "finite_horizon", {"T": grid.T, "h": grid.h, "N": N})


def discount_horizon(h, alpha, cost_bound, rel_tol=1e-6, max_steps=1_000_000):
    """Truncation length ``K`` with ``beta**K <= rel_tol`` and the tail bound it implies."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    beta = math.exp(-alpha * h)
    K = max(1, math.ceil(math.log(rel_tol) / math.log(beta)))
    while beta ** K > rel_tol:
        K += 1
    if K > max_steps:
        raise ConfigError(f"discount truncation needs {K} steps, above the cap {max_steps}")
    tail = beta ** K * h * cost_bound / (1.0 - beta)
    return K, beta, tail


def evaluate_discounted(model: ModelSpec, h: float, alpha: float, policy, N: int,
                        replications: int, horizon_steps: int | None = None, seed: int = 0,
                        workers: int = 1, rel_tol: float = 1e-6) -> CostEstimate:
    """Truncated discounted cost ``sum_{k<K} beta^k h c`` with its tail bound."""
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    bound = model.running_cost_bound()
    if horizon_steps is None:
        K, beta, tail = discount_horizon(h, alpha, bound, rel_tol)
    else:
        K = int(horizon_steps)
        beta = math.exp(-alpha * h)
        tail = beta ** K * h * bound / (1.0 - beta)
    grid = em.TimeGrid(h, K * h)
    weights = np.array([beta ** k for k in range(K)])
    bundle = em.simulate(model, grid, policy, N, seed, replications, workers=workers,
                         record=False, cost_weights=weights)
    per_rep = bundle.running_costs.sum(axis=0).mean(axis=1)
    return _estimate(per_rep, "discounted",
                     {"alpha": alpha, "h": h, "N": N, "beta": beta, "horizon_steps": K}, tail)
