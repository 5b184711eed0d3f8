"""Euler-Maruyama propagation of mean-field particle systems.

States are held as ``(R, N, d)`` arrays: ``R`` independent systems
(replications) of ``N`` particles each.  Within a replication the particles
interact only through their empirical measure.  Gaussian increments come
from the counter-based streams in :mod:`mkvdp.rng`, keyed by
``(seed, fine step, particle id, replication id)``; a run whose noise is
generated at a finer resolution ``noise_step`` sums the fine increments, so
runs at different step sizes can share one Brownian path.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import ConfigError, NumericalBlowup
from .measure import EmpiricalMeasure
from .model import ModelSpec


# relative slack when comparing n*h with T, so that h=0.1, T=0.3 gives 3 steps
STEP_RTOL = 1e-12


def step_count(h, T):
    """``sup{n : n*h <= T}``, robust to representation error in ``T/h``."""
    if h <= 0:
        raise ConfigError("step size h must be positive")
    T_eff = T + STEP_RTOL * max(abs(T), h)
    n = max(int(math.floor(T / h)), 0)
    while (n + 1) * h <= T_eff:
        n += 1
    while n > 0 and n * h > T_eff:
        n -= 1
    return n


def exact_ratio(h, h_fine):
    """Integer ``h / h_fine``, or a ConfigError when it is not an integer."""
    r = round(h / h_fine)
    if r < 1 or not math.isclose(r * h_fine, h, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError(f"fine step {h_fine} does not divide step {h}")
    return int(r)


@dataclass(frozen=True)
class TimeGrid:
    h: float
    T: float

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError("h must be positive")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ConfigError("T must be nonnegative")

    @property
    def n_steps(self):
        return step_count(self.h, self.T)

    def times(self):
        return np.arange(self.n_steps + 1) * self.h


@dataclass
class EnsembleState:
    """Particles of ``R`` independent systems plus their stream identities."""

    particles: np.ndarray
    k: int = 0
    seed: int = 0
    rep_ids: np.ndarray = None
    particle_ids: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.particles, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ConfigError("particles must be (N, d) or (R, N, d)")
        self.particles = x
        if self.rep_ids is None:
            self.rep_ids = np.arange(x.shape[0], dtype=np.uint64)
        if self.particle_ids is None:
            self.particle_ids = np.arange(x.shape[1], dtype=np.uint64)
        self.rep_ids = np.asarray(self.rep_ids, dtype=np.uint64)
        self.particle_ids = np.asarray(self.particle_ids, dtype=np.uint64)
        if len(np.unique(self.particle_ids)) != len(self.particle_ids):
            raise ConfigError("particle stream ids must be distinct")

    @classmethod
    def initial(cls, model: ModelSpec, N, seed=0, replications=1, rep_offset=0):
        x0 = np.broadcast_to(np.asarray(model.initial_state), (replications, N, model.dim)).copy()
        return cls(x0, 0, int(seed), np.arange(rep_offset, rep_offset + replications, dtype=np.uint64))

    @property
    def shape(self):
        return self.particles.shape

    def measure(self, r=0):
        return EmpiricalMeasure(self.particles[r])


def _apply_diffusion(model, sig, dW):
    if model.diagonal:
        return sig * dW
    return np.einsum("...ij,...j->...i", sig, dW)


def _actions_for(policy, k, x, model):
    u = np.asarray(policy.actions(k, x), dtype=float)
    return np.broadcast_to(u, x.shape[:-1] + (model.action_set.dim,))


def em_update(model: ModelSpec, x, u, h, dW):
    """One Euler-Maruyama step of every particle, coupling through its own system's measure.

    Returns ``(x_next, stats)`` where ``stats`` are the measure statistics
    used for the step.
    """
    s = {k: v[:, None, :] for k, v in model.stats_of(x).items()}
    b = model.drift(x, s, u)
    sig = model.diffusion(x, s)
    x_next = x + b * h + _apply_diffusion(model, sig, dW)
    if not np.all(np.isfinite(x_next)):
        raise NumericalBlowup("non-finite particle state after an Euler-Maruyama step")
    return x_next, s


def _draw(ens, h, noise_step, fine_start, dim):
    ratio = 1 if noise_step is None else exact_ratio(h, noise_step)
    hf = h if noise_step is None else noise_step
    return rng.increments(ens.seed, fine_start, ratio, hf, ens.rep_ids, ens.particle_ids, dim), ratio


def em_step_meanfield(model: ModelSpec, ensemble: EnsembleState, policy, grid: TimeGrid,
                      increments=None, noise_step=None) -> EnsembleState:
    """Advance every particle one step under a shared policy.

    The policy sees step ``k``, the particle states, and through them the
    empirical measure.  ``increments`` may be supplied directly (``(R, N, d)``);
    otherwise they are drawn from the ensemble's streams.
    """
    x = ensemble.particles
    if increments is None:
        ratio = 1 if noise_step is None else exact_ratio(grid.h, noise_step)
        increments, _ = _draw(ensemble, grid.h, noise_step, ensemble.k * ratio, model.dim)
    u = _actions_for(policy, ensemble.k, x, model)
    x_next, _ = em_update(model, x, u, grid.h, increments)
    return replace(ensemble, particles=x_next, k=ensemble.k + 1)


def em_step_nparticle(model: ModelSpec, ensemble: EnsembleState, policies, grid: TimeGrid,
                      increments=None, noise_step=None) -> EnsembleState:
    """One step where agent ``i`` follows ``policies[i]``.

    All agents still couple through the common empirical measure.  Each
    policy is asked for the actions of the whole system and agent ``i``
    keeps column ``i``, so Markov rules see the same measure they would in
    the symmetric case.
    """
    x = ensemble.particles
    if len(policies) != x.shape[1]:
        raise ConfigError("need one policy per agent")
    if increments is None:
        ratio = 1 if noise_step is None else exact_ratio(grid.h, noise_step)
        increments, _ = _draw(ensemble, grid.h, noise_step, ensemble.k * ratio, model.dim)
    u = np.empty(x.shape[:-1] + (model.action_set.dim,))
    cache = {}
    for i, pol in enumerate(policies):
        key = id(pol)
        if key not in cache:
            cache[key] = _actions_for(pol, ensemble.k, x, model)
        u[:, i] = cache[key][:, i]
    x_next, _ = em_update(model, x, u, grid.h, increments)
    return replace(ensemble, particles=x_next, k=ensemble.k + 1)


@dataclass
class TrajectoryBundle:
    """Snapshots at every grid time plus realised per-particle costs.

    ``states`` is ``(n_steps + 1, R, N, d)``, ``actions`` and ``running_costs``
    are ``(n_steps, R, N, ...)`` with costs already multiplied by the step
    length, and ``terminal_costs`` is ``(R, N)``.
    """

    grid: TimeGrid
    states: np.ndarray
    actions: np.ndarray
    running_costs: np.ndarray
    terminal_costs: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_snapshots(self):
        return self.states.shape[0]

    def measure(self, k, r=0):
        return EmpiricalMeasure(self.states[k, r])

    def per_particle_cost(self):
        return self.running_costs.sum(axis=0) + self.terminal_costs

    def per_replication_cost(self):
        """Per-agent average cost of each replication, shape ``(R,)``."""
        return self.per_particle_cost().mean(axis=1)

    def to_csv(self):
        """Rows ``step, replication, particle, x0..x{d-1}, cost``.

        ``cost`` is the running cost incurred over ``[t_k, t_{k+1})``, or the
        terminal cost on the final snapshot.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        K, R, N, d = self.states.shape
        w.writerow(["step", "time", "replication", "particle"] + [f"x{i}" for i in range(d)] + ["cost"])
        for k in range(K):
            t = format(k * self.grid.h, ".17g")
            cost = self.running_costs[k] if k < K - 1 else self.terminal_costs
            for r in range(R):
                for i in range(N):
                    w.writerow([k, t, r, i] + [format(v, ".17g") for v in self.states[k, r, i]]
                               + [format(cost[r, i], ".17g")])
        return buf.getvalue()

    def summary(self):
        per_rep = self.per_replication_cost()
        R = len(per_rep)
        return {
            "h": self.grid.h, "T": self.grid.T, "n_steps": self.grid.n_steps,
            "replications": R, "particles": int(self.states.shape[2]), "seed": self.seed,
            "snapshots": self.n_snapshots,
            "mean_cost": float(per_rep.mean()),
            "std_error": float(per_rep.std(ddof=1) / math.sqrt(R)) if R > 1 else None,
            "terminal_mean": [float(v) for v in self.states[-1].reshape(-1, self.states.shape[-1]).mean(axis=0)],
            **self.meta,
        }


def _simulate_block(model, grid, policy, N, seed, reps, noise_step, record, cost_weights=None):
    ens = EnsembleState.initial(model, N, seed, replications=len(reps), rep_offset=0)
    ens.rep_ids = np.asarray(reps, dtype=np.uint64)
    K = grid.n_steps
    ratio = 1 if noise_step is None else exact_ratio(grid.h, noise_step)
    hf = grid.h if noise_step is None else noise_step
    R, d = len(reps), model.dim
    states = np.empty((K + 1, R, N, d)) if record else None
    actions = np.empty((K, R, N, model.action_set.dim)) if record else None
    # without a record only the (weighted) running total is kept
    costs = np.empty((K, R, N)) if record else np.zeros((1, R, N))
    x = ens.particles
    if record:
        states[0] = x
    for k in range(K):
        u = _actions_for(policy, k, x, model)
        dW = rng.increments(seed, k * ratio, ratio, hf, ens.rep_ids, ens.particle_ids, d)
        x_next, s = em_update(model, x, u, grid.h, dW)
        c = model.running_cost(x, s, u) * grid.h
        if cost_weights is not None:
            c = c * cost_weights[k]
        if record:
            costs[k] = c
        else:
            costs[0] += c
        if record:
            actions[k] = u
            states[k + 1] = x_next
        x = x_next
    sT = {k_: v[:, None, :] for k_, v in model.stats_of(x).items()}
    term = np.broadcast_to(model.terminal_cost(x, sT), (R, N)).copy()
    if not record:
        states = x[None]
    return states, actions, costs, term


def _blocks(replications, workers):
    workers = max(1, min(int(workers), replications))
    edges = np.linspace(0, replications, workers + 1).astype(int)
    return [np.arange(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def simulate(model: ModelSpec, grid: TimeGrid, policy, N: int, seed: int = 0,
             replications: int = 1, noise_step=None, workers: int = 1,
             record: bool = True, cost_weights=None) -> TrajectoryBundle:
    """Iterate the particle scheme over the grid for ``replications`` independent systems.

    With ``record=False`` only the final state and the summed running cost
    (step costs scaled by ``cost_weights`` if given) are kept.

    Replications are split into blocks run on ``workers`` threads; every
    replication depends only on its own stream ids, so the output does not
    depend on ``workers``.
    """
    if N < 1 or replications < 1:
        raise ConfigError("N and replications must be >= 1")
    blocks = _blocks(replications, workers)
    run = lambda reps: _simulate_block(model, grid, policy, N, seed, reps, noise_step, record,
                                       cost_weights)  # noqa: E731
    if len(blocks) == 1:
        parts = [run(blocks[0])]
    else:
        with ThreadPoolExecutor(len(blocks)) as ex:
            parts = list(ex.map(run, blocks))
    states = np.concatenate([p[0] for p in parts], axis=1)
    actions = np.concatenate([p[1] for p in parts], axis=1) if record else None
    costs = np.concatenate([p[2] for p in parts], axis=1)
    term = np.concatenate([p[3] for p in parts], axis=0)
    return TrajectoryBundle(grid, states, actions, costs, term, seed,
                            {"noise_step": noise_step if noise_step is not None else grid.h})


def reference_simulate(model: ModelSpec, T: float, policy, h: float, h_ref: float, N: int,
                       seed: int = 0, replications: int = 1, workers: int = 1) -> TrajectoryBundle:
    """Fine-step proxy for the continuous-time process under a coarse policy.

    Steps of length ``h_ref`` are taken with the control frozen over each
    coarse interval ``[t_k, t_{k+1})`` (re-evaluated from the fine state at
    ``t_k``).  Snapshots are returned at the coarse times only; running
    costs are fine Riemann sums, grouped per coarse interval.  Noise is drawn
    at resolution ``h_ref``, so ``simulate(..., noise_step=h_ref)`` sees the
    same Brownian path.
    """
    ratio = exact_ratio(h, h_ref)
    if ratio != 1 and ratio < 16:
        raise ConfigError("h_ref must be h itself or at most h/16")
    grid = TimeGrid(h, T)
    if ratio == 1:
        return simulate(model, grid, policy, N, seed, replications, noise_step=h_ref, workers=workers)
    control = deploy(policy, grid)
    blocks = _blocks(replications, workers)

    def run(reps):
        R, d = len(reps), model.dim
        rep_ids = np.asarray(reps, dtype=np.uint64)
        pids = np.arange(N, dtype=np.uint64)
        K = grid.n_steps
        x = np.broadcast_to(np.asarray(model.initial_state), (R, N, d)).copy()
        states = np.empty((K + 1, R, N, d))
        actions = np.empty((K, R, N, model.action_set.dim))
        costs = np.zeros((K, R, N))
        states[0] = x
        for k in range(K):
            u = control.actions_at(k * h, x, model)
            actions[k] = u
            for j in range(ratio):
                dW = rng.increments(seed, k * ratio + j, 1, h_ref, rep_ids, pids, d)
                x_next, s = em_update(model, x, u, h_ref, dW)
                costs[k] += model.running_cost(x, s, u) * h_ref
                x = x_next
            states[k + 1] = x
        sT = {k_: v[:, None, :] for k_, v in model.stats_of(x).items()}
        term = np.broadcast_to(model.terminal_cost(x, sT), (R, N)).copy()
        return states, actions, costs, term

    if len(blocks) == 1:
        parts = [run(blocks[0])]
    else:
        with ThreadPoolExecutor(len(blocks)) as ex:
            parts = list(ex.map(run, blocks))
    return TrajectoryBundle(
        grid,
        np.concatenate([p[0] for p in parts], axis=1),
        np.concatenate([p[1] for p in parts], axis=1),
        np.concatenate([p[2] for p in parts], axis=1),
        np.concatenate([p[3] for p in parts], axis=0),
        seed, {"noise_step": h_ref, "reference": True})


def deploy(policy, grid):
    from .policy import deploy_interpolated
    return deploy_interpolated(policy, grid)
