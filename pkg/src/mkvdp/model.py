"""Mean-field control problem data.

A :class:`ModelSpec` names four registered components (drift, diffusion,
running cost, terminal cost) plus an action set and declared constants.
Measures enter the components only through a small set of bounded
Lipschitz statistics (integrals of fixed test functions), so evaluating a
model on an empirical measure costs O(support size).

Shapes: states ``x`` are ``(..., d)``, actions ``u`` are ``(..., d_u)`` and
statistics are a dict of ``(..., d)`` arrays broadcastable against ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, ModelError

# sup |d/dx x^2/(1+x^2)| = sup |d/dx 1/(1+x^2)| = 3*sqrt(3)/8
_SAT_SLOPE = 3.0 * math.sqrt(3.0) / 8.0

STATISTICS = {
    "mean_tanh": np.tanh,
}


def measure_statistics(keys, atoms, weights=None, axis=-2):
    """Integrate each named test function against a weighted point cloud.

    ``atoms`` has shape ``(..., K, d)``; the particle axis is ``axis``.  The
    reduction runs along a contiguous last axis so results do not depend on
    how many independent systems are batched together.
    """
    atoms = np.asarray(atoms, dtype=float)
    out = {}
    for key in keys:
        vals = STATISTICS[key](atoms)
        if weights is not None:
            vals = vals * np.asarray(weights)[..., :, None]
        vals = np.ascontiguousarray(np.moveaxis(vals, axis, -1))
        total = vals.sum(axis=-1)
        out[key] = total if weights is not None else total / atoms.shape[axis]
    return out


@dataclass(frozen=True)
class ActionSet:
    """Compact action set: a coordinate box or an explicit finite list."""

    kind: str
    bounds: tuple = ()
    points: tuple = ()
    quantization_count: tuple = ()

    def __post_init__(self):
        if self.kind == "interval_box":
            if not self.bounds:
                raise ConfigError("interval_box action set needs bounds")
            for lo, hi in self.bounds:
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise ConfigError(f"bad action interval [{lo}, {hi}]")
            counts = self.quantization_count or (2,) * len(self.bounds)
            if len(counts) != len(self.bounds) or min(counts) < 1:
                raise ConfigError("quantization_count must be positive per coordinate")
            object.__setattr__(self, "quantization_count", tuple(int(c) for c in counts))
        elif self.kind == "finite":
            if not self.points:
                raise ConfigError("finite action set needs at least one point")
            dims = {len(p) for p in self.points}
            if len(dims) != 1:
                raise ConfigError("finite action points must share a dimension")
        else:
            raise ConfigError(f"unknown action set kind {self.kind!r}")

    @classmethod
    def box(cls, bounds, counts=None):
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return cls("interval_box", bounds=bounds,
                   quantization_count=tuple(counts) if counts else ())

    @classmethod
    def finite(cls, points):
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in points)
        return cls("finite", points=pts)

    @property
    def dim(self):
        return len(self.bounds) if self.kind == "interval_box" else len(self.points[0])

    def grid(self):
        """Finite action grid, shape ``(n_actions, dim)``.

        For a box this is the product of per-coordinate uniform grids that
        include both endpoints (a single point uses the interval midpoint).
        """
        if self.kind == "finite":
            return np.array(self.points, dtype=float)
        axes = []
        for (lo, hi), cnt in zip(self.bounds, self.quantization_count):
            axes.append(np.array([(lo + hi) / 2]) if cnt == 1 else np.linspace(lo, hi, cnt))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def contains(self, u, atol=1e-12):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind == "finite":
            pts = self.grid()
            d = np.abs(u[:, None, :] - pts[None]).max(axis=-1)
            return bool(np.all(d.min(axis=1) <= atol))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return bool(np.all((u >= lo - atol) & (u <= hi + atol)))

    def sup_norm(self):
        """Largest Euclidean norm of an admissible action."""
        if self.kind == "finite":
            return float(np.linalg.norm(self.grid(), axis=1).max())
        return math.sqrt(sum(max(lo * lo, hi * hi) for lo, hi in self.bounds))

    def sample(self, rng, size):
        if self.kind == "finite":
            pts = self.grid()
            return pts[rng.integers(0, len(pts), size=size)]
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + (hi - lo) * rng.random((size, self.dim))

    def to_dict(self):
        if self.kind == "finite":
            return {"kind": "finite", "points": [list(p) for p in self.points]}
        return {"kind": "interval_box", "bounds": [list(b) for b in self.bounds],
                "quantization_count": list(self.quantization_count)}

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") == "finite":
            return cls.finite(d["points"])
        return cls.box(d["bounds"], d.get("quantization_count"))


# ---------------------------------------------------------------------------
# Components.  Each exposes ``stats`` (statistic keys it reads), an evaluation
# method, and analytic Lipschitz/bound constants given (dim, action bound).
# Lipschitz constants are returned as (in state, in W1 of the measure).


class _Component:
    stats: tuple = ()
    defaults: dict = {}

    def __init__(self, dim, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"{type(self).__name__}: unknown parameter(s) {sorted(unknown)}")
        self.dim = dim
        self.params = {**self.defaults, **params}
        for k, v in self.params.items():
            setattr(self, k, v)


class SatDrift(_Component):
    """theta1*tanh(x) + theta2*E_mu[tanh] + u, coordinatewise."""

    stats = ("mean_tanh",)
    defaults = {"theta1": -1.0, "theta2": 0.5}

    def __call__(self, x, s, u):
        return self.theta1 * np.tanh(x) + self.theta2 * s["mean_tanh"] + u

    def lipschitz(self, u_bound):
        return abs(self.theta1), abs(self.theta2)

    def bound(self, u_bound):
        return math.sqrt(self.dim) * (abs(self.theta1) + abs(self.theta2)) + u_bound


class ConstantDrift(_Component):
    """value + control_gain*u."""

    defaults = {"value": 0.0, "control_gain": 0.0}

    def __call__(self, x, s, u):
        val = np.broadcast_to(np.asarray(self.value, dtype=float), (self.dim,))
        return val + self.control_gain * u + 0.0 * x

    def lipschitz(self, u_bound):
        return 0.0, 0.0

    def bound(self, u_bound):
        val = np.broadcast_to(np.asarray(self.value, dtype=float), (self.dim,))
        return float(np.linalg.norm(val)) + abs(self.control_gain) * u_bound


class SatDiffusion(_Component):
    """Diagonal sigma0 + sigma1/(1+x^2)."""

    diagonal = True
    defaults = {"sigma0": 0.5, "sigma1": 0.5}

    def __call__(self, x, s):
        return self.sigma0 + self.sigma1 / (1.0 + x * x)

    def lipschitz(self, u_bound):
        return _SAT_SLOPE * abs(self.sigma1), 0.0

    def bound(self, u_bound):
        return math.sqrt(self.dim) * max(abs(self.sigma0), abs(self.sigma0 + self.sigma1))

    def floor(self):
        """Smallest diagonal entry over all states (non-degeneracy level)."""
        return min(self.sigma0, self.sigma0 + self.sigma1)


class ConstantDiffusion(_Component):
    """value * I."""

    diagonal = True
    defaults = {"value": 0.0}

    def __call__(self, x, s):
        return np.full(np.shape(x), float(self.value))

    def lipschitz(self, u_bound):
        return 0.0, 0.0

    def bound(self, u_bound):
        return math.sqrt(self.dim) * abs(self.value)

    def floor(self):
        return abs(self.value)


class MatrixDiffusion(_Component):
    """A constant full d x d matrix (not diagonal)."""

    diagonal = False
    defaults = {"matrix": None}

    def __init__(self, dim, **params):
        super().__init__(dim, **params)
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (dim, dim):
            raise ConfigError(f"matrix diffusion needs shape ({dim}, {dim})")
        self.matrix = mat

    def __call__(self, x, s):
        return np.broadcast_to(self.matrix, np.shape(x)[:-1] + (self.dim, self.dim))

    def lipschitz(self, u_bound):
        return 0.0, 0.0

    def bound(self, u_bound):
        return float(np.linalg.norm(self.matrix))

    def floor(self):
        return float(np.linalg.svd(self.matrix, compute_uv=False).min())


class SatRunningCost(_Component):
    """kappa*sum x^2/(1+x^2) + lam*|u|^2 + gamma*|E_mu[tanh]|^2."""

    stats = ("mean_tanh",)
    defaults = {"kappa": 1.0, "lam": 0.5, "gamma": 0.5}

    def __call__(self, x, s, u):
        x2 = x * x
        m = s["mean_tanh"]
        return (self.kappa * np.sum(x2 / (1.0 + x2), axis=-1)
                + self.lam * np.sum(u * u, axis=-1)
                + self.gamma * np.sum(m * m, axis=-1))

    def lipschitz(self, u_bound):
        rd = math.sqrt(self.dim)
        return _SAT_SLOPE * abs(self.kappa) * rd, 2.0 * abs(self.gamma) * rd

    def bound(self, u_bound):
        return abs(self.kappa) * self.dim + abs(self.lam) * u_bound ** 2 + abs(self.gamma) * self.dim


class ConstantCost(_Component):
    defaults = {"value": 0.0}

    def __call__(self, x, s, u=None):
        return np.full(np.shape(x)[:-1], float(self.value))

    def lipschitz(self, u_bound):
        return 0.0, 0.0

    def bound(self, u_bound):
        return abs(self.value)


class SatTerminalCost(_Component):
    """kappa*sum x^2/(1+x^2)."""

    defaults = {"kappa": 1.0}

    def __call__(self, x, s):
        x2 = x * x
        return self.kappa * np.sum(x2 / (1.0 + x2), axis=-1)

    def lipschitz(self, u_bound):
        return _SAT_SLOPE * abs(self.kappa) * math.sqrt(self.dim), 0.0

    def bound(self, u_bound):
        return abs(self.kappa) * self.dim


DRIFTS = {"satmr": SatDrift, "constant": ConstantDrift}
DIFFUSIONS = {"satmr": SatDiffusion, "constant": ConstantDiffusion, "matrix": MatrixDiffusion}
RUNNING_COSTS = {"satmr": SatRunningCost, "constant": ConstantCost}
TERMINAL_COSTS = {"satmr": SatTerminalCost, "constant": ConstantCost}

_REGISTRIES = {"drift": DRIFTS, "diffusion": DIFFUSIONS,
               "running_cost": RUNNING_COSTS, "terminal_cost": TERMINAL_COSTS}


def _build(kind, key, dim, params):
    registry = _REGISTRIES[kind]
    if key not in registry:
        raise ConfigError(f"unknown {kind} key {key!r}; known: {sorted(registry)}")
    return registry[key](dim, **dict(params))


@dataclass(frozen=True)
class ModelSpec:
    """A registered parametric mean-field control problem.

    Constants not supplied in ``constants`` are filled from the components'
    analytic bounds, so a default-constructed model always declares
    constants that hold.
    """

    dim: int
    action_set: ActionSet
    drift_id: str = "satmr"
    diffusion_id: str = "satmr"
    running_cost_id: str = "satmr"
    terminal_cost_id: str = "satmr"
    drift_params: dict = field(default_factory=dict)
    diffusion_params: dict = field(default_factory=dict)
    running_cost_params: dict = field(default_factory=dict)
    terminal_cost_params: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    initial_state: tuple = ()

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigError("dim must be a positive integer")
        d = int(self.dim)
        for name in ("drift_params", "diffusion_params", "running_cost_params",
                     "terminal_cost_params"):
            object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))
        x0 = tuple(float(v) for v in (self.initial_state or (0.0,) * d))
        if len(x0) != d or not all(math.isfinite(v) for v in x0):
            raise ConfigError(f"initial_state must be {d} finite numbers")
        object.__setattr__(self, "initial_state", x0)
        if self.action_set.dim != d and self.drift_id == "satmr":
            raise ConfigError("satmr drift needs an action of the state dimension")
        comps = {
            "drift": _build("drift", self.drift_id, d, self.drift_params),
            "diffusion": _build("diffusion", self.diffusion_id, d, self.diffusion_params),
            "running_cost": _build("running_cost", self.running_cost_id, d, self.running_cost_params),
            "terminal_cost": _build("terminal_cost", self.terminal_cost_id, d, self.terminal_cost_params),
        }
        object.__setattr__(self, "_comps", comps)
        ub = self.action_set.sup_norm()
        lb = comps["drift"].lipschitz(ub)
        ls = comps["diffusion"].lipschitz(ub)
        lc = comps["running_cost"].lipschitz(ub)
        lt = comps["terminal_cost"].lipschitz(ub)
        analytic = {
            "C1": max(lb[0] + ls[0], lb[1] + ls[1]),
            "C2": comps["drift"].bound(ub) + comps["diffusion"].bound(ub),
            "C3": max(lc[0] + lt[0], lc[1] + lt[1]),
            "C4": comps["running_cost"].bound(ub) + comps["terminal_cost"].bound(ub),
        }
        declared = dict(self.constants)
        for k, v in declared.items():
            if k not in analytic:
                raise ConfigError(f"unknown constant {k!r}")
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"constant {k} must be a nonnegative real")
        object.__setattr__(self, "analytic_constants", MappingProxyType(analytic))
        object.__setattr__(self, "constants", MappingProxyType({**analytic, **declared}))
        keys = []
        for c in comps.values():
            for k in c.stats:
                if k not in keys:
                    keys.append(k)
        object.__setattr__(self, "stat_keys", tuple(keys))

    # -- evaluation -------------------------------------------------------
    @property
    def diagonal(self):
        return self._comps["diffusion"].diagonal

    def diffusion_floor(self):
        return self._comps["diffusion"].floor()

    def running_cost_bound(self):
        return self._comps["running_cost"].bound(self.action_set.sup_norm())

    def stats_of(self, atoms, weights=None, axis=-2):
        return measure_statistics(self.stat_keys, atoms, weights, axis)

    def drift(self, x, s, u):
        return self._comps["drift"](x, s, u)

    def diffusion(self, x, s):
        """Diagonal entries ``(..., d)`` if diagonal, else full ``(..., d, d)``."""
        return self._comps["diffusion"](x, s)

    def running_cost(self, x, s, u):
        return self._comps["running_cost"](x, s, u)

    def terminal_cost(self, x, s):
        return self._comps["terminal_cost"](x, s)

    def to_dict(self):
        return {
            "dim": self.dim,
            "action_set": self.action_set.to_dict(),
            "drift": {"id": self.drift_id, "params": dict(self.drift_params)},
            "diffusion": {"id": self.diffusion_id, "params": _plain(self.diffusion_params)},
            "running_cost": {"id": self.running_cost_id, "params": dict(self.running_cost_params)},
            "terminal_cost": {"id": self.terminal_cost_id, "params": dict(self.terminal_cost_params)},
            "constants": dict(self.constants),
            "initial_state": list(self.initial_state),
        }


def _plain(params):
    return {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
            for k, v in params.items()}


def satmr(dim=1, u_max=1.0, action_count=3, x0=1.0, **overrides):
    """The built-in saturated mean-reverting model with optional overrides.

    ``overrides`` may contain ``theta1, theta2, sigma0, sigma1, kappa, lam,
    gamma`` and ``constants``.
    """
    drift = {k: overrides.pop(k) for k in ("theta1", "theta2") if k in overrides}
    diff = {k: overrides.pop(k) for k in ("sigma0", "sigma1") if k in overrides}
    run = {k: overrides.pop(k) for k in ("kappa", "lam", "gamma") if k in overrides}
    term = {"kappa": run["kappa"]} if "kappa" in run else {}
    constants = overrides.pop("constants", {})
    if overrides:
        raise ConfigError(f"unknown satmr override(s) {sorted(overrides)}")
    return ModelSpec(
        dim=dim,
        action_set=ActionSet.box([(-u_max, u_max)] * dim, [action_count] * dim),
        drift_params=drift, diffusion_params=diff,
        running_cost_params=run, terminal_cost_params=term,
        constants=constants, initial_state=(x0,) * dim,
    )


def constant_model(dim=1, drift=0.0, diffusion=0.0, cost=0.0, terminal=0.0,
                   control_gain=0.0, actions=(0.0,), x0=0.0):
    """Model with constant coefficients; the workhorse of closed-form checks."""
    pts = [np.full(dim, a, dtype=float) if np.ndim(a) == 0 else a for a in actions]
    return ModelSpec(
        dim=dim, action_set=ActionSet.finite(pts),
        drift_id="constant", diffusion_id="constant",
        running_cost_id="constant", terminal_cost_id="constant",
        drift_params={"value": drift, "control_gain": control_gain},
        diffusion_params={"value": diffusion},
        running_cost_params={"value": cost},
        terminal_cost_params={"value": terminal},
        initial_state=(x0,) * dim,
    )


def evaluate_dynamics(model: ModelSpec, x, mu, u):
    """Drift vector and diffusion matrix at one point ``(x, mu, u)``.

    ``mu`` is an :class:`~mkvdp.measure.EmpiricalMeasure`.
    """
    x = np.asarray(x, dtype=float).reshape(model.dim)
    u = np.asarray(u, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ModelError("state must be finite")
    if not model.action_set.contains(u):
        raise ModelError(f"action {u.tolist()} outside the action set")
    s = model.stats_of(mu.atoms, mu.weights)
    b = np.asarray(model.drift(x, s, u), dtype=float)
    sig = np.asarray(model.diffusion(x, s), dtype=float)
    if model.diagonal:
        sig = np.diag(sig)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(sig))):
        raise ModelError("model produced a non-finite drift or diffusion")
    return b, sig


@dataclass
class AuditReport:
    samples: int
    ratios: dict
    bounds: dict
    declared: dict
    violations: list

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"samples": self.samples, "ratios": self.ratios, "bounds": self.bounds,
                "declared": self.declared, "violations": self.violations, "ok": self.ok}


def _random_measures(rng, size, k, dim, scale):
    atoms = rng.normal(0.0, scale, size=(size, k, dim))
    w = rng.random((size, k)) + 0.05
    return atoms, w / w.sum(axis=1, keepdims=True)


def _w1_batch_1d(a, wa, b, wb):
    """Exact W1 for a batch of small 1-d measure pairs, ``(S, K, 1)`` atoms."""
    pts = np.concatenate([a[..., 0], b[..., 0]], axis=1)
    jumps = np.concatenate([wa, -wb], axis=1)
    order = np.argsort(pts, axis=1, kind="stable")
    pts = np.take_along_axis(pts, order, axis=1)
    cdf = np.cumsum(np.take_along_axis(jumps, order, axis=1), axis=1)[:, :-1]
    return np.sum(np.abs(cdf) * np.diff(pts, axis=1), axis=1)


def validate_model(model: ModelSpec, samples: int = 10_000, seed: int = 0,
                   rtol: float = 0.01, support: int = 4) -> AuditReport:
    """Randomised audit of the declared Lipschitz and boundedness constants.

    Pairs ``(x, mu)``, ``(y, nu)`` are drawn with finite-support measures;
    half the pairs are small perturbations of each other so that local
    slopes are probed.  A Lipschitz ratio counts as a violation when it
    exceeds the declared constant by more than ``rtol``; a bound violation
    is any excess at all.
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    from .measure import EmpiricalMeasure, wasserstein1

    rng = np.random.default_rng(seed)
    d = model.dim
    S = samples
    scale = 2.0
    x = rng.normal(0.0, scale, size=(S, d))
    ma, wa = _random_measures(rng, S, support, d, scale)
    near = rng.random(S) < 0.5
    eps = np.where(near, 10.0 ** rng.uniform(-4, -1, size=S), 1.0)[:, None]
    y = np.where(near[:, None], x + eps * rng.normal(size=(S, d)), rng.normal(0.0, scale, size=(S, d)))
    mb_far, wb_far = _random_measures(rng, S, support, d, scale)
    mb = np.where(near[:, None, None], ma + eps[:, :, None] * rng.normal(size=(S, support, d)), mb_far)
    wb = np.where(near[:, None], wa, wb_far)
    u = model.action_set.sample(rng, S)

    if d == 1:
        w1 = _w1_batch_1d(ma, wa, mb, wb)
    else:
        w1 = np.array([wasserstein1(EmpiricalMeasure(ma[i], wa[i]), EmpiricalMeasure(mb[i], wb[i]))
                       for i in range(S)])
    sa = model.stats_of(ma, wa)
    sb = model.stats_of(mb, wb)

    def norm(v):
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))

    bx, by = model.drift(x, sa, u), model.drift(y, sb, u)
    gx, gy = model.diffusion(x, sa), model.diffusion(y, sb)
    cx, cy = model.running_cost(x, sa, u), model.running_cost(y, sb, u)
    tx, ty = model.terminal_cost(x, sa), model.terminal_cost(y, sb)

    denom = norm(x - y) + w1
    ok = denom > 0
    db = norm(bx - by)
    dg = norm(gx - gy)
    dc = np.abs(np.broadcast_to(cx - cy, (S,)))
    dt = np.abs(np.broadcast_to(tx - ty, (S,)))

    def ratio(num):
        return float(np.max(num[ok] / denom[ok])) if ok.any() else 0.0

    ratios = {"drift": ratio(db), "diffusion": ratio(dg), "running_cost": ratio(dc),
              "terminal_cost": ratio(dt), "C1": ratio(db + dg), "C3": ratio(dc + dt)}
    all_b = np.concatenate([norm(bx), norm(by)])
    all_g = np.concatenate([norm(gx), norm(gy)])
    all_c = np.concatenate([np.broadcast_to(np.abs(cx), (S,)), np.broadcast_to(np.abs(cy), (S,))])
    all_t = np.concatenate([np.broadcast_to(np.abs(tx), (S,)), np.broadcast_to(np.abs(ty), (S,))])
    for arr in (all_b, all_g, all_c, all_t):
        if not np.all(np.isfinite(arr)):
            raise ModelError("model produced non-finite values during the audit")
    bounds = {"drift": float(all_b.max()), "diffusion": float(all_g.max()),
              "running_cost": float(all_c.max()), "terminal_cost": float(all_t.max()),
              "C2": float((all_b + all_g).max()), "C4": float((all_c + all_t).max())}
    declared = dict(model.constants)
    violations = []
    for key in ("C1", "C3"):
        if ratios[key] > declared[key] * (1.0 + rtol):
            violations.append(f"{key}: observed Lipschitz ratio {ratios[key]:.6g} > declared {declared[key]:.6g}")
    for key in ("C2", "C4"):
        if bounds[key] > declared[key]:
            violations.append(f"{key}: observed bound {bounds[key]:.6g} > declared {declared[key]:.6g}")
    return AuditReport(S, ratios, bounds, declared, violations)
