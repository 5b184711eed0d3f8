"""TOML run configuration.

A run file has the sections ``[model]``, ``[discretization]``,
``[execution]`` and optionally ``[policy]``, ``[evaluate]`` and
``[experiment]``.  A model either names ``preset = "satmr"`` (every other
model key then defaults to the preset) or spells out ``dim``,
``initial_state``, ``actions`` and the four component tables.  Command-line
flags override file values, which override registry defaults.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import em
from .errors import ConfigError
from .model import DIFFUSIONS, DRIFTS, RUNNING_COSTS, TERMINAL_COSTS, ActionSet, ModelSpec

PRESETS = {
    "satmr": {
        "dim": 1,
        "initial_state": [1.0],
        "actions": {"kind": "interval_box", "bounds": [[-1.0, 1.0]], "count": [3]},
        "drift": {"id": "satmr"},
        "diffusion": {"id": "satmr"},
        "running_cost": {"id": "satmr"},
        "terminal_cost": {"id": "satmr"},
    },
}

_COMPONENTS = (("drift", DRIFTS), ("diffusion", DIFFUSIONS),
               ("running_cost", RUNNING_COSTS), ("terminal_cost", TERMINAL_COSTS))


def _req(d, key, where):
    if key not in d:
        raise ConfigError(f"missing key '{where}.{key}'")
    return d[key]


def _num(d, key, where, default=None, kind=float, check=None, what=""):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key '{where}.{key}'")
        return default
    v = d[key]
    try:
        v = kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"'{where}.{key}' must be a number") from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"'{where}.{key}' must be finite")
    if check is not None and not check(v):
        raise ConfigError(f"'{where}.{key}' must be {what}")
    return v


def _positive(v):
    return v > 0


def _at_least_one(v):
    return v >= 1


def build_model(section) -> ModelSpec:
    if not isinstance(section, dict):
        raise ConfigError("'model' must be a table")
    preset = section.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown model preset {preset!r}; known: {sorted(PRESETS)}")
        merged = {**PRESETS[preset]}
        for k, v in section.items():
            if k in ("drift", "diffusion", "running_cost", "terminal_cost") and isinstance(v, dict):
                merged[k] = {**merged.get(k, {}), **v}
            else:
                merged[k] = v
        section = merged
    dim = _num(section, "dim", "model", kind=int, check=_at_least_one, what=">= 1")
    acts = _req(section, "actions", "model")
    kind = _req(acts, "kind", "model.actions")
    if kind == "finite":
        action_set = ActionSet.finite(_req(acts, "points", "model.actions"))
    elif kind == "interval_box":
        action_set = ActionSet.box(_req(acts, "bounds", "model.actions"), acts.get("count"))
    else:
        raise ConfigError(f"unknown action set kind {kind!r}")
    kw = {}
    for name, registry in _COMPONENTS:
        comp = _req(section, name, "model")
        key = _req(comp, "id", f"model.{name}")
        if key not in registry:
            raise ConfigError(f"unknown {name} id {key!r}; known: {sorted(registry)}")
        kw[f"{name}_id"] = key
        kw[f"{name}_params"] = dict(comp.get("params", {}))
    x0 = _req(section, "initial_state", "model")
    return ModelSpec(dim=dim, action_set=action_set, constants=dict(section.get("constants", {})),
                     initial_state=tuple(x0), **kw)


@dataclass
class RunConfig:
    model: ModelSpec
    h: float
    T: float
    alpha: float
    L: float
    m: int
    n: int
    N: int
    replications: int
    seed: int
    workers: int
    out: str
    noise_step: float | None = None
    policy: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def grid(self):
        return em.TimeGrid(self.h, self.T)

    def echo(self):
        """Resolved settings written next to every artifact (worker count excluded)."""
        return {"model": self.model.to_dict(), "h": self.h, "T": self.T, "alpha": self.alpha,
                "L": self.L, "m": self.m, "n": self.n, "N": self.N,
                "replications": self.replications, "seed": self.seed,
                "noise_step": self.noise_step}


def from_dict(raw: dict, seed=None, workers=None, out=None) -> RunConfig:
    model = build_model(_req(raw, "model", "config"))
    disc = raw.get("discretization", {})
    exe = raw.get("execution", {})
    h = _num(disc, "h", "discretization", check=_positive, what="positive")
    T = _num(disc, "T", "discretization", default=1.0, check=lambda v: v >= 0, what="nonnegative")
    noise = disc.get("noise_step")
    if noise is not None:
        noise = _num(disc, "noise_step", "discretization", check=_positive, what="positive")
        em.exact_ratio(h, noise)
    cfg = RunConfig(
        model=model, h=h, T=T,
        alpha=_num(disc, "alpha", "discretization", default=1.0, check=_positive, what="positive"),
        L=_num(disc, "L", "discretization", default=2.0, check=_positive, what="positive"),
        m=_num(disc, "m", "discretization", default=5, kind=int, check=_at_least_one, what=">= 1"),
        n=_num(disc, "n", "discretization", default=6, kind=int, check=_at_least_one, what=">= 1"),
        N=_num(exe, "N", "execution", default=64, kind=int, check=_at_least_one, what=">= 1"),
        replications=_num(exe, "replications", "execution", default=16, kind=int,
                          check=_at_least_one, what=">= 1"),
        seed=_num(exe, "seed", "execution", default=0, kind=int,
                  check=lambda v: 0 <= v < 2 ** 64, what="an unsigned 64-bit integer"),
        workers=_num(exe, "workers", "execution", default=1, kind=int,
                     check=_at_least_one, what=">= 1"),
        out=str(exe.get("out", "out")),
        noise_step=noise,
        policy=dict(raw.get("policy", {})),
        evaluate=dict(raw.get("evaluate", {})),
        experiment=dict(raw.get("experiment", {})),
        raw=raw,
    )
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = int(seed)
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = int(workers)
    if out is not None:
        cfg.out = str(out)
    return cfg


def load(path, **overrides) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file is not valid TOML: {exc}") from None
    return from_dict(raw, **overrides)
