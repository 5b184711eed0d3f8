"""Command-line front end.

Exit codes: 0 success, 1 tolerance-band failure, 2 configuration error,
3 numeric or runtime error.  Every artifact is a deterministic function of
the config file and seed; the worker count never appears in the output.
"""

from __future__ import annotations

import json
import os
import sys
import traceback

import click
import numpy as np

from . import config as cfgmod
from . import em, harness, jsonio
from .errors import ConfigError, MkvError, UnsupportedStructure
from .finite_mdp import FiniteModel, solve_discounted, solve_finite_horizon
from .measure import StateGrid
from .model import validate_model
from .policy import (OpenLoopPolicy, evaluate_discounted, evaluate_finite_horizon, load_policy,
                     save_policy)

EXIT_OK, EXIT_BAND, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _provenance(exc):
    mod = "mkvdp"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = frame.filename.replace(os.sep, "/").split("/")
        if "mkvdp" in parts:
            mod = "mkvdp." + os.path.splitext(parts[-1])[0]
    return mod


def _fail(exc, code):
    msg = {"error": type(exc).__name__, "module": _provenance(exc), "message": str(exc),
           "exit_code": code}
    click.echo(json.dumps(msg), err=True)
    sys.exit(code)


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, UnsupportedStructure) as exc:
            _fail(exc, EXIT_CONFIG)
        except (MkvError, ArithmeticError, ValueError, LookupError, OSError) as exc:
            _fail(exc, EXIT_RUNTIME)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _common(fn):
    fn = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (default: execution.out).")(fn)
    fn = click.option("--workers", type=int, default=None, help="Worker threads.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Unsigned 64-bit seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True,
                      help="TOML run configuration.")(fn)
    return fn


def _load(config_path, seed, workers, out):
    cfg = cfgmod.load(config_path, seed=seed, workers=workers, out=out)
    os.makedirs(cfg.out, exist_ok=True)
    return cfg


def _write_text(cfg, name, text):
    with open(os.path.join(cfg.out, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(cfg, name, obj):
    _write_text(cfg, name, jsonio.dumps(obj))


def _policy(cfg, config_path):
    p = cfg.policy
    kind = p.get("kind", "constant")
    if kind == "constant":
        if "u" in p:
            u = p["u"]
        else:
            g = cfg.model.action_set.grid()
            zero = np.zeros(cfg.model.action_set.dim)
            u = zero if cfg.model.action_set.contains(zero) else g[0]
        pol = OpenLoopPolicy.constant(u)
    elif kind == "open_loop":
        pol = OpenLoopPolicy(p["actions"])
    elif kind == "file":
        path = p.get("path")
        if path is None:
            raise ConfigError("missing key 'policy.path'")
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(config_path)), path)
        pol = load_policy(path)
    else:
        raise ConfigError(f"unknown policy kind {kind!r}")
    if isinstance(pol, OpenLoopPolicy) and not cfg.model.action_set.contains(pol.table):
        raise ConfigError("policy actions lie outside the action set")
    return pol


def _fmt(v):
    return format(float(v), ".17g")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Discretized mean-field control: simulation, finite-model DP and experiments."""


@main.command()
@_common
@_guard
def simulate(config_path, seed, workers, out):
    """Simulate the particle system; write trajectory.csv and summary.json."""
    cfg = _load(config_path, seed, workers, out)
    pol = _policy(cfg, config_path)
    b = em.simulate(cfg.model, cfg.grid, pol, cfg.N, cfg.seed, cfg.replications,
                    noise_step=cfg.noise_step, workers=cfg.workers)
    _write_text(cfg, "trajectory.csv", b.to_csv())
    _write_json(cfg, "summary.json", {"summary": b.summary(), "config": cfg.echo()})
    click.echo(f"mean_cost {_fmt(b.summary()['mean_cost'])}")


def _finite_model(cfg):
    grid = StateGrid(cfg.L, cfg.m, cfg.model.dim)
    return FiniteModel(cfg.model, grid, cfg.n, cfg.h)


@main.command("solve-finite")
@_common
@_guard
def solve_finite(config_path, seed, workers, out):
    """Solve the finite-horizon finite model; write policy.json and values.json."""
    cfg = _load(config_path, seed, workers, out)
    fm = _finite_model(cfg)
    vt, pol = solve_finite_horizon(fm, cfg.grid.n_steps)
    i0 = fm.initial_index()
    save_policy(pol, os.path.join(cfg.out, "policy.json"), {"h": cfg.h, "T": cfg.T})
    _write_json(cfg, "values.json", {**vt.to_dict(fm), "initial_index": i0,
                                     "initial_value": vt.value(i0), "config": cfg.echo()})
    click.echo(f"value {_fmt(vt.value(i0))}")


@main.command("solve-discounted")
@_common
@_guard
def solve_disc(config_path, seed, workers, out):
    """Solve the discounted finite model by value iteration."""
    cfg = _load(config_path, seed, workers, out)
    fm = _finite_model(cfg)
    tol = float(cfg.raw.get("discretization", {}).get("vi_tol", 1e-10))
    vt, pol = solve_discounted(fm, cfg.alpha, tol)
    i0 = fm.initial_index()
    save_policy(pol, os.path.join(cfg.out, "policy.json"), {"h": cfg.h, "alpha": cfg.alpha})
    _write_json(cfg, "values.json", {**vt.to_dict(fm), "initial_index": i0,
                                     "initial_value": vt.value(i0), "config": cfg.echo()})
    click.echo(f"value {_fmt(vt.value(i0))}")


@main.command()
@_common
@_guard
def evaluate(config_path, seed, workers, out):
    """Monte Carlo cost of the configured policy; write cost.json and cost.csv."""
    cfg = _load(config_path, seed, workers, out)
    pol = _policy(cfg, config_path)
    criterion = cfg.evaluate.get("criterion", "finite_horizon")
    if criterion == "finite_horizon":
        est = evaluate_finite_horizon(cfg.model, cfg.grid, pol, cfg.N, cfg.replications,
                                      cfg.seed, cfg.workers)
    elif criterion == "discounted":
        steps = cfg.evaluate.get("horizon_steps")
        est = evaluate_discounted(cfg.model, cfg.h, cfg.alpha, pol, cfg.N, cfg.replications,
                                  horizon_steps=steps, seed=cfg.seed, workers=cfg.workers,
                                  rel_tol=float(cfg.evaluate.get("rel_tol", 1e-6)))
    else:
        raise ConfigError(f"unknown evaluate.criterion {criterion!r}")
    d = est.to_dict()
    _write_json(cfg, "cost.json", {**d, "config": cfg.echo()})
    se = "" if est.std_error is None else _fmt(est.std_error)
    tail = "" if est.tail_bound is None else _fmt(est.tail_bound)
    _write_text(cfg, "cost.csv", "criterion,mean,std_error,replications,tail_bound\n"
                f"{est.criterion},{_fmt(est.mean)},{se},{est.replications},{tail}\n")
    click.echo(f"mean {_fmt(est.mean)} std_error {se or 'n/a'}")


_PLAN_KEYS = ("T", "h_list", "h_ref", "h", "N_list", "N", "replications", "seeds", "seed", "L",
              "m", "n", "alpha", "vi_tol", "mc_replications", "mc_particles", "band",
              "chaos_share")


def build_plan(cfg, experiment_id):
    ex = dict(cfg.experiment)
    base = {"T": cfg.T, "h": cfg.h, "N": cfg.N, "replications": cfg.replications,
            "seed": cfg.seed, "L": cfg.L, "m": cfg.m, "n": cfg.n, "alpha": cfg.alpha}
    unknown = sorted(set(ex) - set(_PLAN_KEYS) - {"id"})
    if unknown:
        raise ConfigError(f"unknown experiment key(s) {unknown}")
    kw = {**base, **{k: v for k, v in ex.items() if k != "id"}}
    if isinstance(kw.get("seeds"), int):
        kw["seeds"] = tuple(range(kw["seeds"]))
    if "band" in kw:
        kw["band"] = tuple(kw["band"])
    return harness.ExperimentPlan(experiment_id, model=cfg.model, workers=cfg.workers, **kw)


@main.command()
@click.argument("experiment_id", required=False)
@_common
@_guard
def experiment(experiment_id, config_path, seed, workers, out):
    """Run an experiment (default: experiment.id); write report.json and report.csv."""
    cfg = _load(config_path, seed, workers, out)
    eid = experiment_id or cfg.experiment.get("id")
    if eid is None:
        raise ConfigError("missing key 'experiment.id'")
    if eid not in harness.EXPERIMENTS:
        raise ConfigError(f"unknown experiment {eid!r}; known: {list(harness.EXPERIMENTS)}")
    plan = build_plan(cfg, eid)
    rep = harness.run(plan)
    plan_d = plan.to_dict()
    plan_d.pop("workers")
    _write_json(cfg, "report.json", {**rep.to_dict(), "plan": plan_d})
    _write_text(cfg, "report.csv", rep.to_csv())
    click.echo(f"{eid} {rep.status} slope {rep.slope if rep.slope is None else _fmt(rep.slope)}")
    if rep.degenerate:
        click.echo("warning: degenerate ladder (all estimates zero); slope undefined", err=True)
        sys.exit(EXIT_OK)
    sys.exit(EXIT_OK if rep.passed else EXIT_BAND)


@main.command("validate-model")
@_common
@click.option("--samples", type=int, default=10_000, help="Random pairs per audit.")
@_guard
def validate(config_path, seed, workers, out, samples):
    """Audit declared Lipschitz and bound constants; write audit.json."""
    cfg = _load(config_path, seed, workers, out)
    rep = validate_model(cfg.model, samples=samples, seed=cfg.seed)
    _write_json(cfg, "audit.json", {**rep.to_dict(), "config": cfg.echo()})
    click.echo("ok" if rep.ok else f"violations {', '.join(rep.violations)}")
    sys.exit(EXIT_OK if rep.ok else EXIT_BAND)


if __name__ == "__main__":
    main()
