import hashlib
import json
import math
import os

import pytest
from click.testing import CliRunner

from mkvdp.cli import main

BASE = """
[model]
preset = "satmr"

[discretization]
h = 0.25
T = 1.0
alpha = 1.0
L = 2.0
m = 3
n = 3

[execution]
N = 16
replications = 4
seed = 7
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def _digest(folder):
    out = {}
    for name in sorted(os.listdir(folder)):
        with open(os.path.join(folder, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


EXPERIMENT = """
[experiment]
id = "strong_error"
h_list = [0.25, 0.125, 0.0625, 0.03125]
h_ref = 0.001953125
N = 8
replications = 16
"""


@pytest.mark.parametrize("cmd", ["simulate", "solve-finite", "solve-discounted", "evaluate",
                                 "experiment", "validate-model"])
def test_byte_identical_reruns(tmp_path, cmd):
    cfg = _write(tmp_path, BASE + EXPERIMENT)
    extra = ["--samples", "200"] if cmd == "validate-model" else []
    digests = []
    for i, w in enumerate((1, 1, 4)):
        out = tmp_path / f"o{i}"
        r = _run([cmd, "--config", cfg, "--workers", str(w), "--out", str(out)] + extra)
        assert r.exit_code in (0, 1), r.output
        digests.append(_digest(out))
    assert digests[0] == digests[1] == digests[2]
    assert digests[0]


def test_missing_key_names_it(tmp_path):
    cfg = _write(tmp_path, BASE.replace("h = 0.25\n", ""))
    r = CliRunner().invoke(main, ["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    err = json.loads(r.stderr.strip().splitlines()[-1])
    assert "discretization.h" in err["message"] and err["module"].startswith("mkvdp.")


def test_unknown_experiment_is_config_error(tmp_path):
    cfg = _write(tmp_path, BASE)
    r = CliRunner().invoke(main, ["experiment", "warp_drive", "--config", cfg, "--out", str(tmp_path)])
    assert r.exit_code == 2


def test_unsupported_structure_is_config_error(tmp_path):
    cfg = _write(tmp_path, BASE.replace('preset = "satmr"', 'preset = "satmr"\ndim = 3\n'
                                         'initial_state = [1.0, 1.0, 1.0]\n'
                                         'actions = {kind = "interval_box", bounds = [[-1, 1], [-1, 1], [-1, 1]], count = [2, 2, 2]}'))
    r = CliRunner().invoke(main, ["solve-finite", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 2
    assert json.loads(r.stderr.strip())["error"] == "UnsupportedStructure"


def test_horizon_shorter_than_step(tmp_path):
    cfg = _write(tmp_path, BASE.replace("T = 1.0", "T = 0.1"))
    r = _run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["summary"]["n_steps"] == 0


ZERO_COST = """
[model]
dim = 1
initial_state = [0.0]
actions = {kind = "finite", points = [[-1.0], [1.0]]}
drift = {id = "constant", params = {value = 0.0, control_gain = 1.0}}
diffusion = {id = "constant", params = {value = 1.0}}
running_cost = {id = "constant", params = {value = COST}}
terminal_cost = {id = "constant", params = {value = 0.0}}

[discretization]
h = 0.25
T = 1.0
L = 1.0
m = M
n = N

[execution]
N = 4
replications = 2
"""


def test_zero_cost_value(tmp_path):
    cfg = _write(tmp_path, ZERO_COST.replace("COST", "0.0").replace("m = M", "m = 2")
                 .replace("n = N", "n = 2"))
    r = _run(["solve-finite", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 0 and r.output.strip() == "value 0"


def test_single_cell_closed_forms(tmp_path):
    cfg = _write(tmp_path, ZERO_COST.replace("COST", "2.0").replace("m = M", "m = 1")
                 .replace("n = N", "n = 1"))
    r = _run(["solve-finite", "--config", cfg, "--out", str(tmp_path / "f")])
    assert float(r.output.split()[1]) == 2.0
    r = _run(["solve-discounted", "--config", cfg, "--out", str(tmp_path / "d")])
    beta = math.exp(-0.25)
    assert abs(float(r.output.split()[1]) - 0.5 / (1 - beta)) <= 1e-10


def test_solve_then_evaluate_round_trip(tmp_path):
    cfg = _write(tmp_path, BASE)
    _run(["solve-finite", "--config", cfg, "--out", str(tmp_path / "sol")])
    ev = BASE + '\n[policy]\nkind = "file"\npath = "sol/policy.json"\n'
    cfg2 = _write(tmp_path, ev, "eval.toml")
    r = _run(["evaluate", "--config", cfg2, "--out", str(tmp_path / "ev")])
    assert r.exit_code == 0
    cost = json.loads((tmp_path / "ev" / "cost.json").read_text())

    from mkvdp import config, em
    from mkvdp.policy import evaluate_finite_horizon, load_policy
    c = config.load(cfg)
    pol = load_policy(tmp_path / "sol" / "policy.json")
    est = evaluate_finite_horizon(c.model, em.TimeGrid(0.25, 1.0), pol, 16, 4, seed=7)
    assert abs(cost["mean"] - est.mean) <= 1e-12
    csv = (tmp_path / "ev" / "cost.csv").read_text().splitlines()
    assert csv[0] == "criterion,mean,std_error,replications,tail_bound"


def test_discounted_evaluate(tmp_path):
    cfg = _write(tmp_path, BASE + '\n[evaluate]\ncriterion = "discounted"\nhorizon_steps = 8\n')
    r = _run(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 0
    d = json.loads((tmp_path / "o" / "cost.json").read_text())
    assert d["criterion"] == "discounted" and d["tail_bound"] > 0


def test_config_file_not_modified(tmp_path):
    cfg = _write(tmp_path, BASE + EXPERIMENT)
    before = open(cfg, "rb").read()
    _run(["experiment", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "o")])
    assert open(cfg, "rb").read() == before


def test_degenerate_experiment_warns_and_succeeds(tmp_path):
    text = ZERO_COST.replace("COST", "1.0").replace("m = M", "m = 2").replace("n = N", "n = 2")
    text = text.replace('{id = "constant", params = {value = 1.0}}', '{id = "constant", params = {value = 0.0}}')
    cfg = _write(tmp_path, text + EXPERIMENT)
    r = CliRunner().invoke(main, ["experiment", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code == 0
    assert "degenerate" in r.stderr
    assert json.loads((tmp_path / "o" / "report.json").read_text())["status"] == "degenerate"


def test_value_rate_report_shape(tmp_path):
    cfg = _write(tmp_path, BASE + '\n[experiment]\nid = "value_rate"\nmc_replications = 2\n'
                 'mc_particles = 4\nh_list = [0.5, 0.25, 0.125, 0.0625, 0.03125]\n')
    r = CliRunner().invoke(main, ["experiment", "--config", cfg, "--out", str(tmp_path / "o")])
    assert r.exit_code in (0, 1)
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert len(rep["points"]) >= 4 and "slope" in rep
    assert "workers" not in rep["plan"]


def test_version_and_help():
    assert _run(["--version"]).exit_code == 0
    out = _run(["--help"]).output
    for cmd in ("simulate", "solve-finite", "solve-discounted", "evaluate", "experiment",
                "validate-model"):
        assert cmd in out
