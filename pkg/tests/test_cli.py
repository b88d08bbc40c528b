import subprocess
import sys

import pytest

from kduality.cli import EXIT_CONDITION, EXIT_INPUT, EXIT_OK, main

CONFIGS = {
    "bm": """
[model]
a = 1
b = 0
jump = none
[grid]
x_min = -5
x_max = 5
n = 200
[duality]
k = 2
""",
    "ou": """
[model]
a = 1
b = "x"
[grid]
x_min = -5
x_max = 5
n = 200
[duality]
k = 2
""",
    "bad": """
[model]
a = "1 + sin(x"
[duality]
k = 2
""",
    "jump": """
[model]
jump = density
nu = "exp(-(z-x)^2)"
[grid]
x_min = -5
x_max = 5
n = 120
[duality]
k = 1
""",
    "stable": """
[model]
jump = stable
beta = 1.5
scale = "2 + sin(x)"
[grid]
x_min = -5
x_max = 5
n = 120
[duality]
k = 1.5
""",
    "call": """
[model]
a = 0.5
b = 0.3
[grid]
n = 400
[duality]
k = 2
[task]
t = 1
spots = -1, 0, 1
strikes = 0, 0.5
""",
    "call_mc": """
[model]
a = 0.5
b = 0.3
[grid]
n = 200
[duality]
k = 2
[task]
method = both
t = 1
spots = 1
strikes = 0
[mc]
dt = 0.02
n_paths = 4000
seed = 5
""",
    "straddle": """
[model]
jump = symmetric
beta = 1.5
scale = "2 + sin(x)"
[duality]
k = 1.5
[task]
payoff = straddle
t = 0.5
spots = -1, 0, 1
strikes = -0.5, 0, 0.5
""",
    "spread": """
[model]
a = "2 + cos(6.283185307179586*x)"
[task]
payoff = spread
alpha = 0
beta_shift = 1
t = 0.5
spots = -1, 0, 1
strikes = 0, 0.5
""",
    "spread_np": """
[model]
a = "2 + x^2"
[task]
payoff = spread
alpha = 0
beta_shift = 1
t = 0.5
spots = 0
strikes = 0.5
""",
    "mono": """
[model]
a = 1
[grid]
n = 200
[duality]
k = 2
[task]
t = 0.5
""",
    "sd": """
[model]
jump = density
nu = "exp(-(z-x)^2)"
[grid]
x_min = -5
x_max = 5
n = 200
[task]
order = 1
""",
    "sd_bad": """
[model]
jump = density
nu = "(1+x^2)*exp(-(z-x)^2)"
[grid]
x_min = -5
x_max = 5
n = 200
[task]
order = 2
""",
    "prop": """
[model]
a = "1 + t"
time_dependent = true
[grid]
x_min = -5
x_max = 5
n = 80
[duality]
k = 2
[task]
T = 1
dt = 0.01
s = 0
t = 0.5
""",
}


@pytest.fixture
def run(tmp_path):
    def _run(command, name, *extra, out="out"):
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(CONFIGS[name])
        return main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra]), tmp_path / out
    return _run


def report(path):
    return dict(line.split(",", 1) for line in path.read_text().splitlines()[1:])


def test_dualize_brownian_ok(run):
    code, out = run("dualize", "bm")
    assert code == EXIT_OK
    rep = report(out / "dual_report.csv")
    assert rep["a_dual"] == "1.0" and rep["b_dual"] == "0.0" and rep["monotone_ok"] == "true"
    assert (out / "dual_jump_density.csv").exists() and (out / "dual_coefficients.csv").exists()


def test_dualize_ou_fails_limit_condition(run):
    code, out = run("dualize", "ou")
    assert code == EXIT_CONDITION
    assert float(report(out / "dual_report.csv")["limit_condition_residual"]) == pytest.approx(1.0, abs=1e-9)


def test_dualize_jump_and_stable(run):
    assert run("dualize", "jump")[0] == EXIT_OK
    code, out = run("dualize", "stable", out="s")
    assert code == EXIT_OK and report(out / "dual_report.csv")["dual_side"] == "minus"


def test_bad_expression_exits_1_with_position(run, capsys):
    code, _ = run("dualize", "bad")
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "bad.cfg:3: invalid expression for a: at position 9" in err


def test_input_errors(run, tmp_path, capsys):
    assert main(["dualize", "--config", str(tmp_path / "none.cfg")]) == EXIT_INPUT
    assert run("dualize", "bm", "--tol-bogus", "1")[0] == EXIT_INPUT
    assert "known: boundary" in capsys.readouterr().err
    assert run("dualize", "bm", "--tol-limit")[0] == EXIT_INPUT
    assert run("dualize", "bm", "--tol-limit", "abc")[0] == EXIT_INPUT
    assert run("dualize", "bm", "--frobnicate")[0] == EXIT_INPUT
    assert run("verify", "bm")[0] == EXIT_INPUT  # no [task] section
    assert run("selfdual", "bm")[0] == EXIT_INPUT  # no density jump
    assert main(["dualize"]) == EXIT_INPUT
    assert main(["explode", "--config", "x"]) == EXIT_INPUT


def test_config_tolerance_keys(run, monkeypatch):
    monkeypatch.setitem(CONFIGS, "ou_tol", CONFIGS["ou"] + "tol_limit = 2\n")
    assert run("dualize", "ou_tol")[0] == EXIT_OK
    monkeypatch.setitem(CONFIGS, "ou_bogus", CONFIGS["ou"] + "tol_nothing = 2\n")
    assert run("dualize", "ou_bogus")[0] == EXIT_INPUT
    # command line overrides the config
    assert run("dualize", "ou_tol", "--tol-limit=1e-3")[0] == EXIT_CONDITION


def test_verify_call(run):
    code, out = run("verify", "call")
    assert code == EXIT_OK
    lines = (out / "verify.csv").read_text().splitlines()
    assert lines[0] == "x,y,lhs,rhs,abs_gap,rel_gap,method,pass" and len(lines) == 7


def test_verify_straddle_and_spread(run):
    assert run("verify", "straddle")[0] == EXIT_OK
    assert run("verify", "spread", out="sp")[0] == EXIT_OK


def test_verify_non_periodic_spread_warns(run, capsys):
    code, out = run("verify", "spread_np")
    assert code == EXIT_OK
    assert "not 1-periodic" in capsys.readouterr().err
    assert (out / "verify.csv").read_text().splitlines()[1].endswith(",unasserted")


def test_verify_fails_on_tight_gap(run):
    assert run("verify", "call", "--tol-gap", "1e-16")[0] == EXIT_CONDITION


def test_monotone(run):
    code, out = run("monotone", "mono")
    assert code == EXIT_OK and report(out / "monotone_report.csv")["monotone"] == "true"
    assert run("monotone", "mono", "--tol-edge", "1e-3", out="o2")[0] == EXIT_CONDITION


def test_selfdual(run):
    code, out = run("selfdual", "sd")
    assert code == EXIT_OK and (out / "martingale_residual.csv").exists()
    assert run("selfdual", "sd_bad", out="o2")[0] == EXIT_CONDITION


def test_propagator(run):
    code, out = run("propagator", "prop")
    assert code == EXIT_OK
    rep = report(out / "propagator_report.csv")
    assert float(rep["chain_rule_residual"]) < 1e-8 and float(rep["ft_duality_residual"]) < 1e-3
    assert run("propagator", "prop", "--tol-ft", "1e-20", out="o2")[0] == EXIT_CONDITION


@pytest.mark.parametrize("command, name, files", [
    ("dualize", "bm", ["dual_report.csv", "dual_coefficients.csv", "dual_jump_density.csv"]),
    ("verify", "call_mc", ["verify.csv"]),
    ("selfdual", "sd", ["selfdual_report.csv", "martingale_residual.csv"]),
])
def test_outputs_are_byte_stable(run, command, name, files):
    code1, a = run(command, name, out="a")
    code2, b = run(command, name, out="b")
    assert code1 == code2 == EXIT_OK
    for f in files:
        data = (a / f).read_bytes()
        assert data == (b / f).read_bytes()
        assert b"\r\n" not in data


def test_seed_flag_changes_mc_rows(run):
    _, a = run("verify", "call_mc", out="a")
    _, b = run("verify", "call_mc", "--seed", "99", out="b")
    ra, rb = (p.joinpath("verify.csv").read_text().splitlines() for p in (a, b))
    assert ra[1] == rb[1]  # grid row
    assert ra[2] != rb[2]  # mc row


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "bm.cfg"
    cfg.write_text(CONFIGS["bm"])
    proc = subprocess.run([sys.executable, "-m", "kduality", "dualize", "--config", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "markov_dual: True" in proc.stdout
