import json
import subprocess
import sys

import pytest

from sdlab.cli import COMMANDS, ConfigError, config_text, main, parse_config, resolve

BASE = """# shared settings
sigma = 0.1
d_over_s = 1.2
g.q = 1
sample.n = 20000
tails.n = 20000
t_end = 2
scenario.demand.kind = sinusoid
scenario.demand.amplitude = 0.3
scenario.demand.period = 2
simulate.paths = 3
volatility.window = 100
"""


def run(tmp_path, command, text=BASE, *extra):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    return main([command, "--config", str(cfg), *extra])


@pytest.mark.parametrize("text,where", [
    ("sigma 0.1\n", "line 1, column 1"),
    ("sigma = 0.1\n  bogus = 2\n", "line 2, column 3"),
    ("sigma = abc\n", "line 1, column 9"),
    ("sigma = 0.1\nsigma = 0.2\n", "duplicate"),
    ("sample.n = 1.5\n", "expects int"),
    ("variance.bessel = yes\n", "expects bool"),
    ("sigma =\n", "missing value"),
])
def test_parse_errors_locate_the_problem(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_comments_and_lists():
    v = parse_config("# c\n\nconverge.sigmas = 0.4, 0.2 , 0.1 # trailing\nvariance.bessel = TRUE\n")
    assert v == {"converge.sigmas": (0.4, 0.2, 0.1), "variance.bessel": True}


def test_required_key_and_domain_errors():
    with pytest.raises(ConfigError, match="sigma"):
        resolve("sample", {})
    with pytest.raises(ConfigError, match="q must be"):
        resolve("check-g", {"g.q": -1.0})
    with pytest.raises(ConfigError):
        resolve("volatility", {"sigma": 0.1, "volatility.mode": "garch"})
    with pytest.raises(ConfigError):
        resolve("sample", {"sigma": 0.1}, threads="zero")


def test_config_exit_code_and_stderr(tmp_path, capsys):
    assert run(tmp_path, "sample", "sigma = 0.1\nwhatever = 1\n") == 1
    err = capsys.readouterr().err
    assert "unknown key 'whatever'" in err and "line 2" in err


def test_numeric_exit_code_names_operation(tmp_path, capsys):
    assert run(tmp_path, "sample", "sigma = 4\nsample.n = 1000\n", "--output-dir", str(tmp_path / "o")) == 2
    assert "sampler.sample_x3" in capsys.readouterr().err


def test_check_g_failure_exit_code(tmp_path):
    text = "g.family = odd_power_diff\ng.q = 3\ncheck.grid_min = 0.5\ncheck.grid_max = 2\ncheck.grid_n = 3\n"
    assert run(tmp_path, "check-g", text, "--output-dir", str(tmp_path)) == 2
    assert run(tmp_path, "check-g", "g.q = 2\n", "--output-dir", str(tmp_path)) == 0


def test_output_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SDLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert resolve("check-g", {}).output_dir == tmp_path / "env"
    assert resolve("check-g", {"output_dir": str(tmp_path / "cfg")}).output_dir == tmp_path / "cfg"
    assert resolve("check-g", {"output_dir": "x"}, output_dir=str(tmp_path / "cli")).output_dir == tmp_path / "cli"
    monkeypatch.delenv("SDLAB_OUTPUT_DIR")
    assert str(resolve("check-g", {}).output_dir) == "."


EXPECTED = {
    "density": ["f3.csv", "f3n.csv"],
    "sample": ["samples.csv", "histogram.csv"],
    "tails": ["tails.csv"],
    "converge": ["convergence.csv"],
    "simulate": ["path_000.csv", "path_001.csv", "path_002.csv"],
    "volatility": ["volatility.csv"],
    "check-g": ["axioms.csv"],
}


@pytest.mark.parametrize("command", COMMANDS)
def test_commands_are_thread_invariant(tmp_path, command):
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"t{threads}"
        assert run(tmp_path, command, BASE, "--output-dir", str(out), "--threads", threads, "--seed", "7") == 0
        outs.append(out)
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert sorted(man["artifacts"]) == sorted(EXPECTED[command])
    for name in EXPECTED[command]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert man["seed"] == 7


def test_manifest_config_round_trips(tmp_path):
    out = tmp_path / "a"
    assert run(tmp_path, "converge", BASE, "--output-dir", str(out)) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["results"]["fitted_order"] > 1.5
    assert "sigma" in man["config"] and "numpy" in man["versions"]
    again = tmp_path / "again.cfg"
    again.write_text(man["config_text"])
    assert main(["converge", "--config", str(again), "--output-dir", str(tmp_path / "b")]) == 0
    assert (out / "convergence.csv").read_bytes() == (tmp_path / "b" / "convergence.csv").read_bytes()
    assert parse_config(config_text(parse_config(man["config_text"]))) == parse_config(man["config_text"])


def test_volatility_from_ingested_file(tmp_path, capsys):
    prices = tmp_path / "p.csv"
    prices.write_text("t,price\n" + "".join(f"{i * 0.01},{1 + 0.001 * (i % 7)}\n" for i in range(500)))
    text = f"volatility.input = {prices}\nvolatility.window = 50\nvolatility.mode = vp\n"
    assert run(tmp_path, "volatility", text, "--output-dir", str(tmp_path / "v")) == 0
    rows = (tmp_path / "v" / "volatility.csv").read_text().splitlines()
    assert len(rows) == 1 + 9 and rows[1].endswith(",")
    bad = tmp_path / "bad.csv"
    bad.write_text("t,price\n0,1\n1,2\n3,3\n")
    assert run(tmp_path, "volatility", f"volatility.input = {bad}\n", "--output-dir", str(tmp_path / "w")) == 1
    assert "row 3" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("g.q = 1\n")
    r = subprocess.run([sys.executable, "-m", "sdlab", "check-g", "--config", str(cfg), "--output-dir",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "PASS" in r.stdout
