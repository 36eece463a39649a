import json

import pandas as pd
import pytest

from powergame import checks, cli
from powergame.config import parse_config
from powergame.utils import NumericalError

SINGLE = """
[game]
n_players = 1
gains = 2.0
sigma2 = 3.0

[efficiency]
family = exponential
a = 1.0
"""

SMALL_MC = """
[off_probability]
n_points = 6
n_samples = 10000

[simulation]
dt = 0.1
n_paths = 200
record_paths = 3
k_list = 4, 8
replications = 2
"""


def run(args, out):
    return cli.main(args + ["--out", str(out)])


def test_static_ne_single_player(write_config, tmp_path):
    out = tmp_path / "static"
    assert run(["static-ne", "--config", str(write_config(SINGLE))], out) == 0
    frame = pd.read_csv(out / "static_ne.csv")
    assert list(frame.columns) == ["player", "gain", "power", "sinr", "utility"]
    assert len(frame) == 1
    assert frame["power"].iloc[0] == pytest.approx(3.0 * 1.0 / 2.0)
    assert frame["sinr"].iloc[0] == pytest.approx(1.0)


def test_static_ne_rejects_infeasible_player_count(write_config, tmp_path, capsys):
    cfg = write_config("[game]\nn_players = 3\n[efficiency]\nfamily = sigmoid\nm = 2\n")
    assert run(["static-ne", "--config", str(cfg)], tmp_path / "x") == cli.EXIT_CONFIG
    assert "game.n_players" in capsys.readouterr().out


def test_bad_key_exits_with_config_code(write_config, tmp_path, capsys):
    cfg = write_config("[game]\nsigma = 1\n")
    assert run(["static-ne", "--config", str(cfg)], tmp_path / "x") == cli.EXIT_CONFIG
    assert "game.sigma" in capsys.readouterr().out


def test_negative_seed(tmp_path):
    assert run(["static-ne", "--seed", "-1"], tmp_path / "x") == cli.EXIT_CONFIG


def test_reruns_are_byte_identical(write_config, tmp_path):
    cfg = str(write_config(SMALL_MC))
    for name in ("a", "b"):
        assert run(["off-probability", "--config", cfg, "--seed", "5"], tmp_path / name) == 0
    first = (tmp_path / "a" / "off_probability.csv").read_bytes()
    assert first == (tmp_path / "b" / "off_probability.csv").read_bytes()
    assert b"\r\n" not in first
    frame = pd.read_csv(tmp_path / "a" / "off_probability.csv")
    assert len(frame) == 6
    assert (frame["lower_bound"] <= frame["mc_estimate"]).all()


def test_manifest_records_the_run(write_config, tmp_path):
    out = tmp_path / "m"
    assert run(["static-ne", "--config", str(write_config(SINGLE)), "--seed", "9"], out) == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 9
    assert "static_ne.csv" in manifest["files"]
    assert set(manifest["versions"]) >= {"powergame", "numpy", "scipy", "pandas"}
    cfg = parse_config((out / "config.ini").read_text(encoding="utf-8"))
    assert cfg.simulation.seed == 9
    assert cfg.game.gains == (2.0,)
    assert cfg.output.dir == str(out)


def test_utility_curve(write_config, tmp_path):
    out = tmp_path / "u"
    assert run(["utility-curve", "--config", str(write_config(SINGLE))], out) == 0
    frame = pd.read_csv(out / "utility_curve.csv")
    assert list(frame.columns) == ["p", "utility"]
    assert frame["utility"].iloc[0] == 0.0


def test_simulate_channel(write_config, tmp_path):
    out = tmp_path / "c"
    assert run(["simulate-channel", "--config", str(write_config(SMALL_MC))], out) == 0
    paths = pd.read_csv(out / "channel_paths.csv")
    assert list(paths.columns) == ["t", "path_id", "E", "h_x", "h_y"]
    assert paths["path_id"].nunique() == 3
    moments = pd.read_csv(out / "channel_moments.csv")
    assert len(moments) == 11


def test_simulate_k(write_config, tmp_path):
    out = tmp_path / "k"
    assert run(["simulate-k", "--config", str(write_config(SMALL_MC))], out) == 0
    report = pd.read_csv(out / "convergence.csv")
    assert sorted(report["K"].unique()) == [4, 8]
    assert report["exchangeable"].all()
    traj = pd.read_csv(out / "trajectory.csv")
    assert traj["player"].nunique() == 3


def test_solve_single(tmp_path):
    out = tmp_path / "s"
    assert run(["solve-single"], out) == 0
    frame = pd.read_csv(out / "value_policy.csv")
    assert list(frame.columns) == ["t", "E", "h_x", "h_y", "v", "p"]
    assert (frame["p"] >= 0).all()


def test_check_passes_with_quick_suite(monkeypatch, tmp_path):
    monkeypatch.setattr(
        checks, "SUITE", [checks.check_beta_star, checks.check_monotone_shutdown]
    )
    out = tmp_path / "ok"
    assert run(["check"], out) == cli.EXIT_OK
    frame = pd.read_csv(out / "checks.csv")
    assert frame["passed"].all()


def test_failing_check_exits_with_check_code(monkeypatch, tmp_path):
    def check_broken(cfg):
        return checks.CheckResult("broken", False, "always fails")

    monkeypatch.setattr(checks, "SUITE", [checks.check_beta_star, check_broken])
    out = tmp_path / "bad"
    assert run(["check"], out) == cli.EXIT_CHECK
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["results"]["failed_checks"] == ["broken"]


def test_numerical_failure_exit_code(monkeypatch, tmp_path, capsys):
    def explode(run):
        raise NumericalError("solve_value: non-finite value at t=0")

    monkeypatch.setitem(cli.COMMANDS, "solve-single", explode)
    assert run(["solve-single"], tmp_path / "n") == cli.EXIT_NUMERICAL
    assert "Error: solve_value" in capsys.readouterr().out
