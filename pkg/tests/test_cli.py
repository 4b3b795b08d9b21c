import csv
import json

import numpy as np
import pytest

from safegain import __version__
from safegain.cli import main
from safegain.config import ExperimentConfig, config_from_dict, config_to_dict, dumps_config, load_config
from safegain.errors import ConfigError


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """certify + a one-episode training run shared by the eval/rollout tests."""
    out = tmp_path_factory.mktemp("run")
    assert run("certify", "--out", out) == 0
    assert run("train", "--out", out, "--episodes", 1, "--seed", 3) == 0
    return out


# ----------------------------------------------------------------- config

def test_config_round_trip():
    cfg = ExperimentConfig()
    assert config_from_dict(json.loads(dumps_config(cfg))) == cfg


def test_config_partial_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 9, "train": {"episodes": 5}, "limits": {"z_norm_delta": 3.0}}))
    cfg = load_config(path)
    assert cfg.seed == 9 and cfg.train.episodes == 5 and cfg.limits.z_norm_delta == 3.0
    assert cfg.train.lr == 1e-3
    assert cfg.train_config().seed == 9 and cfg.env_config().gamma == cfg.train.gamma


@pytest.mark.parametrize("data, match", [
    ({"seeed": 1}, "unknown config key.*seeed"),
    ({"train": {"learning_rate": 0.1}}, "in train: learning_rate"),
    ({"train": {"episodes": "ten"}}, "train.episodes: expected an integer"),
    ({"gains": {"yaw_levels": [[1.0]]}}, r"gains.yaw_levels\[0\]: expected 2 entries"),
    ({"env": {"dwell_steps": 0}}, "dwell_steps"),
])
def test_config_rejections(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_config_syntax_error_has_line_context(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "train": {,}\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:3:\d+"):
        load_config(path)


def test_config_unknown_key_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{"bogus": 1}')
    assert run("certify", "--config", path, "--out", tmp_path / "o") == 1
    assert "bogus" in capsys.readouterr().err


# ---------------------------------------------------------------- certify

def test_certify_default(tmp_path, capsys):
    out = tmp_path / "a"
    assert run("certify", "--out", out) == 0
    table = json.loads((out / "gain_table.json").read_text())
    assert len(table["actions"]) == 54 and table["rejected"] == []
    report = rows(out / "certification_report.csv")
    assert len(report) == 54 and all(r["status"] == "certified" for r in report)
    echo = json.loads((out / "config.json").read_text())
    assert echo["version"] == __version__ and echo["command"] == "certify"
    assert config_from_dict(echo["config"]) == ExperimentConfig()
    assert "certified 54 actions" in capsys.readouterr().out


def test_certify_is_byte_identical(tmp_path):
    assert run("certify", "--out", tmp_path / "a") == 0
    assert run("certify", "--out", tmp_path / "b") == 0
    for name in ("gain_table.json", "certification_report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_certify_reports_unstable_level(tmp_path):
    cfg = config_to_dict(ExperimentConfig())
    cfg["gains"]["axis_levels"].append([10.0, 1.0, 1.0, 1.0])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert run("certify", "--config", path, "--out", tmp_path / "o") == 0
    report = rows(tmp_path / "o" / "certification_report.csv")
    rejected = [r for r in report if r["status"] == "rejected"]
    assert len(report) == 4**3 * 2 and len(rejected) == 4**3 * 2 - 54
    assert all("k_j*k_a <= k_v" in r["reason"] for r in rejected)


def test_certify_empty_table_fails(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"gains": {"axis_levels": [[10.0, 1.0, 1.0, 1.0]]}}))
    assert run("certify", "--config", path, "--out", tmp_path / "o") == 1
    assert "no candidate" in capsys.readouterr().err


# ------------------------------------------------------------------ train

def test_train_outputs(trained):
    curve = rows(trained / "training_curve.csv")
    assert len(curve) == 1 and list(curve[0]) == ["episode", "cumulative_reward", "epsilon", "loss_mean"]
    ckpt = json.loads((trained / "checkpoint.json").read_text())
    assert ckpt["sizes"] == [15, 128, 128, 54] and ckpt["config"]["seed"] == 3
    assert json.loads((trained / "config.json").read_text())["config"]["train"]["episodes"] == 1


def test_train_same_seed_identical_checkpoint(trained, tmp_path):
    out = tmp_path / "again"
    out.mkdir()
    (out / "gain_table.json").write_bytes((trained / "gain_table.json").read_bytes())
    assert run("train", "--out", out, "--episodes", 1, "--seed", 3) == 0
    assert (out / "checkpoint.json").read_bytes() == (trained / "checkpoint.json").read_bytes()


def test_train_requires_table(tmp_path, capsys):
    assert run("train", "--out", tmp_path, "--episodes", 1) == 1
    assert "certify" in capsys.readouterr().err


def test_train_rejects_mismatched_table(trained, tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"gains": {"yaw_levels": [[4.0, 4.0]]}}))
    assert run("train", "--config", path, "--table", trained / "gain_table.json",
               "--out", tmp_path / "o", "--episodes", 1) == 1
    assert "does not match" in capsys.readouterr().err


# ------------------------------------------------------------ eval/rollout

def test_eval_single_policy(trained, tmp_path):
    out = tmp_path / "eval"
    assert run("eval", "--out", out, "--table", trained / "gain_table.json",
               "--checkpoint", trained / "checkpoint.json", "--policies", "greedy", "--rollouts", 5,
               "--threads", 2) == 0
    summary = rows(out / "summary.csv")
    assert [r["policy"] for r in summary] == ["greedy"] and summary[0]["rollouts"] == "5"
    assert len(rows(out / "episodes_greedy.csv")) == 5


def test_eval_refuses_foreign_checkpoint(trained, tmp_path, capsys):
    ckpt = json.loads((trained / "checkpoint.json").read_text())
    ckpt["table_hash"] = "f" * 64
    path = tmp_path / "ckpt.json"
    path.write_text(json.dumps(ckpt))
    assert run("eval", "--out", tmp_path / "o", "--table", trained / "gain_table.json",
               "--checkpoint", path, "--policies", "greedy", "--rollouts", 1) == 1
    assert "different gain table" in capsys.readouterr().err


def test_rollout_outputs(trained, tmp_path):
    out = tmp_path / "ro"
    assert run("rollout", "--out", out, "--table", trained / "gain_table.json",
               "--checkpoint", trained / "checkpoint.json", "--rollout-seed", 7) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 1001
    sched = rows(out / "gain_schedule.csv")
    action = np.array([float(r["value"]) for r in sched if r["series"] == "action"])
    assert np.all(action.reshape(100, 10) == action.reshape(100, 10)[:, :1])
    episode = json.loads((out / "episode.json").read_text())
    assert episode["seed"] == 7 and episode["decisions"] == 100


def test_plot_helper_renders(trained, tmp_path):
    pytest.importorskip("matplotlib")
    from safegain.plots import render_all
    out = tmp_path / "eval"
    assert run("eval", "--out", out, "--table", trained / "gain_table.json",
               "--checkpoint", trained / "checkpoint.json", "--policies", "greedy,random_safe",
               "--rollouts", 2) == 0
    written = render_all(out)
    assert {p.name for p in written} >= {"reward_distribution.png", "gain_schedule.png", "position.png"}
    assert all(p.stat().st_size > 0 for p in written)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and __version__ in capsys.readouterr().out
