import json
import os
import subprocess
import sys

import pytest

from symmeq import cli, runs
from symmeq.rl import PRESETS, VARIANTS

TINY = {"iterations": 1, "num_envs": 2, "horizon": 4, "checkpoint_every": 1,
        "net": {"actor_widths": [8, 8], "critic_widths": [8, 8], "encoder_widths": [8, 32], "history": 2},
        "env": {"episode_length": 100}}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


@pytest.fixture
def trained(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", tiny_config, "--seed", "3", "--deterministic", "--out", str(out)]) == 0
    return out


def test_train_writes_run_directory(trained):
    names = set(os.listdir(trained))
    assert {"metrics.csv", "manifest.json", "checkpoint_00001.json"} <= names
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["variant"] == "se-policy"
    assert (trained / "metrics.csv").read_text().startswith(f"# run {manifest['run']}")


def test_deterministic_train_is_byte_identical(tmp_path, tiny_config):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--config", tiny_config, "--deterministic", "--out", str(out)]) == 0
        texts.append((out / "metrics.csv").read_bytes())
    assert texts[0] == texts[1]


def test_unknown_variant_names_all_four(capsys):
    assert cli.main(["train", "--variant", "mirror-aug"]) == 2
    err = capsys.readouterr().err
    for v in VARIANTS:
        assert v in err


def test_bad_config_field_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"ppo": {"gama": 0.9}}))
    assert cli.main(["train", "--config", str(path)]) == 2
    assert "config.ppo.gama" in capsys.readouterr().err


def test_unreadable_config_is_usage_error(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["train", "--config", str(tmp_path / "broken.json")]) == 2


def test_preset_layers_under_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"ppo": {"clip": 0.1}}))
    cfg = runs.load_train_config(str(path), preset="desk", seed=5)
    assert cfg.ppo.desired_kl == PRESETS["desk"]["ppo"]["desired_kl"]
    assert cfg.ppo.clip == 0.1 and cfg.seed == 5
    assert runs.load_train_config(preset="default").ppo.desired_kl == 0.01
    with pytest.raises(runs.UsageError):
        runs.load_train_config(preset="fast")


def test_episodes_zero_is_usage_error(trained):
    ck = str(trained / "checkpoint_00001.json")
    assert cli.main(["eval", ck, "--episodes", "0"]) == 2
    assert cli.main(["rollout", ck, "--episodes", "0"]) == 2


def test_symmeq_out_sets_output_root(tmp_path, monkeypatch, tiny_config):
    monkeypatch.setenv("SYMMEQ_OUT", str(tmp_path / "root"))
    assert cli.main(["train", "--config", tiny_config, "--variant", "vanilla", "--seed", "2"]) == 0
    assert (tmp_path / "root" / "runs" / "vanilla_seed2" / "metrics.csv").exists()
    assert cli.main(["train", "--config", tiny_config, "--out", "mine"]) == 0
    assert (tmp_path / "root" / "mine" / "metrics.csv").exists()
    assert runs.resolve_out(str(tmp_path / "abs"), "x") == str(tmp_path / "abs")


def test_multiple_seeds_get_subdirectories(tmp_path, tiny_config):
    out = tmp_path / "multi"
    assert cli.main(["train", "--config", tiny_config, "--seeds", "0,1", "--out", str(out)]) == 0
    assert (out / "seed0" / "metrics.csv").exists() and (out / "seed1" / "metrics.csv").exists()
    assert cli.main(["train", "--seeds", "0,x"]) == 2


def test_eval_and_rollout_outputs(trained, tmp_path):
    ck = str(trained / "checkpoint_00001.json")
    out = tmp_path / "ev"
    assert cli.main(["eval", ck, "--episodes", "2", "--preset", "all", "--out", str(out)]) == 0
    summary = json.loads((out / "eval_manifest.json").read_text())
    for name in summary["files"]:
        assert (out / name).exists(), name
    assert summary["metrics"]["spat_s"]["mean"] < 1e-10
    rout = tmp_path / "ro"
    assert cli.main(["rollout", ck, "--episodes", "2", "--out", str(rout)]) == 0
    assert sorted(os.listdir(rout)) == ["rollout_000.csv", "rollout_001.csv"]


def test_eval_uses_checkpoint_env(trained, tmp_path):
    agent, env_cfg, _ = runs.load_agent(str(trained / "checkpoint_00001.json"))
    assert env_cfg.episode_length == 100


def test_eval_profile_mismatch(trained):
    assert cli.main(["eval", str(trained / "checkpoint_00001.json"), "--profile", "g1"]) == 2


def test_plot_rerenders(trained, tmp_path):
    out = tmp_path / "ev"
    assert cli.main(["eval", str(trained / "checkpoint_00001.json"), "--episodes", "1", "--out", str(out)]) == 0
    plots = tmp_path / "pl"
    assert cli.main(["plot", str(out / "te_curves.csv"), "--out", str(plots)]) == 0
    assert (plots / "te_p.svg").exists()


def test_verify_exit_codes(trained, capsys):
    assert cli.main(["verify", "--profile", "toy"]) == 0
    assert cli.main(["verify", str(trained / "checkpoint_00001.json"), "--profile", "toy"]) == 0
    # a vanilla actor fails equivariance, which is expected and informational
    assert cli.main(["verify", "--profile", "toy", "--variant", "vanilla"]) == 0
    out = capsys.readouterr().out
    assert "XFAIL" in out and "informational" in out


def test_verify_failure_exits_one(monkeypatch, capsys):
    from symmeq.verify import CheckResult
    bad = [CheckResult("actor equivariance (Spat-S)", False, 3.2e-4, 1e-10)]
    monkeypatch.setattr(runs, "run_suite", lambda *a, **k: bad)
    assert cli.main(["verify", "--profile", "toy"]) == 1
    err = capsys.readouterr().err
    assert "actor equivariance" in err and "3.200e-04" in err


def test_g1_verify():
    assert cli.main(["verify", "--profile", "g1"]) == 0


def test_cli_module_is_dispatch_only():
    src = open(cli.__file__).read()
    assert "import numpy" not in src


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "symmeq", "train", "--variant", "nope"],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert "se-policy" in res.stderr
