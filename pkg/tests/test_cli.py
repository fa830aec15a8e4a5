import json

import numpy as np
import pytest

from robust_crl import load_mdp
from robust_crl.cli import ConfigError, list_presets, load_preset, main, resolve_config

TINY = """
[env]
kind = "garnet"
sn = 3
an = 2
seed = 1
threshold = {threshold}

[run]
mode = "{mode}"
delta = 0.2
T = 4
replicas = 2
{extra}

[schedule]
kind = "practical"
lambda_max = 10.0

[online]
kappa = 2.0
inner_cap = 2000

[eval]
n_reps = 2
sample_size = 20
"""


def write_cfg(tmp_path, mode="online", threshold='"robust"', extra=""):
    path = tmp_path / f"{mode}.toml"
    path.write_text(TINY.format(mode=mode, threshold=threshold, extra=extra))
    return path


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("ROBUST_CRL_SEED", raising=False)


def test_missing_required_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[env]\nkind = "garnet"\n[run]\nmode = "exact"\ndelta = 0.1\n')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "run.T" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[run]\nmode = "exact"\ndelta = 0.1\nT = 2\nwarp = 9\n[env]\nkind = "garnet"\n')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "run.warp" in capsys.readouterr().err


def test_resolve_config_defaults_and_checks():
    cfg = resolve_config({"env": {"kind": "garnet"}, "run": {"mode": "online", "delta": 0.2, "T": 3}})
    assert cfg["run"]["methods"] == ["robust_rpd", "heuristic_pd", "nonrobust_pd"]
    assert cfg["schedule"]["kind"] == "practical"
    with pytest.raises(ConfigError, match="env.kind"):
        resolve_config({"run": {"mode": "exact", "delta": 0.2, "T": 3}})
    with pytest.raises(ConfigError, match="methods"):
        resolve_config({"env": {"kind": "garnet"},
                        "run": {"mode": "exact", "delta": 0.2, "T": 3, "methods": ["heuristic_pd"]}})


def test_presets_resolve():
    assert set(list_presets()) >= {"garnet_benchmark", "garnet_theory", "minimal"}
    for name in list_presets():
        resolve_config(load_preset(name))


def test_train_is_byte_identical_across_jobs_and_replays(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c"),
                 "--jobs", "1"]) == 0
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    assert a == (tmp_path / "b" / "trace.csv").read_bytes() == (tmp_path / "c" / "trace.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0].startswith("method,seed,t,lambda,V_sigma_r_rho")
    assert len(lines) == 1 + 3 * 2 * 5
    pol = np.load(tmp_path / "a" / "policies.npz")
    assert pol["heuristic_pd__1"].shape == (5, 3, 2)
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["env_hash"] == load_mdp(tmp_path / "a" / "env.json").digest()
    assert man["seeds"] == [0, 1] and "lambda_star" in man and "constants" in man


def test_seed_environment_variable_and_flag_priority(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, mode="exact", threshold="2.0")
    monkeypatch.setenv("ROBUST_CRL_SEED", "11")
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "env"), "--jobs", "1"])
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seeds"] == [11, 12]
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "flag"), "--jobs", "1", "--seed", "3"])
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["seeds"] == [3, 4]
    monkeypatch.setenv("ROBUST_CRL_SEED", "x")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "bad")]) == 2


def test_exact_mode_records_feasibility(tmp_path):
    cfg = write_cfg(tmp_path, mode="exact", threshold='"default"')
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--jobs", "1"]) == 0
    runs = json.loads((tmp_path / "r" / "manifest.json").read_text())["runs"]
    assert all("slack" in r["feasibility"] for r in runs)


def test_eval_outputs_and_hash_refusal(tmp_path):
    cfg = write_cfg(tmp_path)
    run = tmp_path / "run"
    main(["train", "--config", str(cfg), "--out", str(run), "--jobs", "1"])
    assert main(["eval", "--run", str(run), "--jobs", "1"]) == 0
    for name in ("eval.csv", "eval_summary.json", "vr.svg", "vc.svg"):
        assert (run / name).exists()
    rows = (run / "eval.csv").read_text().splitlines()
    assert rows[0] == "iterate,method,metric,mean,p5,p95,exact" and len(rows) == 1 + 3 * 5 * 2
    summary = json.loads((run / "eval_summary.json").read_text())
    assert len(summary["methods"]["robust_rpd"]["final_exact_Vc"]) == 2
    doc = json.loads((run / "env.json").read_text())
    doc["reward"][0][0] = 0.5
    tampered = tmp_path / "t.json"
    tampered.write_text(json.dumps(doc))
    assert main(["eval", "--run", str(run), "--env", str(tampered)]) == 3


def test_eval_refuses_per_replica_environments(tmp_path):
    cfg = write_cfg(tmp_path, mode="exact", threshold="2.0", extra='replicate = "env"')
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--jobs", "1"])
    assert main(["eval", "--run", str(tmp_path / "r")]) == 2


def test_gen_counterexample_and_verify(tmp_path, capsys):
    assert main(["gen", "--kind", "n_chain", "--n", "6", "--out", str(tmp_path / "g")]) == 0
    env = tmp_path / "g" / "env.json"
    assert load_mdp(env).n_states == 6
    assert main(["gen", "--kind", "garnet", "--sn", "3", "--an", "2", "--threshold", "robust",
                 "--out", str(tmp_path / "x.json")]) == 0
    assert main(["verify", "--env", str(env), "--out", str(tmp_path / "v")]) == 0
    assert json.loads((tmp_path / "v" / "verify.json").read_text())[0]["passed"]
    doc = json.loads(env.read_text())
    doc["kernel"][0][0][0] += 0.5
    env.write_text(json.dumps(doc))
    assert main(["verify", "--env", str(env)]) == 1
    assert main(["counterexample", "--out", str(tmp_path / "ce")]) == 0
    assert json.loads((tmp_path / "ce" / "counterexample.json").read_text())["verdict"] is True
    assert "verdict=True" in capsys.readouterr().out


def test_td_step_spellings(tmp_path):
    from robust_crl.cli import _td_step
    assert _td_step("default") is None and _td_step([1.0, 5.0]) == (1.0, 5.0)
    cfg = write_cfg(tmp_path).read_text().replace("inner_cap = 2000", 'inner_cap = 2000\ntd_step = [2.0, 10.0]')
    path = tmp_path / "s.toml"
    path.write_text(cfg)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "r"), "--jobs", "1", "--T", "2"]) == 0
