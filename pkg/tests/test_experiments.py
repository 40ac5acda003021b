import os

import pytest

from greenlaunch.experiments import (
    DEFAULT_AGENTS,
    AgentSpec,
    ExperimentSpec,
    load_spec,
    parse_recipe,
    read_results,
    run_experiment,
    worker_count,
)
from greenlaunch.sim import ConfigError

TINY = dict(resources=(10,), seeds=(0, 1), dataset_rollouts=2, dataset_steps=60, eval_rollouts=2, eval_steps=60,
            bc_steps=15, offline_steps=15, online_steps=15, pretrain_steps=5, agreement_rollouts=1,
            agreement_steps=40, train_episode_len=30)


def tiny_spec(experiment, out, **kw):
    return ExperimentSpec(experiment, output_dir=str(out), **{**TINY, **kw})


def test_parse_recipe():
    assert parse_recipe("combo") == {"sjf": 0.25, "fcfs": 0.25, "qos": 0.25, "hvf": 0.25}
    assert parse_recipe("qos_sjf") == {"qos": 0.5, "sjf": 0.5}
    assert parse_recipe("hvf") == {"hvf": 1.0}
    assert parse_recipe("qos:0.25+sjf:0.75") == {"qos": 0.25, "sjf": 0.75}
    with pytest.raises(ValueError):
        parse_recipe("qos:0.5+sjf:0.1")
    with pytest.raises(ValueError):
        parse_recipe("qos:0.5+edf:0.5")


def test_agent_spec_parse():
    a = AgentSpec.parse("offline-online:qos")
    assert (a.algo, a.data, a.name) == ("offline-online", "qos", "offline-online_qos")
    assert AgentSpec.parse("online").data is None
    with pytest.raises(ValueError):
        AgentSpec.parse("dqn:qos")


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec("fig9")
    with pytest.raises(ConfigError):
        ExperimentSpec("bc_quality", seeds=())
    assert ExperimentSpec("launchpad").agents == DEFAULT_AGENTS["launchpad"]
    big = ExperimentSpec("bc_quality").paper_scale()
    assert 100 in big.resources and big.eval_steps == 100_000


def test_load_spec_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[greenlaunch]\nschema_version = 1\n[experiment]\nid = offline_vs_bc\nresources = 10, 20\n"
                    "seeds = 3\noutput_dir = out\nbc_steps = 7\n[sim]\nlambda_load = 1.1\n[agent]\ngamma = 0.9\n")
    spec = load_spec(path)
    assert spec.resources == (10, 20) and spec.seeds == (3,) and spec.bc_steps == 7
    assert spec.output_dir == str(tmp_path / "out")
    assert spec.sim.lambda_load == 1.1 and spec.agent.gamma == 0.9
    path.write_text("[greenlaunch]\nschema_version = 1\n[experiment]\nid = offline_vs_bc\nbogus = 1\n")
    with pytest.raises(ConfigError):
        load_spec(path)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("GREENLAUNCH_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("GREENLAUNCH_THREADS", "x")
    assert worker_count(1) == 1


def test_offline_vs_bc_rows(tmp_path):
    res = run_experiment(tiny_spec("offline_vs_bc", tmp_path), workers=1)
    assert res.complete
    rows = read_results(res.csv_path)
    per_seed = [r for r in rows if r["seed"] != "mean" and r["metric"] == "total_job_value"]
    assert sorted((r["agent"], r["seed"]) for r in per_seed) == [
        ("bc_combo", "0"), ("bc_combo", "1"), ("offline_combo", "0"), ("offline_combo", "1")]
    means = [r for r in rows if r["seed"] == "mean" and r["metric"] == "total_job_value"]
    assert {r["agent"] for r in means} == {"bc_combo", "offline_combo"}
    assert list(rows[0]) == ["experiment", "agent", "resources", "seed", "metric", "value"]
    assert (tmp_path / "value_vs_resources.svg").read_text().startswith("<svg")


def test_agreement_matrix_layout(tmp_path):
    res = run_experiment(tiny_spec("agreement", tmp_path, seeds=(0,)), workers=1)
    assert res.complete
    agents = {r["agent"] for r in read_results(res.csv_path) if r["metric"] == "agreement_qos"}
    assert agents == {f"{a}_{d}" for a in ("bc", "offline", "offline-online") for d in ("qos", "qos_sjf", "combo")}
    assert (tmp_path / "agreement.svg").exists()


def test_rerun_reproduces_csv(tmp_path):
    a = run_experiment(tiny_spec("launchpad", tmp_path / "a", curve_every=5, curve_rollouts=1, curve_steps=30),
                       workers=1)
    b = run_experiment(tiny_spec("launchpad", tmp_path / "b", curve_every=5, curve_rollouts=1, curve_steps=30),
                       workers=2)
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
    assert any(r["metric"].startswith("value@") for r in read_results(a.csv_path))


def test_failed_cell_is_recorded(tmp_path):
    spec = tiny_spec("offline_vs_bc", tmp_path, seeds=(0,))
    spec.agent = spec.agent.replace(lr=float("inf"))  # training cannot succeed
    res = run_experiment(spec, workers=1)
    assert not res.complete
    rows = read_results(res.csv_path)
    assert {r["metric"] for r in rows if r["seed"] == "0"} == {"error"}
    assert os.path.exists(tmp_path / "run.json")
