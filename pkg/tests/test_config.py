from __future__ import annotations

import json
from pathlib import Path

import pytest

from pame.config import DEFAULTS, apply_override, build_problem, load_config, merge, run_config
from pame.engine import Mode
from pame.errors import ConfigError
from pame.losses import LossKind, save_datasets

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_are_complete():
    cfg = load_config(env={})
    assert cfg == DEFAULTS
    rc = run_config(cfg)
    assert rc.mode is Mode.PAME and rc.seed == 0


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(path, env={})
        run_config(cfg)


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "engine": {\n    "sigma": 2\n  }\n}\n')
    with pytest.raises(ConfigError, match=r"engine\.sigma.*line 4"):
        load_config(path, env={})


def test_section_must_be_object(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"graph": 3}')
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_invalid_json_and_missing_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"seed": }')
    with pytest.raises(ConfigError, match="line 1"):
        load_config(path, env={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json", env={})


def test_invalid_engine_values_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides=["engine.gamma=0.9"], env={})


def test_overrides():
    cfg = load_config(overrides=["engine.nu=0.5", "graph.m=9", "kappa=[2, 4]", "engine.mode=DPSGD"], env={})
    assert cfg["engine"]["nu"] == 0.5
    assert cfg["graph"]["m"] == 9
    assert run_config(cfg).kappa == (2, 4)
    assert run_config(cfg).mode is Mode.DPSGD
    with pytest.raises(ConfigError):
        apply_override(cfg, "graph.colour=red")
    with pytest.raises(ConfigError):
        apply_override(cfg, "graph=3")
    with pytest.raises(ConfigError):
        apply_override(cfg, "no-equals-sign")


def test_seed_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"seed": 3}')
    assert load_config(path, env={})["seed"] == 3
    assert load_config(path, env={"PAME_SEED": "7"})["seed"] == 7
    assert load_config(path, ["seed=11"], env={"PAME_SEED": "7"})["seed"] == 11
    with pytest.raises(ConfigError):
        load_config(path, env={"PAME_SEED": "x"})


def test_merge_does_not_mutate():
    base = {"a": {"b": 1}}
    out = merge(base, {"a": {"b": 2}})
    assert base == {"a": {"b": 1}} and out == {"a": {"b": 2}}


def test_effective_config_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "oddring_m5.json", ["engine.sigma0=3"], env={})
    path = tmp_path / "effective.json"
    path.write_text(json.dumps(cfg))
    assert load_config(path, env={}) == cfg


def test_build_problem_variants(tmp_path):
    cfg = load_config(CONFIGS / "oddring_m5.json", env={})
    problem = build_problem(cfg)
    assert problem.m == 5 and problem.n == 20
    assert problem.datasets[0].size == 80
    logistic = load_config(overrides=["graph.m=6", "graph.degree=3", "data.example=Logistic", "data.n=5",
                                      "data.samples_per_node=10", "data.label_skew=1"], env={})
    problem = build_problem(logistic)
    assert problem.loss.kind is LossKind.LOGISTIC
    assert set(problem.datasets[0].targets.tolist()) == {0.0}
    assert build_problem(logistic, degree=5).graph.degrees == [5] * 6
    with pytest.raises(ConfigError):
        build_problem(load_config(overrides=["data.example=Poisson"], env={}))


def test_graph_and_data_from_files(tmp_path):
    cfg = load_config(CONFIGS / "oddring_m5.json", env={})
    problem = build_problem(cfg)
    problem.graph.save(tmp_path / "g.json")
    save_datasets(tmp_path / "data", problem.datasets, problem.truth)
    cfg = load_config(overrides=[f"graph.file={json.dumps(str(tmp_path / 'g.json'))}",
                                 f"data.dir={json.dumps(str(tmp_path / 'data'))}"], env={})
    again = build_problem(cfg)
    assert again.graph == problem.graph
    assert again.n == 20
