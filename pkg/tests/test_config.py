import json

import pytest

from dyad.config import ConfigError, PipelineConfig, config_from_dict, load_config


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.segments, cfg.tau, cfg.learning_rate, cfg.passes, cfg.iterations, cfg.batch_size) == \
        (32, 0.5, 0.005, 10, 30, 32)
    assert (cfg.iforest_trees, cfg.iforest_subsample, cfg.meb_epsilon, cfg.hidden) == (100, 256, 1e-3, (32, 8))


def test_dump_then_load_round_trip(tmp_path):
    cfg = PipelineConfig(passes=3, tau=0.4, hidden=(16, 4), pseudo_scorer="lof", manifest="/x/m.json")
    (tmp_path / "c.json").write_text(cfg.dumps())
    assert load_config(tmp_path / "c.json") == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"passes": 2, "pases": 3})


@pytest.mark.parametrize("doc", [{"tau": 1.0}, {"passes": 0}, {"pseudo_scorer": "mcd"},
                                 {"hidden": []}, {"seed": -1}, {"use_dynamicity": "yes"}])
def test_validation(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_precedence(tmp_path, monkeypatch):
    (tmp_path / "c.json").write_text(json.dumps({"passes": 4, "iterations": 9}))
    monkeypatch.setenv("DYAD_SEED", "42")
    cfg = load_config(tmp_path / "c.json", {"iterations": 2})
    assert (cfg.passes, cfg.iterations, cfg.seed) == (4, 2, 42)
    assert load_config(None, {"seed": 5}).seed == 5
    (tmp_path / "s.json").write_text(json.dumps({"seed": 8}))
    assert load_config(tmp_path / "s.json").seed == 8
    monkeypatch.setenv("DYAD_SEED", "abc")
    with pytest.raises(ConfigError):
        load_config()


def test_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{passes: 2")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
