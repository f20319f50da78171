import pytest

from mkgd.config import RunConfig, make_run_config, parse_config_file
from mkgd.errors import DataError


def test_paper_scale_defaults():
    cfg = RunConfig()
    assert cfg.embed_dim == 300
    assert cfg.hidden_dim == 300
    assert cfg.max_vocab == 30000
    assert cfg.alpha == 1e-4 and cfg.beta == 1e-4
    assert cfg.inner_steps == 4 and cfg.test_update_steps == 10
    assert cfg.num_tasks == 5


def test_desk_preset_overrides():
    cfg = make_run_config(preset="desk")
    assert cfg.embed_dim == 32
    assert cfg.hidden_dim == 32
    assert cfg.max_vocab == 200
    # untouched fields keep the paper-scale defaults
    assert cfg.k_support == 8 and cfg.k_query == 14


def test_paper_preset_is_defaults():
    assert make_run_config(preset="paper") == RunConfig()


def test_unknown_preset_rejected():
    with pytest.raises(DataError):
        make_run_config(preset="galaxy")


def test_config_file_overrides_preset(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nalpha=0.01\n\nhidden_dim = 16\nper_task_copies=true\n")
    cfg = make_run_config(preset="desk", config_path=path)
    assert cfg.alpha == 0.01
    assert cfg.hidden_dim == 16
    assert cfg.per_task_copies is True
    assert cfg.embed_dim == 32  # preset survives where the file is silent


def test_config_file_errors(tmp_path):
    bad_key = tmp_path / "a.cfg"
    bad_key.write_text("warp_speed=9\n")
    with pytest.raises(DataError):
        parse_config_file(bad_key)
    bad_val = tmp_path / "b.cfg"
    bad_val.write_text("alpha=fast\n")
    with pytest.raises(DataError):
        parse_config_file(bad_val)
    no_eq = tmp_path / "c.cfg"
    no_eq.write_text("alpha 0.1\n")
    with pytest.raises(DataError):
        parse_config_file(no_eq)


def test_env_seed_overrides_file_but_not_flags(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("seed=11\n")
    monkeypatch.setenv("MKGD_SEED", "99")
    cfg = make_run_config(preset="desk", config_path=path)
    assert cfg.seed == 99
    cfg = make_run_config(preset="desk", config_path=path, overrides={"seed": 3})
    assert cfg.seed == 3
    monkeypatch.delenv("MKGD_SEED")
    cfg = make_run_config(preset="desk", config_path=path)
    assert cfg.seed == 11


def test_flag_overrides_skip_none():
    cfg = make_run_config(preset="desk", overrides={"alpha": None, "beta": 0.5})
    assert cfg.alpha == 0.005
    assert cfg.beta == 0.5
