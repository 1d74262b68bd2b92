import argparse

import pytest

from helpers.field_classes import ConfigError
from helpers.run_config import ExperimentConfig, RunContext, config_from_dict, load_config


def _write(tmp_path, text):
    path = tmp_path / "config.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.grid.n == 48
    assert cfg.bundle.n_points == 64 and cfg.bundle.n_dirs == 32
    assert cfg.solver.reg_lambda == 1e-6
    assert len(cfg.stability.epsilons) >= 10


def test_toml_sections_are_read(tmp_path, monkeypatch):
    monkeypatch.delenv("WORKBENCH_OUT", raising=False)
    monkeypatch.delenv("WORKBENCH_THREADS", raising=False)
    path = _write(tmp_path, 'seed = 7\n[grid]\nn = 24\n[wkb]\nh = [0.5, 0.25]\n[metric]\nepsilon = 1\n')
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.grid.n == 24
    assert cfg.wkb.h == (0.5, 0.25)
    assert cfg.metric.epsilon == 1.0 and isinstance(cfg.metric.epsilon, float)
    assert cfg.bundle == ExperimentConfig().bundle


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"grid": {"nodes": 24}})
    with pytest.raises(ConfigError, match="unknown section"):
        config_from_dict({"solvers": {}})


def test_missing_file_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_broken_toml_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="could not parse"):
        load_config(_write(tmp_path, "[grid\nn = 3\n"))


def test_environment_and_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("WORKBENCH_OUT", str(tmp_path / "env_out"))
    monkeypatch.setenv("WORKBENCH_THREADS", "3")
    path = _write(tmp_path, "seed = 1\n")
    cfg = load_config(path)
    assert cfg.out_dir == str(tmp_path / "env_out")
    assert cfg.threads == 3
    cfg = load_config(path, out_dir=str(tmp_path / "cli"), seed=5, threads=2)
    assert (cfg.out_dir, cfg.seed, cfg.threads) == (str(tmp_path / "cli"), 5, 2)

    monkeypatch.setenv("WORKBENCH_THREADS", "many")
    with pytest.raises(ConfigError, match="WORKBENCH_THREADS"):
        load_config(path)


def test_hash_ignores_output_location():
    cfg = ExperimentConfig()
    moved = cfg.with_overrides(out_dir="elsewhere", threads=4)
    assert moved.config_hash == cfg.config_hash
    assert cfg.with_overrides(seed=1).config_hash != cfg.config_hash


@pytest.mark.parametrize("data, message", [
    ({"grid": {"dim": 4}}, "grid.dim"),
    ({"grid": {"n": 4}}, "too coarse"),
    ({"metric": {"family": "warped"}}, "unknown"),
    ({"time": {"cfl": 1.5}}, "stability limit"),
    ({"wkb": {"source_mode": "magic"}}, "source_mode"),
    ({"ucp": {"gamma_sharp_fractions": [0.0]}}, "fractions"),
    ({"gauge": {"refinements": [48, 32]}}, "increasing"),
    ({"seed": -1}, "seed"),
    ({"threads": 0}, "threads"),
])
def test_validation(data, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(data)


def test_run_context(tmp_path):
    cfg = ExperimentConfig().with_overrides(out_dir=str(tmp_path), seed=3)
    ctx = RunContext(cfg, "geodesics", argparse.Namespace())
    assert ctx.out_dir == tmp_path / "geodesics"
    assert ctx.out_dir.is_dir()
    assert ctx.threads == 1
    other = RunContext(cfg, "geodesics")
    assert ctx.rng.standard_normal() == other.rng.standard_normal()
