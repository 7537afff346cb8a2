"""Tests for configuration loading, validation and precedence."""

from pathlib import Path

import pytest

from vdfp_lab.config import (
    AgentConfig,
    DelayConfig,
    ExperimentConfig,
    ReprConfig,
    VAEConfig,
    dump_config,
    load_config,
)
from vdfp_lab.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("VDFP_OUTPUT_ROOT", raising=False)
    monkeypatch.delenv("VDFP_SEED", raising=False)


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_file() -> None:
    config = load_config()
    assert config.agent == "vd_ddpg"
    assert config.vae.z_dim == 50
    assert config.vae.beta == 1000.0
    assert config.vae.clip_c == 0.2
    assert config.repr.repr_dim == 100
    assert config.training.gamma == 0.99


def test_dotted_keys_from_file(tmp_path: Path) -> None:
    path = write(
        tmp_path,
        "agent: ddsr\nenv: pendulum_stabilize\ndelay.mode: shift\ndelay.d: 4\n"
        "vae.clip_c: .inf\ntraining.batch_size: 32\n",
    )
    config = load_config(path)
    assert config.agent == "ddsr"
    assert config.delay == DelayConfig(mode="shift", d=4)
    assert config.vae.clip_c == float("inf")
    assert config.training.batch_size == 32


def test_unknown_keys_are_rejected(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "vae.zdim: 10\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "learning_rate: 0.1\n"))


def test_nested_mappings_are_rejected(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="dotted keys"):
        load_config(write(tmp_path, "vae:\n  z_dim: 10\n"))


def test_invalid_values_are_config_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "delay.mode: accumulate\ndelay.d: 0\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "env: half_cheetah\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "- just\n- a list\n"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_environment_variables_override_file(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    path = write(tmp_path, "seed: 3\noutput_dir: elsewhere\n")
    monkeypatch.setenv("VDFP_SEED", "11")
    monkeypatch.setenv("VDFP_OUTPUT_ROOT", str(tmp_path / "runs"))
    config = load_config(path)
    assert config.seed == 11
    assert config.output_dir == tmp_path / "runs"


def test_bad_seed_variable(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("VDFP_SEED", "eleven")
    with pytest.raises(ConfigError, match="VDFP_SEED"):
        load_config()


def test_overrides_win_and_none_is_ignored(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("VDFP_SEED", "11")
    overrides = {"seed": 5, "agent": None, "delay.mode": "accumulate", "delay.d": 3}
    config = load_config(overrides=overrides)
    assert config.seed == 5
    assert config.agent == "vd_ddpg"
    assert config.delay.d == 3


def test_dump_then_load_gives_same_config(tmp_path: Path) -> None:
    config = ExperimentConfig(
        agent="vd_ppo",
        seed=7,
        vae=VAEConfig(clip_c=float("inf"), conditioning="concatenation"),
        output_dir=tmp_path,
    )
    path = tmp_path / "dumped.yaml"
    dump_config(config, path)
    assert load_config(path) == config


def test_actor_learning_rate_resolution() -> None:
    training = AgentConfig()
    assert training.resolved_actor_lr("vd_ddpg") == 2.5e-4
    assert training.resolved_actor_lr("ddsr") == 2.5e-4
    assert training.resolved_actor_lr("ppo") == 1e-4
    assert AgentConfig(actor_lr=0.01).resolved_actor_lr("ddpg") == 0.01


def test_long_segments_require_matching_aggregation() -> None:
    assert ReprConfig(max_len=256, agg_factor=4).encoder_rows == 64
    with pytest.raises(ValueError):
        ReprConfig(max_len=256)
    with pytest.raises(ValueError):
        ReprConfig(max_len=100, agg_factor=2)
    with pytest.raises(ValueError):
        ReprConfig(filter_heights=(1, 2), filter_counts=(4,))


def test_vae_widths_halve_for_small_inputs() -> None:
    cfg = VAEConfig()
    assert cfg.scaled_widths(3) == ((200, 100), (100, 200))
    assert cfg.scaled_widths(17) == ((400, 200), (200, 400))
    assert VAEConfig(width_scale=0.25).scaled_widths(17) == ((100, 50), (50, 100))


def test_run_name_includes_delay() -> None:
    plain = ExperimentConfig(env="point_mass_2d", agent="ddpg", seed=2)
    assert plain.run_name() == "point_mass_2d_ddpg_seed2"
    delayed = plain.model_copy(update={"delay": DelayConfig(mode="accumulate", d=5)})
    assert delayed.run_name() == "point_mass_2d_ddpg_accumulate5_seed2"
