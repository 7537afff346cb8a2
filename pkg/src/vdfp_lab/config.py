"""Configuration records and the flat YAML loader for experiments."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

AgentName = Literal["vd_ddpg", "vd_ppo", "ddpg", "ppo", "ddsr"]
DelayMode = Literal["none", "accumulate", "shift"]

AGGREGATED_LENGTH = 64

# Per-agent actor learning rates, used when ``agent.actor_lr`` is left unset.
ACTOR_LEARNING_RATES: Dict[str, float] = {
    "vd_ddpg": 2.5e-4,
    "ddsr": 2.5e-4,
    "ddpg": 1e-4,
    "ppo": 1e-4,
    "vd_ppo": 1e-4,
}


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DelayConfig(_Record):
    """Which delayed-reward protocol wraps the environment."""

    mode: DelayMode = Field(default="none", description="none | accumulate | shift.")
    d: int = Field(default=0, ge=0, description="Delay step; must be >= 1 unless mode is none.")

    @model_validator(mode="after")
    def _check_delay(self) -> "DelayConfig":
        if self.mode != "none" and self.d < 1:
            raise ValueError(f"delay mode '{self.mode}' requires d >= 1, got {self.d}")
        return self


def aggregation_factor(max_len: int) -> int:
    """Rows folded into one by the aggregation layer for a given max length."""

    if max_len <= AGGREGATED_LENGTH:
        return 1
    if max_len % AGGREGATED_LENGTH:
        raise ValueError(f"max_len {max_len} > {AGGREGATED_LENGTH} must be a multiple of it")
    return max_len // AGGREGATED_LENGTH


class ReprConfig(_Record):
    """Convolutional trajectory encoder (text-CNN over state-action rows)."""

    filter_heights: Tuple[int, ...] = Field(
        default=(1, 2, 4, 8, 16, 32, 64),
        description="Window heights of the convolutional filters.",
    )
    filter_counts: Tuple[int, ...] = Field(
        default=(20, 20, 10, 10, 5, 5, 5),
        description="Number of filters per height.",
    )
    repr_dim: int = Field(default=100, ge=1, description="Dimension of the representation m.")
    dropout_prob: float = Field(default=0.2, ge=0.0, lt=1.0)
    max_len: int = Field(default=64, ge=1, description="Maximum segment length L.")
    agg_factor: int = Field(default=1, ge=1, description="Rows per aggregated row (L/64 if L>64).")

    @model_validator(mode="after")
    def _check_filters(self) -> "ReprConfig":
        if len(self.filter_heights) != len(self.filter_counts):
            raise ValueError("filter_heights and filter_counts must have equal length")
        if not self.filter_heights:
            raise ValueError("at least one filter is required")
        if min(self.filter_heights) < 1 or min(self.filter_counts) < 1:
            raise ValueError("filter heights and counts must be positive")
        expected = aggregation_factor(self.max_len)
        if self.agg_factor != expected:
            raise ValueError(
                f"agg_factor must be {expected} for max_len={self.max_len}, got {self.agg_factor}"
            )
        return self

    @property
    def feature_dim(self) -> int:
        return sum(self.filter_counts)

    @property
    def encoder_rows(self) -> int:
        return self.max_len // self.agg_factor


class ReturnModelConfig(_Record):
    kind: Literal["linear", "leaky_relu", "icnn", "ne_icnn"] = "linear"
    alpha: float = Field(default=0.2, gt=0.0, le=1.0, description="Leaky-ReLU negative slope.")
    hidden: Tuple[int, ...] = Field(
        default=(64, 64), description="Hidden widths of the input-convex variants."
    )


class VAEConfig(_Record):
    """Conditional beta-VAE used as the predictive dynamics model."""

    z_dim: int = Field(default=50, ge=1)
    beta: float = Field(default=1000.0, gt=0.0, description="KL weight.")
    clip_c: float = Field(
        default=0.2, ge=0.0, description="Clip value for generative noise; .inf disables clipping."
    )
    conditioning: Literal["elementwise_product", "concatenation"] = "elementwise_product"
    encoder_hidden: Tuple[int, int] = Field(default=(400, 200))
    decoder_hidden: Tuple[int, int] = Field(default=(200, 400))
    width_scale: Optional[float] = Field(
        default=None,
        gt=0.0,
        description=(
            "Multiplier on encoder/decoder widths. Unset means 0.5 when "
            "state_dim + action_dim < 8, otherwise 1.0."
        ),
    )

    def scaled_widths(self, cond_dim: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        scale = self.width_scale
        if scale is None:
            scale = 0.5 if cond_dim < 8 else 1.0

        def _scale(widths: Tuple[int, int]) -> Tuple[int, int]:
            return (max(1, round(widths[0] * scale)), max(1, round(widths[1] * scale)))

        return _scale(self.encoder_hidden), _scale(self.decoder_hidden)


class AgentConfig(_Record):
    """Training hyperparameters; defaults follow the common table of the method."""

    gamma: float = Field(default=0.99, ge=0.0, le=1.0)
    actor_lr: Optional[float] = Field(
        default=None, gt=0.0, description="Unset selects the per-agent default."
    )
    critic_lr: float = Field(default=1e-3, gt=0.0, description="VAE / SR / Q / V learning rate.")
    return_lr: float = Field(default=5e-4, gt=0.0, description="Return (reward) model rate.")
    batch_size: int = Field(default=64, ge=1, description="Off-policy minibatch.")
    ppo_batch: int = Field(default=256, ge=1, description="On-policy minibatch.")
    buffer_steps: int = Field(default=100_000, ge=1)
    exploration_sigma: float = Field(default=0.1, ge=0.0)
    target_update: float = Field(default=1e-3, gt=0.0, le=1.0)
    collect_steps: int = Field(default=5000, ge=0)
    pretrain_steps: int = Field(default=15000, ge=0)
    baseline_warmup_steps: int = Field(default=10000, ge=0)
    return_every_pretrain: int = Field(default=10, ge=1)
    return_every: int = Field(default=50, ge=1)
    gae_lambda: float = Field(default=0.95, ge=0.0, le=1.0)
    ppo_clip: float = Field(default=0.2, gt=0.0)
    epochs: int = Field(default=10, ge=1)
    update_freq: int = Field(default=5, ge=1, description="Episodes between on-policy updates.")
    actor_hidden: Tuple[int, int] = Field(default=(200, 100))
    critic_hidden: Tuple[int, int] = Field(default=(200, 100))
    sr_repr_dim: int = Field(default=100, ge=1)
    dynamics: Literal["vae", "mlp"] = "vae"
    divergence_limit: float = Field(default=1e6, gt=0.0)

    def resolved_actor_lr(self, agent: str) -> float:
        return self.actor_lr if self.actor_lr is not None else ACTOR_LEARNING_RATES[agent]


class ExperimentConfig(_Record):
    """Everything needed to reproduce one seeded training run."""

    env: str = Field(default="point_mass_2d", description="Registered environment name.")
    agent: AgentName = "vd_ddpg"
    delay: DelayConfig = Field(default_factory=DelayConfig)
    total_steps: int = Field(default=50_000, ge=0)
    seed: int = Field(default=0, ge=0)
    repr: ReprConfig = Field(default_factory=ReprConfig)
    vae: VAEConfig = Field(default_factory=VAEConfig)
    return_model: ReturnModelConfig = Field(default_factory=ReturnModelConfig)
    training: AgentConfig = Field(default_factory=AgentConfig)
    output_dir: Path = Field(default=Path("runs"), description="Where run artefacts are written.")

    @model_validator(mode="after")
    def _check_env(self) -> "ExperimentConfig":
        from .envs import ENV_REGISTRY

        if self.env not in ENV_REGISTRY:
            raise ValueError(f"unknown env '{self.env}'; choose from {sorted(ENV_REGISTRY)}")
        return self

    def run_name(self) -> str:
        delay = "" if self.delay.mode == "none" else f"_{self.delay.mode}{self.delay.d}"
        return f"{self.env}_{self.agent}{delay}_seed{self.seed}"

    def to_flat(self) -> Dict[str, Any]:
        """Dotted-key mapping accepted back by :func:`load_config`."""

        return flatten(self.model_dump())


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, prefix=f"{name}."))
        else:
            flat[name] = _yaml_safe(value)
    return flat


def _yaml_safe(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}")
        if isinstance(value, Mapping):
            raise ConfigError(f"config is flat; use dotted keys instead of nesting under '{key}'")
        parts = key.split(".")
        node = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key '{key}' collides with scalar '{part}'")
            node = child
        if parts[-1] in node:
            raise ConfigError(f"duplicate config key '{key}'")
        node[parts[-1]] = value
    return tree


def load_config(
    path: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a flat YAML file, env vars and overrides.

    Precedence, lowest first: defaults, the file, ``VDFP_*`` environment
    variables, explicit ``overrides`` (dotted keys, e.g. from CLI flags).
    """

    flat: Dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"Config file {path} must contain a key-value mapping")
        flat.update(loaded)

    env = os.environ
    if output_root := env.get("VDFP_OUTPUT_ROOT"):
        flat["output_dir"] = str(Path(output_root).expanduser())
    if seed := env.get("VDFP_SEED"):
        try:
            flat["seed"] = int(seed)
        except ValueError as exc:
            raise ConfigError(f"VDFP_SEED must be an integer, got {seed!r}") from exc

    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value

    try:
        return ExperimentConfig.model_validate(unflatten(flat))
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def dump_config(config: ExperimentConfig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_flat(), sort_keys=True), encoding="utf-8")
