"""Pydantic data structures describing the lab's records."""

from __future__ import annotations

import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

LOG_COLUMNS: Tuple[str, ...] = (
    "global_step",
    "episode_index",
    "episode_return",
    "recon_loss",
    "kl_loss",
    "return_loss",
    "actor_objective",
)


class EnvSpec(BaseModel):
    """Machine-readable description of a built-in environment."""

    model_config = ConfigDict(frozen=True)

    name: str
    state_dim: int = Field(ge=1)
    action_dim: int = Field(ge=1)
    action_low: Tuple[float, ...]
    action_high: Tuple[float, ...]
    max_episode_steps: int = Field(ge=1, description="Horizon T.")
    reward_low: float = Field(description="Lower bound on any single-step base reward.")
    reward_high: float = Field(description="Upper bound on any single-step base reward.")
    start_region: str = Field(default="", description="Where reset() places the initial state.")

    @model_validator(mode="after")
    def _check_bounds(self) -> "EnvSpec":
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("action bounds must have action_dim entries")
        for low, high in zip(self.action_low, self.action_high):
            if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
                raise ValueError(f"invalid action bound [{low}, {high}]")
        if self.reward_low > self.reward_high:
            raise ValueError("reward_low must not exceed reward_high")
        return self


class LogRow(BaseModel):
    """One training-log row, written once per finished episode.

    Loss columns are episode means of whatever updates ran during that
    episode; ``return_loss`` holds the value-model regression loss (return
    model for decomposed agents, TD or value loss for baselines). Columns with
    no update are NaN.
    """

    global_step: int = Field(ge=0)
    episode_index: int = Field(ge=0)
    episode_return: float
    recon_loss: float = math.nan
    kl_loss: float = math.nan
    return_loss: float = math.nan
    actor_objective: float = math.nan

    def as_csv_row(self) -> List[str]:
        return [repr(getattr(self, column)) for column in LOG_COLUMNS]


class RunSummary(BaseModel):
    """Summary of a run's 100-episode moving-average return."""

    episodes: int = Field(ge=0)
    final_average: Optional[float] = None
    max_average: Optional[float] = None
    mean_average: Optional[float] = None


class RunRecord(BaseModel):
    env: str
    agent: str
    seed: int
    delay_mode: str = "none"
    delay_steps: int = 0
    rows: List[LogRow] = Field(default_factory=list)
    summary: RunSummary

    @property
    def label(self) -> str:
        if self.delay_mode == "none":
            return self.agent
        return f"{self.agent} ({self.delay_mode} d={self.delay_steps})"


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
