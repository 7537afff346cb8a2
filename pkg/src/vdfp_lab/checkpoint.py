"""Save and restore every parameter set, optimizer, counter and random stream of an agent."""

from __future__ import annotations

import logging
import pickle
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List

import torch

from .errors import CheckpointError

if TYPE_CHECKING:
    from .agents.base import Agent

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
# Config keys that define the reward stream the saved learner was fitted to.
REWARD_STREAM_KEYS = ("delay.mode", "delay.d")


def checkpoint_save(agent: "Agent", path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "agent": agent.name,
        "env": agent.spec.name,
        "config": agent.config.to_flat(),
        "shapes": agent.bundle.parameter_shapes(),
        "state": agent.state_dict(),
    }
    torch.save(payload, path)
    logger.debug("saved %s checkpoint at step %d to %s", agent.name, agent.global_step, path)
    return path


def checkpoint_load(agent: "Agent", path: Path) -> None:
    """Restore ``agent`` in place.

    Version, agent kind, environment, reward delay and every parameter shape
    are checked before anything is loaded, so a rejected checkpoint leaves the
    agent untouched.
    """

    path = Path(path)
    try:
        # holds numpy arrays and replay transitions, not only tensors
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, EOFError, RuntimeError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"{path} is not a checkpoint")

    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version!r}; this build reads {FORMAT_VERSION}"
        )
    if payload.get("agent") != agent.name:
        raise CheckpointError(
            f"{path} holds a '{payload.get('agent')}' agent, expected '{agent.name}'"
        )
    if payload.get("env") != agent.spec.name:
        raise CheckpointError(
            f"{path} was trained on '{payload.get('env')}', expected '{agent.spec.name}'"
        )
    saved_config = payload.get("config", {})
    current_config = agent.config.to_flat()
    for key in REWARD_STREAM_KEYS:
        if saved_config.get(key) != current_config[key]:
            raise CheckpointError(
                f"{path} has {key}={saved_config.get(key)!r}, expected {current_config[key]!r}"
            )
    problems = shape_mismatches(payload.get("shapes", {}), agent.bundle.parameter_shapes())
    if problems:
        raise CheckpointError(f"{path} does not fit this agent: " + "; ".join(problems))

    agent.load_state_dict(payload["state"])
    logger.info("restored %s from %s at step %d", agent.name, path, agent.global_step)


def shape_mismatches(
    saved: Dict[str, Dict[str, Any]], expected: Dict[str, Dict[str, Any]]
) -> List[str]:
    problems: List[str] = []
    for name in sorted(set(saved) | set(expected)):
        if name not in saved:
            problems.append(f"missing parameter set '{name}'")
            continue
        if name not in expected:
            problems.append(f"unexpected parameter set '{name}'")
            continue
        for key in sorted(set(saved[name]) | set(expected[name])):
            have = tuple(saved[name].get(key, ()))
            want = tuple(expected[name].get(key, ()))
            if key not in saved[name] or key not in expected[name] or have != want:
                problems.append(f"{name}.{key}: saved {have}, expected {want}")
    return problems
