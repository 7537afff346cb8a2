"""Decomposed-critic agents and their baselines."""

from __future__ import annotations

from typing import Dict, Optional, Type

from ..config import ExperimentConfig
from ..envs import Environment, make_env, wrap_delay
from ..seeding import RandomStreams
from .base import Agent, ModelBundle
from .ddpg import DDPGAgent
from .ddsr import DDSRAgent
from .ppo import PPOAgent
from .vd_ddpg import VDDDPGAgent
from .vd_ppo import VDPPOAgent

AGENT_REGISTRY: Dict[str, Type[Agent]] = {
    VDDDPGAgent.name: VDDDPGAgent,
    VDPPOAgent.name: VDPPOAgent,
    DDPGAgent.name: DDPGAgent,
    PPOAgent.name: PPOAgent,
    DDSRAgent.name: DDSRAgent,
}


def build_agent(
    config: ExperimentConfig,
    env: Optional[Environment] = None,
    streams: Optional[RandomStreams] = None,
) -> Agent:
    """Instantiate the configured agent on the configured (delay-wrapped) environment."""

    if env is None:
        env = wrap_delay(make_env(config.env), config.delay)
    return AGENT_REGISTRY[config.agent](env, config, streams=streams)


__all__ = [
    "AGENT_REGISTRY",
    "Agent",
    "DDPGAgent",
    "DDSRAgent",
    "ModelBundle",
    "PPOAgent",
    "VDDDPGAgent",
    "VDPPOAgent",
    "build_agent",
]
