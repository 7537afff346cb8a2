"""DDPG baseline with a TD-trained Q critic and Polyak-averaged targets."""

from __future__ import annotations

import copy
import logging
from abc import abstractmethod
from typing import Any, Dict, List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..envs import StepResult
from ..errors import DivergenceError
from ..trajstore import EpisodeReplayBuffer, Transition, TransitionBatch
from .base import Actor, Agent, EpisodeStats, ModelBundle, soft_update

logger = logging.getLogger(__name__)


class QCritic(nn.Module):
    """``Q(s, a)``: the action joins after the first state layer."""

    def __init__(
        self, state_dim: int, action_dim: int, hidden: Tuple[int, int] = (200, 100)
    ) -> None:
        super().__init__()
        self.state_layer = nn.Linear(state_dim, hidden[0])
        self.joint_layer = nn.Linear(hidden[0] + action_dim, hidden[1])
        self.output = nn.Linear(hidden[1], 1)

    def forward(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.state_layer(states))
        h = F.relu(self.joint_layer(torch.cat([h, actions], dim=-1)))
        return self.output(h).squeeze(-1)


def td_targets(
    rewards: torch.Tensor,
    next_q: torch.Tensor,
    dones: torch.Tensor,
    gamma: float,
) -> torch.Tensor:
    """``r + gamma (1 - done) Q'(s', pi'(s'))``; terminal transitions keep the reward only."""

    return rewards + gamma * (1.0 - dones) * next_q


def critic_loss(
    critic: QCritic,
    target_critic: QCritic,
    target_actor: nn.Module,
    batch: TransitionBatch,
    gamma: float,
) -> torch.Tensor:
    with torch.no_grad():
        next_q = target_critic(batch.next_states, target_actor(batch.next_states))
        targets = td_targets(batch.rewards, next_q, batch.dones, gamma)
    return F.mse_loss(critic(batch.states, batch.actions), targets)


class OffPolicyBaseline(Agent):
    """Uniform random warm-up, then one critic and one actor step per env step."""

    uses_target_networks = True

    def make_actor(self) -> Actor:
        actor = Actor(
            self.spec.state_dim,
            self.spec.action_dim,
            self.spec.action_low,
            self.spec.action_high,
            hidden=self.training.actor_hidden,
        )
        self.target_actor = copy.deepcopy(actor)
        self.actor_optimizer = torch.optim.Adam(actor.parameters(), lr=self.actor_lr)
        self.buffer = EpisodeReplayBuffer(
            capacity_steps=self.training.buffer_steps, rng=self.streams.numpy("sampling")
        )
        return actor

    def select_action(self, state: np.ndarray) -> np.ndarray:
        if self.global_step < self.training.baseline_warmup_steps:
            return self.random_action()
        return self.act(state, explore=True)

    def after_step(
        self, state: np.ndarray, action: np.ndarray, result: StepResult, stats: EpisodeStats
    ) -> None:
        if len(self.buffer) == 0 or self.global_step <= self.training.baseline_warmup_steps:
            return
        batch = self.buffer.sample_transitions(self.training.batch_size)
        self.critic_step(batch, stats)
        self.actor_step(batch, stats)
        self.update_targets()

    def end_episode(self, transitions: List[Transition], stats: EpisodeStats) -> None:
        self.buffer.store_episode(transitions)

    def guard(self, q_values: torch.Tensor) -> None:
        magnitude = float(q_values.detach().abs().mean())
        if not np.isfinite(magnitude) or magnitude > self.training.divergence_limit:
            logger.error("%s: Q magnitude %.3g exceeds limit", self.name, magnitude)
            raise DivergenceError(
                "Q estimate diverged", step=self.global_step, mean_abs_q=magnitude
            )

    @abstractmethod
    def critic_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None: ...

    @abstractmethod
    def actor_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None: ...

    @abstractmethod
    def update_targets(self) -> None: ...

    def extra_state(self) -> Dict[str, Any]:
        return {"buffer": self.buffer.state_dict()}

    def load_extra_state(self, state: Dict[str, Any]) -> None:
        self.buffer.load_state_dict(state["buffer"])


class DDPGAgent(OffPolicyBaseline):
    name = "ddpg"
    critic_kind = "q-network"

    def build(self) -> ModelBundle:
        actor = self.make_actor()
        self.critic = QCritic(
            self.spec.state_dim, self.spec.action_dim, self.training.critic_hidden
        )
        self.target_critic = copy.deepcopy(self.critic)
        self.critic_optimizer = torch.optim.Adam(
            self.critic.parameters(), lr=self.training.critic_lr
        )
        return ModelBundle(
            modules={
                "actor": actor,
                "critic": self.critic,
                "target_actor": self.target_actor,
                "target_critic": self.target_critic,
            },
            optimizers={"actor": self.actor_optimizer, "critic": self.critic_optimizer},
        )

    def critic_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None:
        loss = critic_loss(
            self.critic, self.target_critic, self.target_actor, batch, self.training.gamma
        )
        value = float(loss.detach())
        if not np.isfinite(value):
            raise DivergenceError("non-finite critic loss", step=self.global_step, loss=value)
        self.critic_optimizer.zero_grad()
        loss.backward()
        self.critic_optimizer.step()
        stats.record(return_loss=value)

    def actor_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None:
        q_values = self.critic(batch.states, self.actor(batch.states))
        self.guard(q_values)
        objective = q_values.mean()
        self.actor_optimizer.zero_grad()
        (-objective).backward()
        self.actor_optimizer.step()
        stats.record(actor_objective=float(objective.detach()))

    def update_targets(self) -> None:
        tau = self.training.target_update
        soft_update(self.target_critic, self.critic, tau)
        soft_update(self.target_actor, self.actor, tau)
