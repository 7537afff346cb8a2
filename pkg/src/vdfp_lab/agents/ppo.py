"""On-policy machinery shared by PPO and VD-PPO, and the PPO baseline itself."""

from __future__ import annotations

import logging
from abc import abstractmethod
from typing import Any, Dict, List, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..envs import StepResult
from ..trajstore import Transition
from .base import Agent, EpisodeStats, GaussianActor, ModelBundle, as_tensor, mlp

logger = logging.getLogger(__name__)


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Reward-to-go ``sum_k gamma**k r_{t+k}`` for every step of one episode."""

    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> np.ndarray:
    """Generalized advantage estimates for one episode.

    ``last_value`` bootstraps past the final step; 0 for a terminal episode.
    """

    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.append(values[1:], last_value)
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros_like(deltas)
    running = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        advantages[t] = running
    return advantages


def clipped_surrogate(
    new_log_prob: torch.Tensor,
    old_log_prob: torch.Tensor,
    advantages: torch.Tensor,
    clip: float,
) -> torch.Tensor:
    """Mean of ``min(r A, clip(r, 1-eps, 1+eps) A)``; maximised by the actor."""

    ratio = torch.exp(new_log_prob - old_log_prob)
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return torch.min(ratio * advantages, clipped * advantages).mean()


class OnPolicyAgent(Agent):
    """Gaussian-policy agent that updates every ``update_freq`` finished episodes."""

    critic_kind = "state-value"

    def build_actor(self) -> GaussianActor:
        actor = GaussianActor(
            self.spec.state_dim,
            self.spec.action_dim,
            self.spec.action_low,
            self.spec.action_high,
            hidden=self.training.actor_hidden,
        )
        self.actor_optimizer = torch.optim.Adam(actor.parameters(), lr=self.actor_lr)
        self.pending: List[List[Transition]] = []
        return actor

    def select_action(self, state: np.ndarray) -> np.ndarray:
        action = self.actor.sample(  # type: ignore[attr-defined]
            as_tensor(state).unsqueeze(0), generator=self.streams.torch("exploration")
        )
        return action.squeeze(0).double().numpy()

    def describe(self) -> Dict[str, Any]:
        info = super().describe()
        info.update(update_freq=self.training.update_freq, epochs=self.training.epochs)
        return info

    def after_step(
        self, state: np.ndarray, action: np.ndarray, result: StepResult, stats: EpisodeStats
    ) -> None:
        return None

    def end_episode(self, transitions: List[Transition], stats: EpisodeStats) -> None:
        self.pending.append(transitions)
        self.on_episode_stored(transitions, stats)
        if (self.episode_index + 1) % self.training.update_freq == 0:
            self.update(self.pending, stats)
            self.pending = []

    def on_episode_stored(self, transitions: List[Transition], stats: EpisodeStats) -> None:
        return None

    @abstractmethod
    def update(self, episodes: List[List[Transition]], stats: EpisodeStats) -> None: ...

    @staticmethod
    def stack(episodes: List[List[Transition]]) -> tuple[torch.Tensor, torch.Tensor]:
        states = as_tensor([t.state for ep in episodes for t in ep])
        actions = as_tensor([t.action for ep in episodes for t in ep])
        return states, actions

    def policy_epoch(
        self,
        states: torch.Tensor,
        actions: torch.Tensor,
        old_log_prob: torch.Tensor,
        advantages: torch.Tensor,
        stats: EpisodeStats,
    ) -> None:
        """One shuffled pass of clipped-surrogate minibatch steps."""

        actor: GaussianActor = self.actor  # type: ignore[assignment]
        if len(advantages) > 1:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
        order = self.streams.numpy("sampling").permutation(len(states))
        for start in range(0, len(order), self.training.ppo_batch):
            idx = torch.as_tensor(order[start : start + self.training.ppo_batch])
            new_log_prob = actor.log_prob(states[idx], actions[idx])
            objective = clipped_surrogate(
                new_log_prob, old_log_prob[idx], advantages[idx], self.training.ppo_clip
            )
            self.actor_optimizer.zero_grad()
            (-objective).backward()
            self.actor_optimizer.step()
            stats.record(actor_objective=float(objective.detach()))

    def old_log_prob(self, states: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.actor.log_prob(states, actions)  # type: ignore[attr-defined]

    def extra_state(self) -> Dict[str, Any]:
        return {"pending": self.pending}

    def load_extra_state(self, state: Dict[str, Any]) -> None:
        self.pending = list(state["pending"])


class PPOAgent(OnPolicyAgent):
    """PPO with a 200-100 value network and GAE advantages."""

    name = "ppo"

    def build(self) -> ModelBundle:
        actor = self.build_actor()
        self.value_net = mlp(self.spec.state_dim, self.training.critic_hidden, 1)
        self.value_optimizer = torch.optim.Adam(
            self.value_net.parameters(), lr=self.training.critic_lr
        )
        return ModelBundle(
            modules={"actor": actor, "value": self.value_net},
            optimizers={"actor": self.actor_optimizer, "value": self.value_optimizer},
        )

    def values(self, states: torch.Tensor) -> torch.Tensor:
        return self.value_net(states).squeeze(-1)

    def update(self, episodes: List[List[Transition]], stats: EpisodeStats) -> None:
        cfg = self.training
        states, actions = self.stack(episodes)
        with torch.no_grad():
            values = self.values(states).double().numpy()
        advantages_np, offset = [], 0
        for episode in episodes:
            episode_values = values[offset : offset + len(episode)]
            rewards = [t.reward for t in episode]
            advantages_np.append(gae(rewards, episode_values, cfg.gamma, cfg.gae_lambda))
            offset += len(episode)
        advantages = as_tensor(np.concatenate(advantages_np))
        targets = advantages + as_tensor(values)
        old_log_prob = self.old_log_prob(states, actions)
        for _ in range(cfg.epochs):
            self.policy_epoch(states, actions, old_log_prob, advantages, stats)
            order = self.streams.numpy("sampling").permutation(len(states))
            for start in range(0, len(order), cfg.ppo_batch):
                idx = torch.as_tensor(order[start : start + cfg.ppo_batch])
                loss = F.mse_loss(self.values(states[idx]), targets[idx])
                self.value_optimizer.zero_grad()
                loss.backward()
                self.value_optimizer.step()
                stats.record(return_loss=float(loss.detach()))
