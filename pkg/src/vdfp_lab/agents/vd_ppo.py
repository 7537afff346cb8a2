"""VD-PPO: PPO whose state values come from U(P(s)) with a state-conditioned VAE."""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Sequence

import numpy as np
import torch

from ..dynamics import ConditionalVAE, VAELearner, clipped_noise
from ..reprmodel import TrajectoryEncoder
from ..returnmodel import ReturnLearner, build_return_model
from ..trajstore import EpisodeReplayBuffer, SegmentBatch, Transition
from .base import EpisodeStats, ModelBundle, as_tensor
from .ppo import OnPolicyAgent, discounted_returns

logger = logging.getLogger(__name__)


def mc_advantages(rewards: Sequence[float], values: Sequence[float], gamma: float) -> np.ndarray:
    """Monte-Carlo reward-to-go minus the predicted state value, per step."""

    return discounted_returns(rewards, gamma) - np.asarray(values, dtype=np.float64)


class VDPPOAgent(OnPolicyAgent):
    """Encoder+U train on every finished episode; the VAE and the policy train
    on the trajectory batch every ``update_freq`` episodes, then the batch is emptied."""

    name = "vd_ppo"
    critic_kind = "decomposed state-value"

    def build(self) -> ModelBundle:
        cfg = self.config
        state_dim, action_dim = self.spec.state_dim, self.spec.action_dim
        actor = self.build_actor()
        self.encoder = TrajectoryEncoder(state_dim + action_dim, cfg.repr)
        self.return_model = build_return_model(cfg.repr.repr_dim, cfg.return_model)
        self.return_learner = ReturnLearner(
            self.encoder,
            self.return_model,
            self.training.return_lr,
            divergence_limit=self.training.divergence_limit,
        )
        self.dynamics = VAELearner(
            ConditionalVAE(state_dim, cfg.repr.repr_dim, cfg.vae),
            self.training.critic_lr,
            use_action=False,
        )
        sampling = self.streams.numpy("sampling")
        self.history = EpisodeReplayBuffer(self.training.buffer_steps, rng=sampling)
        self.trajectory_batch = EpisodeReplayBuffer(self.training.buffer_steps, rng=sampling)
        return ModelBundle(
            modules={
                "actor": actor,
                "encoder": self.encoder,
                "return_model": self.return_model,
                "dynamics": self.dynamics.model,
            },
            optimizers={
                "actor": self.actor_optimizer,
                "return": self.return_learner.optimizer,
                "dynamics": self.dynamics.optimizer,
            },
        )

    def _batch(self, buffer: EpisodeReplayBuffer) -> SegmentBatch:
        return buffer.sample_batch(
            self.training.ppo_batch, self.config.repr.max_len, self.config.repr.agg_factor
        )

    def on_episode_stored(self, transitions: List[Transition], stats: EpisodeStats) -> None:
        self.history.store_episode(transitions)
        self.trajectory_batch.store_episode(transitions)
        for _ in range(self.training.epochs):
            loss = self.return_learner.train_step(self._batch(self.history), self.training.gamma)
            stats.record(return_loss=loss)

    def state_values(self, states: torch.Tensor) -> torch.Tensor:
        eps = clipped_noise(
            (states.shape[0], self.config.vae.z_dim),
            self.config.vae.clip_c,
            generator=self.streams.torch("eps_g"),
        )
        with torch.no_grad():
            return self.return_model(self.dynamics.model.predict(states, eps=eps))

    def update(self, episodes: List[List[Transition]], stats: EpisodeStats) -> None:
        cfg = self.training
        states, actions = self.stack(episodes)
        rewards = [[t.reward for t in episode] for episode in episodes]
        old_log_prob = self.old_log_prob(states, actions)
        for _ in range(cfg.epochs):
            recon, kl = self.dynamics.elbo_step(
                self._batch(self.trajectory_batch),
                self.encoder,
                generator=self.streams.torch("vae_noise"),
            )
            stats.record(recon_loss=recon, kl_loss=kl)
            values = self.state_values(states).double().numpy()
            advantages, offset = [], 0
            for episode_rewards in rewards:
                stop = offset + len(episode_rewards)
                advantages.append(mc_advantages(episode_rewards, values[offset:stop], cfg.gamma))
                offset = stop
            self.policy_epoch(
                states, actions, old_log_prob, as_tensor(np.concatenate(advantages)), stats
            )
        self.trajectory_batch.clear()

    def extra_state(self) -> Dict[str, Any]:
        state = super().extra_state()
        state.update(
            history=self.history.state_dict(),
            trajectory_batch=self.trajectory_batch.state_dict(),
            return_updates=self.return_learner.updates,
            dynamics_updates=self.dynamics.updates,
        )
        return state

    def load_extra_state(self, state: Dict[str, Any]) -> None:
        super().load_extra_state(state)
        self.history.load_state_dict(state["history"])
        self.trajectory_batch.load_state_dict(state["trajectory_batch"])
        self.return_learner.updates = int(state["return_updates"])
        self.dynamics.updates = int(state["dynamics_updates"])
