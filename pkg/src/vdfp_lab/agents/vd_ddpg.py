"""VD-DDPG: deterministic policy gradient through a decomposed critic U(P(s, a))."""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from torch import nn

from ..dynamics import DynamicsLearner, VAELearner, build_dynamics, clipped_noise, condition
from ..envs import StepResult
from ..errors import DivergenceError
from ..reprmodel import TrajectoryEncoder
from ..returnmodel import ReturnLearner, ReturnModel, build_return_model
from ..trajstore import EpisodeReplayBuffer, SegmentBatch, Transition
from .base import Actor, Agent, EpisodeStats, ModelBundle

logger = logging.getLogger(__name__)


def predicted_returns(
    actor: nn.Module,
    dynamics_model: nn.Module,
    return_model: ReturnModel,
    states: torch.Tensor,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """``U(P(s, pi(s), eps))`` per state; ``eps`` is ignored by deterministic models."""

    cond = condition(states, actor(states))
    return return_model(dynamics_model.predict(cond, eps=eps))


def vdfp_objective(
    actor: nn.Module,
    dynamics_model: nn.Module,
    return_model: ReturnModel,
    states: torch.Tensor,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    return predicted_returns(actor, dynamics_model, return_model, states, eps).mean()


def vdfp_policy_gradient(
    actor: nn.Module,
    dynamics_model: nn.Module,
    return_model: ReturnModel,
    states: torch.Tensor,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Flat gradient of the batch-mean predicted return w.r.t. the actor parameters.

    ``eps`` is held fixed, so the result is the chain ``d pi/d theta * dP/da * dU/dm``.
    """

    params = list(actor.parameters())
    objective = vdfp_objective(actor, dynamics_model, return_model, states, eps)
    grads = torch.autograd.grad(objective, params, allow_unused=True)
    return torch.cat(
        [
            (g if g is not None else torch.zeros_like(p)).reshape(-1)
            for g, p in zip(grads, params)
        ]
    )


class VDDDPGAgent(Agent):
    """Off-policy actor trained against U(P(s, pi(s))); no target networks.

    Schedule by global step ``t``: up to ``collect_steps`` the agent acts
    uniformly at random and only stores episodes; during the next
    ``pretrain_steps`` the dynamics model updates every step and the
    encoder+U every ``return_every_pretrain`` steps; afterwards the dynamics
    model and the actor update every step and the encoder+U every
    ``return_every`` steps.
    """

    name = "vd_ddpg"
    critic_kind = "decomposed"

    def build(self) -> ModelBundle:
        cfg = self.config
        state_dim, action_dim = self.spec.state_dim, self.spec.action_dim
        self.encoder = TrajectoryEncoder(state_dim + action_dim, cfg.repr)
        self.return_model = build_return_model(cfg.repr.repr_dim, cfg.return_model)
        self.return_learner = ReturnLearner(
            self.encoder,
            self.return_model,
            self.training.return_lr,
            divergence_limit=self.training.divergence_limit,
        )
        self.dynamics: DynamicsLearner = build_dynamics(
            self.training.dynamics,
            state_dim + action_dim,
            cfg.repr.repr_dim,
            cfg.vae,
            self.training.critic_lr,
        )
        actor = Actor(
            state_dim,
            action_dim,
            self.spec.action_low,
            self.spec.action_high,
            hidden=self.training.actor_hidden,
        )
        self.actor_optimizer = torch.optim.Adam(actor.parameters(), lr=self.actor_lr)
        self.buffer = EpisodeReplayBuffer(
            capacity_steps=self.training.buffer_steps, rng=self.streams.numpy("sampling")
        )
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

    def describe(self) -> Dict[str, Any]:
        info = super().describe()
        info.update(
            dynamics=self.training.dynamics,
            conditioning=self.config.vae.conditioning,
            return_model=self.config.return_model.kind,
            beta=self.config.vae.beta,
            clip_c=self.config.vae.clip_c,
        )
        return info

    def select_action(self, state: np.ndarray) -> np.ndarray:
        if self.global_step < self.training.collect_steps:
            return self.random_action()
        return self.act(state, explore=True)

    def after_step(
        self, state: np.ndarray, action: np.ndarray, result: StepResult, stats: EpisodeStats
    ) -> None:
        t = self.global_step
        cfg = self.training
        if len(self.buffer) == 0 or t <= cfg.collect_steps:
            return
        if t <= cfg.collect_steps + cfg.pretrain_steps:
            if t % cfg.return_every_pretrain == 0:
                self.return_step(stats)
            self.dynamics_step(stats)
            return
        self.dynamics_step(stats)
        self.actor_step(stats)
        if t % cfg.return_every == 0:
            self.return_step(stats)

    def end_episode(self, transitions: List[Transition], stats: EpisodeStats) -> None:
        self.buffer.store_episode(transitions)

    def _segment_batch(self) -> SegmentBatch:
        return self.buffer.sample_batch(
            self.training.batch_size, self.config.repr.max_len, self.config.repr.agg_factor
        )

    def return_step(self, stats: EpisodeStats) -> float:
        loss = self.return_learner.train_step(self._segment_batch(), self.training.gamma)
        stats.record(return_loss=loss)
        return loss

    def dynamics_step(self, stats: EpisodeStats) -> None:
        recon, kl = self.dynamics.elbo_step(
            self._segment_batch(), self.encoder, generator=self.streams.torch("vae_noise")
        )
        stats.record(recon_loss=recon, kl_loss=kl)

    def actor_step(self, stats: EpisodeStats) -> float:
        states = self.buffer.sample_transitions(self.training.batch_size).states
        eps = None
        if isinstance(self.dynamics, VAELearner):
            eps = clipped_noise(
                (states.shape[0], self.config.vae.z_dim),
                self.config.vae.clip_c,
                generator=self.streams.torch("eps_g"),
            )
        params = list(self.actor.parameters())
        returns = predicted_returns(self.actor, self.dynamics.model, self.return_model, states, eps)
        magnitude = float(returns.detach().abs().mean())
        if not np.isfinite(magnitude) or magnitude > self.training.divergence_limit:
            logger.error("predicted return magnitude %.3g exceeds limit", magnitude)
            raise DivergenceError(
                "predicted return diverged", step=self.global_step, mean_abs_return=magnitude
            )
        objective = returns.mean()
        grads = torch.autograd.grad(objective, params)
        self.actor_optimizer.zero_grad()
        for param, grad in zip(params, grads):
            param.grad = -grad
        self.actor_optimizer.step()
        value = float(objective.detach())
        stats.record(actor_objective=value)
        return value

    def extra_state(self) -> Dict[str, Any]:
        return {
            "buffer": self.buffer.state_dict(),
            "return_updates": self.return_learner.updates,
            "dynamics_updates": self.dynamics.updates,
        }

    def load_extra_state(self, state: Dict[str, Any]) -> None:
        self.buffer.load_state_dict(state["buffer"])
        self.return_learner.updates = int(state["return_updates"])
        self.dynamics.updates = int(state["dynamics_updates"])
