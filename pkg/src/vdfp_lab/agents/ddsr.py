"""DDSR baseline: DDPG with a successor-representation factored critic.

``Q(s, a) = w . M(phi(s), a)`` where ``phi`` is a learned state feature map
(kept honest by a reconstruction head), ``M`` is trained by TD on online
features with the target ``phi`` used only for the bootstrap ``phi(s')``, and
``w`` is a bias-free reward vector regressed on immediate rewards
``r ~ w . phi(s)``.
"""

from __future__ import annotations

import copy
import logging
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..trajstore import TransitionBatch
from .base import EpisodeStats, ModelBundle, mlp, soft_update
from .ddpg import OffPolicyBaseline

logger = logging.getLogger(__name__)


class SuccessorNet(nn.Module):
    """``M(phi, a)``; the action is an extra input so M is defined for continuous control."""

    def __init__(
        self, feature_dim: int, action_dim: int, hidden: Sequence[int] = (200, 100)
    ) -> None:
        super().__init__()
        self.net = mlp(feature_dim + action_dim, hidden, feature_dim)

    def forward(self, features: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([features, actions], dim=-1))


def factored_q(
    sr_net: SuccessorNet,
    reward_vector: nn.Linear,
    features: torch.Tensor,
    actions: torch.Tensor,
) -> torch.Tensor:
    return reward_vector(sr_net(features, actions)).squeeze(-1)


def sr_td_loss(
    sr_net: SuccessorNet,
    target_sr: SuccessorNet,
    features: torch.Tensor,
    actions: torch.Tensor,
    next_features: torch.Tensor,
    next_actions: torch.Tensor,
    dones: torch.Tensor,
    gamma: float,
) -> torch.Tensor:
    """Squared TD error against ``phi(s) + gamma (1 - done) M'(phi(s'), a')``."""

    with torch.no_grad():
        bootstrap = target_sr(next_features, next_actions)
        targets = features + gamma * (1.0 - dones).unsqueeze(-1) * bootstrap
    return F.mse_loss(sr_net(features, actions), targets)


def reward_vector_step(
    reward_vector: nn.Linear,
    optimizer: torch.optim.Optimizer,
    features: torch.Tensor,
    rewards: torch.Tensor,
) -> float:
    """One regression step of ``w . phi`` onto immediate rewards; features are constants."""

    loss = F.mse_loss(reward_vector(features.detach()).squeeze(-1), rewards)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


class DDSRAgent(OffPolicyBaseline):
    name = "ddsr"
    critic_kind = "successor-representation"

    def build(self) -> ModelBundle:
        state_dim, action_dim = self.spec.state_dim, self.spec.action_dim
        dim = self.training.sr_repr_dim
        actor = self.make_actor()
        self.phi = mlp(state_dim, (200, 100), dim)
        self.reconstruction = mlp(dim, (100, 200), state_dim)
        self.sr_net = SuccessorNet(dim, action_dim)
        self.reward_vector = nn.Linear(dim, 1, bias=False)
        self.target_phi = copy.deepcopy(self.phi)
        self.target_sr = copy.deepcopy(self.sr_net)
        lr = self.training.critic_lr
        self.representation_optimizer = torch.optim.Adam(
            [*self.phi.parameters(), *self.reconstruction.parameters()], lr=lr
        )
        self.sr_optimizer = torch.optim.Adam(self.sr_net.parameters(), lr=lr)
        self.reward_optimizer = torch.optim.Adam(
            self.reward_vector.parameters(), lr=self.training.return_lr
        )
        return ModelBundle(
            modules={
                "actor": actor,
                "phi": self.phi,
                "reconstruction": self.reconstruction,
                "sr": self.sr_net,
                "reward_vector": self.reward_vector,
                "target_actor": self.target_actor,
                "target_phi": self.target_phi,
                "target_sr": self.target_sr,
            },
            optimizers={
                "actor": self.actor_optimizer,
                "representation": self.representation_optimizer,
                "sr": self.sr_optimizer,
                "reward": self.reward_optimizer,
            },
        )

    def critic_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None:
        features = self.phi(batch.states)
        recon_loss = F.mse_loss(self.reconstruction(features), batch.states)
        reward_loss = F.mse_loss(self.reward_vector(features).squeeze(-1), batch.rewards)
        self.representation_optimizer.zero_grad()
        (recon_loss + reward_loss).backward()
        self.representation_optimizer.step()
        reward_vector_step(self.reward_vector, self.reward_optimizer, features, batch.rewards)

        current = self.state_features(batch.states)
        with torch.no_grad():
            upcoming = self.target_phi(batch.next_states)
            next_actions = self.target_actor(batch.next_states)
        td_loss = sr_td_loss(
            self.sr_net,
            self.target_sr,
            current,
            batch.actions,
            upcoming,
            next_actions,
            batch.dones,
            self.training.gamma,
        )
        self.sr_optimizer.zero_grad()
        td_loss.backward()
        self.sr_optimizer.step()
        stats.record(recon_loss=float(recon_loss.detach()), return_loss=float(td_loss.detach()))

    def state_features(self, states: torch.Tensor) -> torch.Tensor:
        """Online ``phi(s)`` as constants; M and w both live in this feature space."""

        with torch.no_grad():
            return self.phi(states)

    def actor_step(self, batch: TransitionBatch, stats: EpisodeStats) -> None:
        features = self.state_features(batch.states)
        q_values = factored_q(self.sr_net, self.reward_vector, features, self.actor(batch.states))
        self.guard(q_values)
        objective = q_values.mean()
        self.actor_optimizer.zero_grad()
        (-objective).backward()
        self.actor_optimizer.step()
        stats.record(actor_objective=float(objective.detach()))

    def update_targets(self) -> None:
        tau = self.training.target_update
        soft_update(self.target_phi, self.phi, tau)
        soft_update(self.target_sr, self.sr_net, tau)
        soft_update(self.target_actor, self.actor, tau)
