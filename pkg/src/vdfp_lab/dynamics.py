"""Predictive dynamics models: the conditional beta-VAE and its MLP ablation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import VAEConfig
from .errors import DivergenceError
from .reprmodel import TrajectoryEncoder
from .trajstore import SegmentBatch

logger = logging.getLogger(__name__)

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class LatentDistribution:
    mu: torch.Tensor
    log_std: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(self.log_std)


def reparameterize(dist: LatentDistribution, noise: torch.Tensor) -> torch.Tensor:
    return dist.mu + dist.sigma * noise


def kl_divergence(dist: LatentDistribution) -> torch.Tensor:
    """Closed-form ``KL(N(mu, sigma) || N(0, I))`` per sample."""

    variance = torch.exp(2.0 * dist.log_std)
    return 0.5 * (dist.mu.pow(2) + variance - 1.0 - 2.0 * dist.log_std).sum(dim=-1)


def clipped_noise(
    shape: Tuple[int, ...],
    clip_c: float,
    *,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    noise = torch.randn(shape, generator=generator, dtype=dtype)
    if math.isinf(clip_c):
        return noise
    return noise.clamp(-clip_c, clip_c)


def condition(states: torch.Tensor, actions: Optional[torch.Tensor]) -> torch.Tensor:
    """Conditioning input: ``s (+) a``, or ``s`` alone for state-value models."""

    return states if actions is None else torch.cat([states, actions], dim=-1)


class ConditionalVAE(nn.Module):
    """Encoder ``q(z | m, cond)`` and decoder ``p(m | z, cond)``.

    With ``elementwise_product`` conditioning the first layer of each side is
    ``sigmoid(W_c cond) * relu(W x)``; with ``concatenation`` it is
    ``relu(W [x, cond])``.
    """

    def __init__(self, cond_dim: int, repr_dim: int, cfg: VAEConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.cond_dim = cond_dim
        self.repr_dim = repr_dim
        (enc1, enc2), (dec1, dec2) = cfg.scaled_widths(cond_dim)
        if cfg.conditioning == "elementwise_product":
            self.enc_main = nn.Linear(repr_dim, enc1)
            self.enc_cond: Optional[nn.Linear] = nn.Linear(cond_dim, enc1)
            self.dec_latent = nn.Linear(cfg.z_dim, dec1)
            self.dec_cond: Optional[nn.Linear] = nn.Linear(cond_dim, dec1)
        else:
            self.enc_main = nn.Linear(repr_dim + cond_dim, enc1)
            self.enc_cond = None
            self.dec_latent = nn.Linear(cfg.z_dim + cond_dim, dec1)
            self.dec_cond = None
        self.enc_hidden = nn.Linear(enc1, enc2)
        self.mean = nn.Linear(enc2, cfg.z_dim)
        self.log_std = nn.Linear(enc2, cfg.z_dim)
        self.dec_hidden = nn.Linear(dec1, dec2)
        self.reconstruction = nn.Linear(dec2, repr_dim)

    @staticmethod
    def _join(
        main: nn.Linear, gate: Optional[nn.Linear], x: torch.Tensor, cond: torch.Tensor
    ) -> torch.Tensor:
        if gate is None:
            return F.relu(main(torch.cat([x, cond], dim=-1)))
        return torch.sigmoid(gate(cond)) * F.relu(main(x))

    def posterior(self, m: torch.Tensor, cond: torch.Tensor) -> LatentDistribution:
        h = self._join(self.enc_main, self.enc_cond, m, cond)
        h = F.relu(self.enc_hidden(h))
        log_std = self.log_std(h).clamp(LOG_STD_MIN, LOG_STD_MAX)
        return LatentDistribution(mu=self.mean(h), log_std=log_std)

    def decode(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self._join(self.dec_latent, self.dec_cond, z, cond)
        h = F.relu(self.dec_hidden(h))
        return self.reconstruction(h)

    def forward(
        self, m: torch.Tensor, cond: torch.Tensor, noise: torch.Tensor
    ) -> Tuple[torch.Tensor, LatentDistribution]:
        dist = self.posterior(m, cond)
        return self.decode(reparameterize(dist, noise), cond), dist

    def predict(
        self,
        cond: torch.Tensor,
        clip_c: Optional[float] = None,
        *,
        generator: Optional[torch.Generator] = None,
        eps: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Decode one clipped generative sample per row of ``cond``."""

        if eps is None:
            c = self.cfg.clip_c if clip_c is None else clip_c
            eps = clipped_noise(
                (cond.shape[0], self.cfg.z_dim), c, generator=generator, dtype=cond.dtype
            )
        return self.decode(eps, cond)


class MLPDynamics(nn.Module):
    """Deterministic regressor from the conditioning input straight to m."""

    def __init__(self, cond_dim: int, repr_dim: int, hidden: Tuple[int, int] = (200, 100)) -> None:
        super().__init__()
        self.cond_dim = cond_dim
        self.repr_dim = repr_dim
        self.net = nn.Sequential(
            nn.Linear(cond_dim, hidden[0]),
            nn.ReLU(),
            nn.Linear(hidden[0], hidden[1]),
            nn.ReLU(),
            nn.Linear(hidden[1], repr_dim),
        )

    def forward(self, cond: torch.Tensor) -> torch.Tensor:
        return self.net(cond)

    def predict(
        self,
        cond: torch.Tensor,
        clip_c: Optional[float] = None,
        *,
        generator: Optional[torch.Generator] = None,
        eps: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        return self.net(cond)


class DynamicsLearner(Protocol):
    model: nn.Module
    optimizer: torch.optim.Optimizer
    use_action: bool
    updates: int

    def elbo_step(
        self,
        batch: SegmentBatch,
        encoder: TrajectoryEncoder,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[float, float]: ...

    def predict(
        self,
        states: torch.Tensor,
        actions: Optional[torch.Tensor],
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor: ...


def _targets(batch: SegmentBatch, encoder: TrajectoryEncoder) -> torch.Tensor:
    with torch.no_grad():
        return encoder.encode(batch.features, batch.mask, train_mode=False)


class VAELearner:
    """Adam over both VAE halves; targets m come from the encoder as constants."""

    def __init__(self, model: ConditionalVAE, lr: float, use_action: bool = True) -> None:
        self.model = model
        self.use_action = use_action
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr)
        self.updates = 0

    def _cond(self, batch: SegmentBatch) -> torch.Tensor:
        return condition(batch.states, batch.actions if self.use_action else None)

    def losses(
        self,
        batch: SegmentBatch,
        targets: torch.Tensor,
        noise: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        recon, dist = self.model(targets, self._cond(batch), noise)
        recon_loss = (targets - recon).pow(2).sum(dim=-1).mean()
        return recon_loss, kl_divergence(dist).mean()

    def elbo_step(
        self,
        batch: SegmentBatch,
        encoder: TrajectoryEncoder,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[float, float]:
        targets = _targets(batch, encoder)
        noise = torch.randn(
            (len(batch), self.model.cfg.z_dim), generator=generator, dtype=targets.dtype
        )
        recon_loss, kl_loss = self.losses(batch, targets, noise)
        recon_value, kl_value = float(recon_loss.detach()), float(kl_loss.detach())
        if not (math.isfinite(recon_value) and math.isfinite(kl_value)):
            raise DivergenceError(
                "non-finite VAE loss", step=self.updates, recon=recon_value, kl=kl_value
            )
        self.optimizer.zero_grad()
        (recon_loss + self.model.cfg.beta * kl_loss).backward()
        self.optimizer.step()
        self.updates += 1
        return recon_value, kl_value

    def predict(
        self,
        states: torch.Tensor,
        actions: Optional[torch.Tensor],
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        return self.model.predict(condition(states, actions), generator=generator)


class MLPLearner:
    """Squared-error fit of :class:`MLPDynamics`; reports a KL of 0."""

    def __init__(self, model: MLPDynamics, lr: float, use_action: bool = True) -> None:
        self.model = model
        self.use_action = use_action
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr)
        self.updates = 0

    def elbo_step(
        self,
        batch: SegmentBatch,
        encoder: TrajectoryEncoder,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[float, float]:
        targets = _targets(batch, encoder)
        cond = condition(batch.states, batch.actions if self.use_action else None)
        loss = (targets - self.model(cond)).pow(2).sum(dim=-1).mean()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError("non-finite MLP dynamics loss", step=self.updates, recon=value)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.updates += 1
        return value, 0.0

    def predict(
        self,
        states: torch.Tensor,
        actions: Optional[torch.Tensor],
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        return self.model(condition(states, actions))


def build_dynamics(
    kind: str, cond_dim: int, repr_dim: int, cfg: VAEConfig, lr: float, use_action: bool = True
) -> DynamicsLearner:
    if kind == "mlp":
        return MLPLearner(MLPDynamics(cond_dim, repr_dim), lr, use_action=use_action)
    return VAELearner(ConditionalVAE(cond_dim, repr_dim, cfg), lr, use_action=use_action)
