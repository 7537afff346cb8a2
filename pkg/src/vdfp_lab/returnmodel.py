"""Trajectory return models U(m) and their joint training with the encoder."""

from __future__ import annotations

import copy
import logging
import math
from typing import Iterable, List, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .config import ReturnModelConfig
from .errors import DivergenceError
from .reprmodel import TrajectoryEncoder
from .trajstore import SegmentBatch

logger = logging.getLogger(__name__)


class ReturnModel(nn.Module):
    """Maps a batch of representations ``(N, repr_dim)`` to returns ``(N,)``."""

    kind: str = "abstract"

    def project(self) -> None:
        """Restore structural constraints after an optimizer step."""


class LinearReturn(ReturnModel):
    kind = "linear"

    def __init__(self, repr_dim: int) -> None:
        super().__init__()
        self.linear = nn.Linear(repr_dim, 1)

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        return self.linear(m).squeeze(-1)


class LeakyReLUReturn(LinearReturn):
    """One affine unit followed by Leaky-ReLU; slope 1 is the linear model."""

    kind = "leaky_relu"

    def __init__(self, repr_dim: int, alpha: float) -> None:
        super().__init__(repr_dim)
        self.alpha = alpha

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.linear(m), negative_slope=self.alpha).squeeze(-1)


class ICNNReturn(ReturnModel):
    """Fully input-convex network.

    Hidden-to-hidden weights are kept nonnegative by :meth:`project`; every
    layer also sees the raw input through an unconstrained passthrough. With
    convex nondecreasing activations this makes the output convex in ``m``.
    """

    kind = "icnn"

    def __init__(self, repr_dim: int, hidden: Iterable[int]) -> None:
        super().__init__()
        widths = list(hidden)
        if not widths:
            raise ValueError("icnn needs at least one hidden layer")
        in_dim = self._input_dim(repr_dim)
        self.first = nn.Linear(in_dim, widths[0])
        self.hidden_paths = nn.ModuleList(
            nn.Linear(prev, nxt, bias=False) for prev, nxt in zip(widths[:-1], widths[1:])
        )
        self.input_paths = nn.ModuleList(nn.Linear(in_dim, width) for width in widths[1:])
        self.hidden_out = nn.Linear(widths[-1], 1, bias=False)
        self.input_out = nn.Linear(in_dim, 1)
        self.project()

    @staticmethod
    def _input_dim(repr_dim: int) -> int:
        return repr_dim

    def _prepare(self, m: torch.Tensor) -> torch.Tensor:
        return m

    def constrained_layers(self) -> List[nn.Linear]:
        return [*self.hidden_paths, self.hidden_out]

    @torch.no_grad()
    def project(self) -> None:
        for layer in self.constrained_layers():
            layer.weight.clamp_(min=0.0)

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        y = self._prepare(m)
        z = F.relu(self.first(y))
        for hidden, passthrough in zip(self.hidden_paths, self.input_paths):
            z = F.relu(hidden(z) + passthrough(y))
        return (self.hidden_out(z) + self.input_out(y)).squeeze(-1)


class NEICNNReturn(ICNNReturn):
    """Negation-extended ICNN: the input is ``[m, -m]`` and every weight after the
    first layer, passthroughs included, is nonnegative."""

    kind = "ne_icnn"

    @staticmethod
    def _input_dim(repr_dim: int) -> int:
        return 2 * repr_dim

    def _prepare(self, m: torch.Tensor) -> torch.Tensor:
        return torch.cat([m, -m], dim=-1)

    def constrained_layers(self) -> List[nn.Linear]:
        return [*super().constrained_layers(), *self.input_paths, self.input_out]


def build_return_model(repr_dim: int, cfg: ReturnModelConfig) -> ReturnModel:
    if cfg.kind == "linear":
        return LinearReturn(repr_dim)
    if cfg.kind == "leaky_relu":
        return LeakyReLUReturn(repr_dim, cfg.alpha)
    if cfg.kind == "icnn":
        return ICNNReturn(repr_dim, cfg.hidden)
    return NEICNNReturn(repr_dim, cfg.hidden)


def certify_convexity(
    model: ReturnModel,
    trials: int = 1000,
    *,
    scale: float = 3.0,
    tolerance: float = 1e-6,
    generator: Optional[torch.Generator] = None,
) -> bool:
    """Midpoint-convexity test on ``trials`` random pairs, run in float64."""

    if model.kind == "linear":
        return True
    shadow = copy.deepcopy(model).double().eval()
    repr_dim = _input_width(shadow)
    with torch.no_grad():
        m1 = torch.randn(trials, repr_dim, generator=generator, dtype=torch.float64) * scale
        m2 = torch.randn(trials, repr_dim, generator=generator, dtype=torch.float64) * scale
        midpoint = shadow(0.5 * (m1 + m2))
        chord = 0.5 * (shadow(m1) + shadow(m2))
    violations = int((midpoint > chord + tolerance).sum())
    if violations:
        logger.info("convexity check: %d of %d pairs violate", violations, trials)
    return violations == 0


def _input_width(model: ReturnModel) -> int:
    if isinstance(model, LinearReturn):
        return model.linear.in_features
    if isinstance(model, NEICNNReturn):
        return model.first.in_features // 2
    if isinstance(model, ICNNReturn):
        return model.first.in_features
    raise TypeError(f"unsupported return model {type(model).__name__}")


class ReturnLearner:
    """Joint Adam optimizer over the encoder and U, fitting discounted returns.

    A step aborts with :class:`DivergenceError` when the loss is non-finite or
    the mean ``|U(m)|`` of the batch exceeds ``divergence_limit``.
    """

    def __init__(
        self,
        encoder: TrajectoryEncoder,
        model: ReturnModel,
        lr: float,
        divergence_limit: float = math.inf,
    ) -> None:
        self.encoder = encoder
        self.model = model
        self.divergence_limit = divergence_limit
        self.optimizer = torch.optim.Adam(
            [*encoder.parameters(), *model.parameters()], lr=lr
        )
        self.updates = 0

    def predict(self, batch: SegmentBatch, train_mode: bool = False) -> torch.Tensor:
        m = self.encoder.encode(batch.features, batch.mask, train_mode=train_mode)
        return self.model(m)

    def loss(self, batch: SegmentBatch, gamma: float, train_mode: bool = True) -> torch.Tensor:
        labels = batch.returns(gamma)
        return F.mse_loss(self.predict(batch, train_mode=train_mode), labels)

    def train_step(self, batch: SegmentBatch, gamma: float) -> float:
        """One step on the joint parameters; returns the pre-step loss."""

        predictions = self.predict(batch, train_mode=True)
        magnitude = float(predictions.detach().abs().mean())
        if not math.isfinite(magnitude) or magnitude > self.divergence_limit:
            logger.error("return model magnitude %.3g exceeds limit", magnitude)
            raise DivergenceError(
                "return model diverged", step=self.updates, mean_abs_return=magnitude
            )
        loss = F.mse_loss(predictions, batch.returns(gamma))
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError("non-finite return loss", step=self.updates, loss=value)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.model.project()
        self.updates += 1
        return value
