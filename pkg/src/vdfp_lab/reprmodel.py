"""Convolutional trajectory encoder mapping padded state-action segments to a vector m."""

from __future__ import annotations

import logging
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import ReprConfig

logger = logging.getLogger(__name__)


class TrajectoryEncoder(nn.Module):
    """Text-CNN over the rows ``x_t = s_t (+) a_t`` of a zero-padded segment.

    Each filter of height ``h`` slides over consecutive rows; ReLU features are
    max-pooled over windows that lie entirely inside the valid prefix given by
    ``mask``. A filter with no valid window pools to 0. The pooled vector goes
    through a highway combination, dropout and a final affine map.
    """

    def __init__(self, row_dim: int, cfg: ReprConfig) -> None:
        super().__init__()
        self.row_dim = row_dim
        self.cfg = cfg
        self.aggregator = (
            nn.Linear(cfg.agg_factor * row_dim, row_dim) if cfg.agg_factor > 1 else None
        )
        self.convs = nn.ModuleList(
            nn.Conv1d(row_dim, count, kernel_size=height)
            for height, count in zip(cfg.filter_heights, cfg.filter_counts)
        )
        self.highway = nn.Linear(cfg.feature_dim, cfg.feature_dim)
        self.output = nn.Linear(cfg.feature_dim, cfg.repr_dim)

    @property
    def repr_dim(self) -> int:
        return self.cfg.repr_dim

    def aggregate(
        self, x: torch.Tensor, mask: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Fold every ``agg_factor`` consecutive rows into one with a shared ReLU layer."""

        factor = self.cfg.agg_factor
        if self.aggregator is None:
            return x, mask
        batch, rows, width = x.shape
        if rows % factor:
            raise ValueError(f"{rows} rows are not divisible by agg_factor {factor}")
        grouped = x.reshape(batch, rows // factor, factor * width)
        folded_mask = mask.reshape(batch, rows // factor, factor).amax(dim=-1)
        return F.relu(self.aggregator(grouped)), folded_mask

    def conv_features(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Masked max-pooled conv features, shape ``(N, sum(filter_counts))``."""

        if x.dim() != 3 or x.shape[-1] != self.row_dim:
            raise ValueError(f"expected (N, rows, {self.row_dim}) input, got {tuple(x.shape)}")
        x, mask = self.aggregate(x, mask)
        tallest = max(self.cfg.filter_heights)
        if x.shape[1] < tallest:
            extra = tallest - x.shape[1]
            x = F.pad(x, (0, 0, 0, extra))
            mask = F.pad(mask, (0, extra))
        lengths = mask.sum(dim=1)
        columns = x.transpose(1, 2)
        pooled = []
        for height, conv in zip(self.cfg.filter_heights, self.convs):
            features = F.relu(conv(columns))
            starts = torch.arange(features.shape[-1], dtype=lengths.dtype, device=x.device)
            valid = (starts.unsqueeze(0) <= (lengths - height).unsqueeze(1)).to(features.dtype)
            # ReLU outputs are >= 0, so zeroing invalid windows cannot raise the max
            pooled.append((features * valid.unsqueeze(1)).amax(dim=-1))
        return torch.cat(pooled, dim=-1)

    def encode(self, x: torch.Tensor, mask: torch.Tensor, train_mode: bool = False) -> torch.Tensor:
        concat = self.conv_features(x, mask)
        highway = self.highway(concat)
        gate = torch.sigmoid(highway)
        joint = gate * F.relu(highway) + (1.0 - gate) * F.relu(concat)
        joint = F.dropout(joint, p=self.cfg.dropout_prob, training=train_mode)
        return self.output(joint)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.encode(x, mask, train_mode=self.training)
