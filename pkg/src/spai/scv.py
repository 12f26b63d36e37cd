"""Spectral context: per-block token statistics attended through a learnable
map, summed into a single context vector and concatenated with the pooled
similarity summary into the per-patch spectral vector."""

from __future__ import annotations

import torch
from torch import nn

from .errors import InvalidInputError
from .srs import STD_EPS


def pool_block_stats(projected: torch.Tensor) -> torch.Tensor:
    """Token-wise mean and population std of projected features.

    Input (N, ..., L, D) -> output (..., N, 2D), row n holding
    [mean over tokens ; std over tokens] of block n.
    """
    mean = projected.mean(dim=-2)
    std = torch.sqrt(projected.var(dim=-2, correction=0) + STD_EPS)
    stats = torch.cat([mean, std], dim=-1)
    return torch.movedim(stats, 0, -2)


class ContextProjector(nn.Module):
    """Two linear layers with GELU activations followed by LayerNorm."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or out_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, out_dim),
            nn.GELU(),
            nn.LayerNorm(out_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SpectralMap(nn.Module):
    """Learnable attention over block-statistics features.

    Holds the map C (N x D, zero-initialized so the initial attention is
    uniform) and the two projectors around it. The softmax runs over the
    feature axis of C by default ("features"); "blocks" switches it to the
    block axis.
    """

    def __init__(self, depth: int, dim: int, softmax_axis: str = "features"):
        super().__init__()
        if softmax_axis not in ("features", "blocks"):
            raise InvalidInputError(f"unknown softmax_axis {softmax_axis!r}")
        self.depth = depth
        self.dim = dim
        self.softmax_axis = softmax_axis
        self.map = nn.Parameter(torch.zeros(depth, dim))
        self.project_in = ContextProjector(2 * dim, dim)
        self.project_out = ContextProjector(dim, dim)

    def attention(self) -> torch.Tensor:
        axis = -1 if self.softmax_axis == "features" else -2
        return torch.softmax(self.map, dim=axis)

    def forward(self, stats: torch.Tensor) -> torch.Tensor:
        """Context vector from block statistics (..., N, 2D) -> (..., D)."""
        if stats.shape[-2] != self.depth or stats.shape[-1] != 2 * self.dim:
            raise InvalidInputError(
                f"expected (..., {self.depth}, {2 * self.dim}) stats, got {tuple(stats.shape)}"
            )
        weighted = self.project_out(self.attention() * self.project_in(stats))
        return weighted.sum(dim=-2)


def spectral_context(stats: torch.Tensor, spectral_map: SpectralMap) -> torch.Tensor:
    return spectral_map(stats)


def assemble_spectral_vector(z_c: torch.Tensor, z_lambda: torch.Tensor) -> torch.Tensor:
    """Concatenate the context vector (..., D) with the similarity summary
    (..., 6N) into the spectral vector (..., D + 6N)."""
    if z_c.shape[:-1] != z_lambda.shape[:-1]:
        raise InvalidInputError(
            f"batch shape mismatch: {tuple(z_c.shape)} vs {tuple(z_lambda.shape)}"
        )
    if z_lambda.shape[-1] % 6 != 0:
        raise InvalidInputError(
            f"similarity summary length {z_lambda.shape[-1]} is not a multiple of 6"
        )
    return torch.cat([z_c, z_lambda], dim=-1)
