"""Per-block projection operators and the reconstruction-similarity
features: token-wise cosine similarities among the representations of a
patch and its low/high frequency components, pooled into a fixed-layout
summary vector."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import nn

from .errors import InvalidInputError

COSINE_EPS = 1e-8
# Keeps the gradient of the token-std finite on constant inputs while staying
# far below every documented tolerance.
STD_EPS = 1e-12


class SrsTriplet(NamedTuple):
    """The three pairwise similarity vectors for one block:
    original-low, original-high, low-high."""

    omega_ol: torch.Tensor
    omega_oh: torch.Tensor
    omega_lh: torch.Tensor


class ProjectionOperator(nn.Module):
    """Maps one block's token embeddings into the similarity space:
    LayerNorm -> Linear -> GELU -> Linear -> LayerNorm."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or out_dim
        self.net = nn.Sequential(
            nn.LayerNorm(in_dim),
            nn.Linear(in_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, out_dim),
            nn.LayerNorm(out_dim),
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.net(tokens)


class ProjectionBank(nn.Module):
    """One independent projection operator per transformer block."""

    def __init__(self, depth: int, in_dim: int, out_dim: int, hidden: int | None = None):
        super().__init__()
        self.depth = depth
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.operators = nn.ModuleList(
            ProjectionOperator(in_dim, out_dim, hidden) for _ in range(depth)
        )

    def forward(self, blocks: torch.Tensor) -> torch.Tensor:
        """Project stacked block features (N, ..., L, d) -> (N, ..., L, D),
        block n through operator n only."""
        if blocks.shape[0] != self.depth or blocks.shape[-1] != self.in_dim:
            raise InvalidInputError(
                f"expected ({self.depth}, ..., L, {self.in_dim}) block features, "
                f"got {tuple(blocks.shape)}"
            )
        return torch.stack([op(blocks[n]) for n, op in enumerate(self.operators)])


def srs(za: torch.Tensor, zb: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """Row-wise cosine similarity between two (..., L, D) representations.

    Entries land in [-1, 1]; an all-zero token row yields 0 rather than NaN.
    """
    if za.shape != zb.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(za.shape)} vs {tuple(zb.shape)}")
    dot = (za * zb).sum(dim=-1)
    norms = (za.norm(dim=-1) + eps) * (zb.norm(dim=-1) + eps)
    return (dot / norms).clamp(-1.0, 1.0)


def srs_triplet(orig: torch.Tensor, low: torch.Tensor, high: torch.Tensor) -> SrsTriplet:
    return SrsTriplet(
        omega_ol=srs(orig, low),
        omega_oh=srs(orig, high),
        omega_lh=srs(low, high),
    )


def pool_srs(triplets: Sequence[SrsTriplet]) -> torch.Tensor:
    """Pool N similarity triplets into the (..., 6N) summary vector.

    Layout per block n (frozen; checkpoints depend on it):
    [mean ol, std ol, mean oh, std oh, mean lh, std lh], blocks concatenated
    in order. Standard deviations are population std over the L tokens, so
    every entry stays inside [-1, 1].
    """
    parts = []
    for trip in triplets:
        for omega in trip:
            mean = omega.mean(dim=-1)
            std = torch.sqrt(omega.var(dim=-1, correction=0) + STD_EPS)
            parts.extend([mean, std])
    return torch.stack(parts, dim=-1).clamp(-1.0, 1.0)
