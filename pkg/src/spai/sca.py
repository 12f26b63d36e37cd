"""Arbitrary-resolution support: tiling an image into fixed-size patches,
fusing the per-patch spectral vectors with single-query attention (linear in
the number of patches), the classification head, and heatmap rendering of
the attention weights."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError

SCORE_EPS = 1e-7
HEATMAP_ALPHA = 0.45

# Diverging blue -> neutral -> red ramp used for attention overlays.
_COOL = np.array([59.0, 76.0, 192.0])
_NEUTRAL = np.array([221.0, 221.0, 221.0])
_WARM = np.array([180.0, 4.0, 38.0])


@dataclass
class PatchGrid:
    """Non-overlapping tiling of a source image, edge-aligned on the last
    row/column so no pixels are dropped and none are resampled."""

    patches: np.ndarray  # (K, side, side, C)
    coords: list[tuple[int, int, int, int]]  # (top, left, h, w) in source pixels
    source_size: tuple[int, int]

    @property
    def patch_count(self) -> int:
        return len(self.coords)


def _axis_offsets(size: int, side: int) -> list[int]:
    if size <= side:
        return [0]
    count = math.ceil(size / side)
    offsets = [i * side for i in range(count - 1)]
    offsets.append(size - side)  # edge-aligned, may overlap its neighbour
    return offsets


def _reflect_pad_to(image: np.ndarray, side: int) -> np.ndarray:
    pad_h = max(0, side - image.shape[0])
    pad_w = max(0, side - image.shape[1])
    if pad_h == 0 and pad_w == 0:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")


def patchify(image: np.ndarray, patch_side: int) -> PatchGrid:
    """Tile an (H, W[, C]) image into K = ceil(H/s) * ceil(W/s) patches.

    Interior patches sit on a regular grid; the last row/column is shifted
    inward so it ends flush with the image border. Images smaller than the
    patch on either axis are reflect-padded up to size (the recorded
    coordinates still cover only real source pixels).
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidInputError(f"expected (H, W[, C]) image, got shape {image.shape}")
    h, w = image.shape[:2]
    padded = _reflect_pad_to(image, patch_side)
    tops = _axis_offsets(h, patch_side)
    lefts = _axis_offsets(w, patch_side)
    patches, coords = [], []
    for top in tops:
        for left in lefts:
            patches.append(padded[top : top + patch_side, left : left + patch_side])
            coords.append((top, left, min(patch_side, h - top), min(patch_side, w - left)))
    return PatchGrid(patches=np.stack(patches), coords=coords, source_size=(h, w))


class SpectralContextAttention(nn.Module):
    """Single learned query over K spectral vectors.

    Cost is linear in K: one K-vector of logits, one softmax, one weighted
    sum. Returns the fused vector together with the weights.
    """

    def __init__(self, dim: int, attn_dim: int):
        super().__init__()
        self.dim = dim
        self.attn_dim = attn_dim
        self.query = nn.Parameter(torch.zeros(attn_dim))
        nn.init.trunc_normal_(self.query, std=0.02)
        self.to_keys = nn.Linear(dim, attn_dim, bias=False)
        self.to_values = nn.Linear(dim, attn_dim, bias=False)
        self.to_out = nn.Linear(attn_dim, dim, bias=False)

    def forward(self, vectors: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(..., K, dim) -> fused (..., dim) and weights (..., K)."""
        if vectors.shape[-1] != self.dim:
            raise InvalidInputError(
                f"expected vectors of width {self.dim}, got {vectors.shape[-1]}"
            )
        keys = self.to_keys(vectors)
        logits = keys @ self.query.to(keys.dtype) / math.sqrt(self.attn_dim)
        weights = torch.softmax(logits, dim=-1)
        fused = self.to_out((weights.unsqueeze(-2) @ self.to_values(vectors)).squeeze(-2))
        return fused, weights


class ClassificationHead(nn.Module):
    """Three-layer MLP: ReLU on the hidden layers, sigmoid output clamped to
    the open interval (0, 1)."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, max(1, hidden // 2)),
            nn.ReLU(),
            nn.Linear(max(1, hidden // 2), 1),
        )

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        logit = self.net(fused).squeeze(-1)
        return torch.sigmoid(logit).clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def _coolwarm(t: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB along the cool-warm ramp."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)[..., None]
    lower = _COOL + (t / 0.5) * (_NEUTRAL - _COOL)
    upper = _NEUTRAL + ((t - 0.5) / 0.5) * (_WARM - _NEUTRAL)
    return np.where(t < 0.5, lower, upper)


def attention_heatmap(grid: PatchGrid, weights, image: np.ndarray) -> np.ndarray:
    """Render attention weights as a tinted overlay on the source image.

    Weights are min-max normalized to [0, 1] (a degenerate range maps to
    0.5), each patch is tinted along the cool-warm ramp with fixed alpha,
    and overlapping edge-aligned regions take the larger weight.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (grid.patch_count,):
        raise InvalidInputError(
            f"expected {grid.patch_count} weights, got shape {weights.shape}"
        )
    lo, hi = weights.min(), weights.max()
    norm = np.full_like(weights, 0.5) if hi == lo else (weights - lo) / (hi - lo)

    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    rgb = image[:, :, :3] if image.shape[2] >= 3 else np.repeat(image[:, :, :1], 3, axis=2)
    rgb = rgb.astype(np.float64)
    if rgb.max() <= 1.0:
        rgb = rgb * 255.0

    h, w = grid.source_size
    weight_map = np.full((h, w), -np.inf)
    for (top, left, ph, pw), value in zip(grid.coords, norm):
        region = weight_map[top : top + ph, left : left + pw]
        np.maximum(region, value, out=region)
    tint = _coolwarm(weight_map)
    out = (1.0 - HEATMAP_ALPHA) * rgb[:h, :w] + HEATMAP_ALPHA * tint
    return np.clip(out, 0, 255).astype(np.uint8)


@dataclass
class DetectionResult:
    """Per-image verdict: score in (0, 1), per-patch attention on the
    simplex, patch coordinates, and provenance."""

    score: float
    attention: list[float]
    patch_coords: list[tuple[int, int, int, int]]
    model_version: str
    timing_ms: float
    path: str | None = None

    def to_record(self) -> dict:
        return {
            "path": self.path,
            "score": self.score,
            "patch_count": len(self.attention),
            "attention": self.attention,
            "coords": [list(c) for c in self.patch_coords],
            "model_version": self.model_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())
