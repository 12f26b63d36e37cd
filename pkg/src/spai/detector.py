"""End-to-end detector: frozen encoder, per-block projections, similarity
pooling, spectral context, patch attention, and the classification head,
plus the versioned checkpoint that carries everything trainable."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import scv, srs
from .backbone import (
    SpectralEncoder,
    file_sha256,
    split_frequency_batch,
)
from .errors import CheckpointError, InvalidInputError
from .sca import ClassificationHead, DetectionResult, SpectralContextAttention, patchify

DETECTOR_FORMAT = "spai.detector.v1"


@dataclass
class DetectorConfig:
    feature_dim: int = 1024
    attn_dim: int = 1536
    radius: float = 16.0
    proj_hidden: int = 0  # 0 -> feature_dim
    softmax_axis: str = "features"


class SpectralDetector(nn.Module):
    """Scores images by how far their spectral statistics sit from the
    frozen encoder's learned model of real images.

    Everything except the encoder is trainable; the parameter census in
    :meth:`parameter_census` makes the partition explicit.
    """

    def __init__(self, encoder: SpectralEncoder, config: DetectorConfig | None = None):
        super().__init__()
        self.config = config or DetectorConfig()
        cfg = self.config
        self.encoder = encoder
        depth = encoder.config.depth
        self.spectral_dim = cfg.feature_dim + 6 * depth
        self.projections = srs.ProjectionBank(
            depth,
            encoder.config.embed_dim,
            cfg.feature_dim,
            hidden=cfg.proj_hidden or None,
        )
        self.spectral_map = scv.SpectralMap(depth, cfg.feature_dim, cfg.softmax_axis)
        self.attention = SpectralContextAttention(self.spectral_dim, cfg.attn_dim)
        self.head = ClassificationHead(self.spectral_dim, cfg.attn_dim)
        self.model_version = f"{DETECTOR_FORMAT}:untrained"

    @property
    def patch_side(self) -> int:
        return self.encoder.config.input_side

    def spectral_vectors(self, patches: torch.Tensor) -> torch.Tensor:
        """Per-patch spectral vectors: (P, C, S, S) -> (P, D + 6N).

        Each patch is split into its low/high frequency components, the
        three variants run through the frozen encoder under an identical
        normalization, and the projected block features feed both the
        similarity summary and the context vector.
        """
        p = patches.shape[0]
        with torch.no_grad():
            low, high = split_frequency_batch(patches, self.config.radius)
            stacked = torch.cat([patches, low, high], dim=0)
            blocks = self.encoder(self.encoder.normalize(stacked))  # (N, 3P, L, d)
        projected = self.projections(blocks)
        proj_orig = projected[:, :p]
        proj_low = projected[:, p : 2 * p]
        proj_high = projected[:, 2 * p :]
        triplets = [
            srs.srs_triplet(proj_orig[n], proj_low[n], proj_high[n])
            for n in range(blocks.shape[0])
        ]
        z_lambda = srs.pool_srs(triplets)
        stats = scv.pool_block_stats(proj_orig)
        z_c = self.spectral_map(stats)
        return scv.assemble_spectral_vector(z_c, z_lambda)

    def forward(self, patch_sets: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Batched scoring: (B, K, C, S, S) -> probabilities (B,) and
        attention weights (B, K)."""
        if patch_sets.ndim != 5:
            raise InvalidInputError(
                f"expected (B, K, C, S, S) patch sets, got shape {tuple(patch_sets.shape)}"
            )
        b, k = patch_sets.shape[:2]
        vectors = self.spectral_vectors(patch_sets.reshape(b * k, *patch_sets.shape[2:]))
        vectors = vectors.reshape(b, k, self.spectral_dim)
        fused, weights = self.attention(vectors)
        return self.head(fused), weights

    @torch.no_grad()
    def score_patches(self, patches: torch.Tensor):
        """Score one image given as its K patches; returns
        (probability, weights (K,), spectral vectors (K, dim))."""
        self.eval()
        vectors = self.spectral_vectors(patches)
        fused, weights = self.attention(vectors)
        prob = self.head(fused)
        return float(prob.item()), weights.numpy(), vectors.numpy()

    def score_array(
        self, image: np.ndarray, path: str | None = None, return_vectors: bool = False
    ):
        """Score an arbitrary-resolution image array (H, W, C), uint8 or
        float in [0, 1]. Returns a DetectionResult (plus per-patch vectors
        and the grid when ``return_vectors`` is set)."""
        start = time.perf_counter()
        image = np.asarray(image)
        pixels = image.astype(np.float32) / (255.0 if image.dtype == np.uint8 else 1.0)
        grid = patchify(pixels, self.patch_side)
        patches = torch.from_numpy(grid.patches.transpose(0, 3, 1, 2).copy())
        prob, weights, vectors = self.score_patches(patches)
        result = DetectionResult(
            score=prob,
            attention=[float(w) for w in weights],
            patch_coords=grid.coords,
            model_version=self.model_version,
            timing_ms=(time.perf_counter() - start) * 1000.0,
            path=path,
        )
        if return_vectors:
            return result, vectors, grid
        return result

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_census(self) -> dict[str, list[str]]:
        census = {"frozen": [], "trainable": []}
        for name, param in self.named_parameters():
            census["trainable" if param.requires_grad else "frozen"].append(name)
        return census


def save_detector(
    detector: SpectralDetector,
    path,
    policy=None,
    train_config=None,
    backbone_path=None,
) -> str:
    """Write a ``spai.detector.v1`` checkpoint: detector hyperparameters,
    augmentation policy, training configuration, all trainable parameters,
    and a hash reference to the frozen backbone checkpoint."""
    from dataclasses import asdict

    state = {
        k: v for k, v in detector.state_dict().items() if not k.startswith("encoder.")
    }
    payload = {
        "format": DETECTOR_FORMAT,
        "config": asdict(detector.config),
        "policy": asdict(policy) if policy is not None else None,
        "train_config": asdict(train_config) if train_config is not None else None,
        "backbone_path": str(backbone_path) if backbone_path else None,
        "backbone_hash": file_sha256(backbone_path) if backbone_path else None,
        "state": state,
    }
    torch.save(payload, path)
    version = f"{DETECTOR_FORMAT}:{file_sha256(path)[:8]}"
    detector.model_version = version
    return version


def load_detector(path, backbone_path=None) -> SpectralDetector:
    """Rebuild a detector from a checkpoint.

    The frozen backbone is loaded from ``backbone_path`` when given,
    otherwise from the path recorded at save time; either way its file hash
    must match the recorded one.
    """
    from pathlib import Path

    from .backbone import load_pretrained

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != DETECTOR_FORMAT:
        raise CheckpointError(f"{path} is not a {DETECTOR_FORMAT} checkpoint")

    backbone_file = backbone_path or payload.get("backbone_path")
    if backbone_file is None:
        raise CheckpointError(f"{path} records no backbone path and none was supplied")
    recorded = payload.get("backbone_hash")
    actual = file_sha256(backbone_file)
    if recorded is not None and recorded != actual:
        raise CheckpointError(
            f"backbone hash mismatch: checkpoint expects {recorded[:12]}..., "
            f"{backbone_file} has {actual[:12]}..."
        )
    encoder = load_pretrained(backbone_file)
    try:
        detector = SpectralDetector(encoder, DetectorConfig(**payload["config"]))
        missing, unexpected = detector.load_state_dict(payload["state"], strict=False)
        missing = [k for k in missing if not k.startswith("encoder.")]
        if missing or unexpected:
            raise CheckpointError(
                f"state mismatch in {path}: missing {missing}, unexpected {unexpected}"
            )
    except (KeyError, TypeError, RuntimeError) as exc:
        raise CheckpointError(f"incompatible checkpoint {path}: {exc}") from exc
    detector.model_version = f"{DETECTOR_FORMAT}:{file_sha256(path)[:8]}"
    detector.eval()
    return detector
