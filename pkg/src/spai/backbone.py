"""Transformer encoder over fixed-size image patches, exposing every
intermediate block output, plus the frequency-reconstruction pretext task
used to pretrain it on real images and the checkpoint format that freezes it
for downstream use."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import spectral
from .errors import CheckpointError, InvalidDatasetError, InvalidInputError

BACKBONE_FORMAT = "spai.backbone.v1"

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff")


@dataclass
class BackboneConfig:
    """Geometry of the encoder.

    The production geometry matches a ViT-B/16 over 224 px inputs
    (p=16, 12 blocks, width 768, 196 tokens); the toy geometry used in tests
    and desk-scale runs is p=4, 4 blocks, width 64 over 32 px inputs.
    """

    patch_pixels: int = 16
    depth: int = 12
    embed_dim: int = 768
    input_side: int = 224
    channels: int = 3
    num_heads: int = 0  # 0 -> embed_dim // 64

    def __post_init__(self):
        if self.input_side % self.patch_pixels != 0:
            raise InvalidInputError(
                f"input_side {self.input_side} not divisible by patch size {self.patch_pixels}"
            )
        if self.num_heads == 0:
            self.num_heads = max(1, self.embed_dim // 64)
        if self.embed_dim % self.num_heads != 0:
            raise InvalidInputError("embed_dim must be divisible by num_heads")

    @property
    def token_count(self) -> int:
        return (self.input_side // self.patch_pixels) ** 2

    @classmethod
    def toy(cls) -> "BackboneConfig":
        return cls(patch_pixels=4, depth=4, embed_dim=64, input_side=32)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + MLP block with ratio-4 hidden width."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * 4), nn.GELU(), nn.Linear(dim * 4, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q = q.view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, l, d)
        x = x + self.proj(y)
        return x + self.mlp(self.norm2(x))


class SpectralEncoder(nn.Module):
    """Patch-tokenizing encoder that returns all intermediate block outputs.

    Tokens are spatial only (no class token): an input of side S with patch
    size p yields exactly L = (S/p)^2 tokens, so token rows stay aligned
    across the original/low/high variants of the same patch.
    """

    def __init__(self, config: BackboneConfig, positional: bool = True):
        super().__init__()
        self.config = config
        self.positional = positional
        self.frozen = False
        p, c, d = config.patch_pixels, config.channels, config.embed_dim
        self.patch_embed = nn.Linear(p * p * c, d)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.token_count, d))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.num_heads) for _ in range(config.depth)
        )
        # Per-channel stats of the pretraining corpus; identity until set.
        self.register_buffer("norm_mean", torch.zeros(c))
        self.register_buffer("norm_std", torch.ones(c))

    def train(self, mode: bool = True):
        # A frozen encoder stays in eval mode even inside a training wrapper.
        return super().train(mode and not self.frozen)

    def set_normalization(self, mean, std) -> None:
        self.norm_mean.copy_(torch.as_tensor(mean, dtype=self.norm_mean.dtype))
        self.norm_std.copy_(torch.as_tensor(std, dtype=self.norm_std.dtype))

    def normalize(self, images: torch.Tensor) -> torch.Tensor:
        mean = self.norm_mean.to(images.dtype)[None, :, None, None]
        std = self.norm_std.to(images.dtype)[None, :, None, None]
        return (images - mean) / std

    def tokenize(self, images) -> torch.Tensor:
        """Embed non-overlapping p x p blocks and add positional encodings.

        Accepts (B, C, S, S) / (C, S, S) tensors or (S, S, C) numpy arrays.
        The spatial size must equal the configured input side; callers are
        expected to patchify beforehand, there is no silent resize.
        """
        images = _as_batched_tensor(images, self.config.channels)
        s = self.config.input_side
        if images.shape[-2:] != (s, s):
            raise InvalidInputError(
                f"expected {s}x{s} input, got {tuple(images.shape[-2:])}"
            )
        p = self.config.patch_pixels
        patches = F.unfold(images, kernel_size=p, stride=p).transpose(1, 2)
        tokens = self.patch_embed(patches)
        if self.positional:
            tokens = tokens + self.pos_embed.to(tokens.dtype)
        return tokens

    def encode_blocks(self, tokens: torch.Tensor) -> torch.Tensor:
        """Run all blocks, returning the stacked per-block outputs
        (depth, B, L, d)."""
        outputs = []
        x = tokens
        for block in self.blocks:
            x = block(x)
            outputs.append(x)
        return torch.stack(outputs)

    def forward(self, images) -> torch.Tensor:
        return self.encode_blocks(self.tokenize(images))


class DecodingHead(nn.Module):
    """Per-token linear projection back to pixel blocks, reassembled
    spatially. Used only by the pretext task and discarded afterwards."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        p, c = config.patch_pixels, config.channels
        self.proj = nn.Linear(config.embed_dim, p * p * c)

    def forward(self, final_tokens: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        blocks = self.proj(final_tokens).transpose(1, 2)
        return F.fold(
            blocks,
            output_size=(cfg.input_side, cfg.input_side),
            kernel_size=cfg.patch_pixels,
            stride=cfg.patch_pixels,
        )


def _as_batched_tensor(images, channels: int) -> torch.Tensor:
    if isinstance(images, np.ndarray):
        if images.ndim == 3 and images.shape[-1] == channels:
            images = torch.from_numpy(np.ascontiguousarray(images)).permute(2, 0, 1)
        else:
            images = torch.from_numpy(np.ascontiguousarray(images))
        images = images.float()
    if images.ndim == 3:
        images = images.unsqueeze(0)
    if images.ndim != 4 or images.shape[1] != channels:
        raise InvalidInputError(
            f"expected (B, {channels}, S, S) images, got shape {tuple(images.shape)}"
        )
    return images


def radial_mask_tensor(side: int, radius: float, dtype=torch.float32) -> torch.Tensor:
    """Centered radial mask as a torch tensor (shared geometry with
    :func:`spai.spectral.build_radial_mask`)."""
    values = spectral.build_radial_mask(side, side, radius).values
    return torch.from_numpy(values).to(dtype)


def split_frequency_batch(
    images: torch.Tensor, radius: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """Torch port of :func:`spai.spectral.split_frequency` for (B, C, S, S)
    batches; returns (low, high)."""
    mask = radial_mask_tensor(images.shape[-1], radius, dtype=images.dtype)
    spec = torch.fft.fftshift(torch.fft.fft2(images), dim=(-2, -1))
    high = torch.fft.ifft2(torch.fft.ifftshift(spec * mask, dim=(-2, -1))).real
    low = torch.fft.ifft2(torch.fft.ifftshift(spec * (1.0 - mask), dim=(-2, -1))).real
    return low, high


def frequency_distance_batch(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    alpha: float = 1.0,
    band: torch.Tensor | None = None,
) -> torch.Tensor:
    """Differentiable frequency distance over a batch.

    ``band`` optionally restricts the mean to selected frequencies, given in
    centered coordinates with shape broadcastable to (B, C, S, S).
    """
    if x.shape != x_hat.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    fx = torch.fft.fftshift(torch.fft.fft2(x), dim=(-2, -1))
    fy = torch.fft.fftshift(torch.fft.fft2(x_hat), dim=(-2, -1))
    mag = torch.abs(fx - fy) ** alpha
    if band is None:
        return mag.mean()
    band = band.to(mag.dtype)
    weighted = (mag * band).sum(dim=(-2, -1))
    counts = band.expand_as(mag).sum(dim=(-2, -1))
    return (weighted / counts).mean()


def pretext_step(
    encoder: SpectralEncoder,
    head: DecodingHead,
    images: torch.Tensor,
    radius: float,
    p_low: float,
    rng: np.random.Generator,
    alpha: float = 1.0,
    loss_mode: str = "full",
) -> torch.Tensor:
    """One forward pass of the reconstruction pretext objective.

    Each image is split at ``radius``, one component is sampled (low with
    probability ``p_low``), encoded, decoded, and scored against the original
    by frequency distance. ``loss_mode="masked"`` restricts the loss to the
    band that was removed from the input; the default scores the whole
    spectrum. Gradients flow into both the encoder and the head.
    """
    if not 0.0 <= p_low <= 1.0:
        raise InvalidInputError(f"p_low must be in [0, 1], got {p_low}")
    if loss_mode not in ("full", "masked"):
        raise InvalidInputError(f"unknown loss_mode {loss_mode!r}")
    images = _as_batched_tensor(images, encoder.config.channels)
    with torch.no_grad():
        low, high = split_frequency_batch(images, radius)
        take_low = torch.from_numpy(rng.random(images.shape[0]) < p_low)
        chosen = torch.where(take_low[:, None, None, None], low, high)
    tokens = encoder.tokenize(encoder.normalize(chosen))
    recon = head(encoder.encode_blocks(tokens)[-1])
    band = None
    if loss_mode == "masked":
        mask = radial_mask_tensor(images.shape[-1], radius, dtype=images.dtype)
        # The band missing from the input: outside the disc when the low
        # component was kept, inside it otherwise.
        band = torch.where(take_low[:, None, None, None], mask, 1.0 - mask)
    return frequency_distance_batch(images, recon, alpha=alpha, band=band)


def load_image_folder(image_dir, side: int, minimum: int = 64) -> np.ndarray:
    """Load every image in a folder as float32 (N, C, side, side) in [0, 1],
    short-side resized and center-cropped."""
    from PIL import Image

    image_dir = Path(image_dir)
    paths = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if len(paths) < minimum:
        raise InvalidDatasetError(
            f"{image_dir} holds {len(paths)} images; at least {minimum} required"
        )
    out = []
    for path in paths:
        img = Image.open(path).convert("RGB")
        w, h = img.size
        if min(w, h) != side:
            scale = side / min(w, h)
            img = img.resize(
                (max(side, round(w * scale)), max(side, round(h * scale))),
                Image.Resampling.BILINEAR,
            )
        w, h = img.size
        left, top = (w - side) // 2, (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
        out.append(np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0)
    return np.stack(out)


def pretrain_toy(
    image_dir,
    out_path,
    config: BackboneConfig | None = None,
    steps: int = 200,
    batch_size: int = 16,
    lr: float = 1e-3,
    radius: float = 4.0,
    p_low: float = 0.5,
    alpha: float = 1.0,
    loss_mode: str = "full",
    seed: int = 0,
) -> list[dict]:
    """Desk-scale pretext pretraining over a folder of real images.

    Writes a ``spai.backbone.v1`` checkpoint to ``out_path`` and returns the
    per-step loss log.
    """
    config = config or BackboneConfig.toy()
    corpus = load_image_folder(image_dir, config.input_side)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    encoder = SpectralEncoder(config)
    encoder.set_normalization(corpus.mean(axis=(0, 2, 3)), corpus.std(axis=(0, 2, 3)) + 1e-6)
    head = DecodingHead(config)
    opt = torch.optim.AdamW(
        list(encoder.parameters()) + list(head.parameters()), lr=lr, weight_decay=0.05
    )
    log = []
    for step in range(steps):
        idx = rng.choice(len(corpus), size=min(batch_size, len(corpus)), replace=False)
        batch = torch.from_numpy(corpus[idx])
        loss = pretext_step(encoder, head, batch, radius, p_low, rng, alpha, loss_mode)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.append({"step": step, "loss": float(loss.item())})
    save_backbone(
        encoder,
        out_path,
        pretext={"radius": radius, "p_low": p_low, "steps": steps, "seed": seed},
        head=head,
    )
    return log


def save_backbone(
    encoder: SpectralEncoder, path, pretext: dict | None = None, head: DecodingHead | None = None
) -> None:
    payload = {
        "format": BACKBONE_FORMAT,
        "config": asdict(encoder.config),
        "pretext": pretext or {},
        "state": encoder.state_dict(),
    }
    if head is not None:
        payload["head_state"] = head.state_dict()
    torch.save(payload, path)


def load_pretrained(checkpoint_path) -> SpectralEncoder:
    """Load a ``spai.backbone.v1`` checkpoint as a frozen encoder.

    The returned module is in eval mode with ``requires_grad`` cleared on
    every parameter; downstream training must leave its weights untouched.
    Pretext metadata (masking radius etc.) is attached as
    ``encoder.pretext_meta``.
    """
    path = Path(checkpoint_path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != BACKBONE_FORMAT:
        raise CheckpointError(f"{path} is not a {BACKBONE_FORMAT} checkpoint")
    try:
        config = BackboneConfig(**payload["config"])
        encoder = SpectralEncoder(config)
        encoder.load_state_dict(payload["state"])
    except (KeyError, TypeError, RuntimeError, InvalidInputError) as exc:
        raise CheckpointError(f"incompatible checkpoint {path}: {exc}") from exc
    encoder.requires_grad_(False)
    encoder.frozen = True
    encoder.eval()
    encoder.pretext_meta = dict(payload.get("pretext", {}))
    return encoder


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over every named parameter and buffer, bit-exact."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
