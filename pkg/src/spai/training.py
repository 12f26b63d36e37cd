"""Detector training: augmented-views batching, BCE objective, warmup+cosine
learning-rate schedule, and best-epoch selection on a once-augmented
validation split. The backbone stays frozen throughout."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .backbone import SpectralEncoder, parameter_checksum
from .detector import DetectorConfig, SpectralDetector
from .errors import InvalidDatasetError, InvalidInputError
from .evaluation import LABELS, ManifestRecord, auc

CACHE_ENV_VAR = "SPAI_CACHE_DIR"


@dataclass
class TrainConfig:
    """Hyperparameters of a detector training run."""

    epochs: int = 35
    base_lr: float = 5e-4
    floor_lr: float = 2.5e-7
    warmup_epochs: int = 5
    batch_size: int = 72
    k_training: int = 4
    seed: int = 0
    radius: float = 16.0
    feature_dim: int = 1024
    attn_dim: int = 1536
    proj_hidden: int = 0
    softmax_axis: str = "features"
    weight_decay: float = 0.05
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise InvalidInputError("warmup_epochs must be smaller than epochs")
        if self.base_lr <= 0 or self.floor_lr <= 0:
            raise InvalidInputError("learning rates must be positive")

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            feature_dim=self.feature_dim,
            attn_dim=self.attn_dim,
            radius=self.radius,
            proj_hidden=self.proj_hidden,
            softmax_axis=self.softmax_axis,
        )

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        defaults = dict(
            epochs=10,
            warmup_epochs=2,
            batch_size=16,
            radius=4.0,
            feature_dim=64,
            attn_dim=96,
        )
        defaults.update(overrides)
        return cls(**defaults)


@dataclass
class AugmentationPolicy:
    """Stochastic view generation. Each enabled op fires independently with
    probability ``p_apply``; a disabled pipeline degenerates to a plain
    center crop. Views always come out at ``view_side`` pixels."""

    resize: bool = True
    resize_scale: tuple[float, float] = (0.5, 2.0)
    crop: bool = True
    rotate: bool = True
    rotate_degrees: float = 15.0
    blur: bool = True
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    noise: bool = True
    noise_sigma: tuple[float, float] = (1.0, 5.0)  # std on the 0-255 scale
    jpeg: bool = True
    jpeg_quality: tuple[int, int] = (50, 95)
    p_apply: float = 0.5
    view_side: int = 224

    @classmethod
    def disabled(cls, view_side: int = 224) -> "AugmentationPolicy":
        return cls(
            resize=False,
            crop=False,
            rotate=False,
            blur=False,
            noise=False,
            jpeg=False,
            view_side=view_side,
        )

    @classmethod
    def toy(cls, view_side: int = 32) -> "AugmentationPolicy":
        """Geometry-only policy for desk-scale runs: keeps the photometric
        ops off so tiny images retain their spectral content."""
        return cls(
            blur=False,
            noise=False,
            jpeg=False,
            rotate_degrees=10.0,
            resize_scale=(0.75, 1.25),
            view_side=view_side,
        )


def _to_float(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


def _resize(image: np.ndarray, scale: float) -> np.ndarray:
    h, w = image.shape[:2]
    new_h, new_w = max(1, round(h * scale)), max(1, round(w * scale))
    pil = Image.fromarray(np.clip(image * 255.0, 0, 255).astype(np.uint8))
    pil = pil.resize((new_w, new_h), Image.Resampling.BILINEAR)
    return np.asarray(pil, dtype=np.float32).reshape(new_h, new_w, -1) / 255.0


def _crop(image: np.ndarray, side: int, rng, random_pos: bool) -> np.ndarray:
    pad_h = max(0, side - image.shape[0])
    pad_w = max(0, side - image.shape[1])
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    max_top = image.shape[0] - side
    max_left = image.shape[1] - side
    if random_pos:
        top = int(rng.integers(0, max_top + 1))
        left = int(rng.integers(0, max_left + 1))
    else:
        top, left = max_top // 2, max_left // 2
    return image[top : top + side, left : left + side]


def _jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    as_uint8 = np.clip(image * 255.0, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(as_uint8.squeeze() if as_uint8.shape[2] == 1 else as_uint8).save(
        buf, format="JPEG", quality=int(quality)
    )
    decoded = np.asarray(Image.open(buf), dtype=np.float32) / 255.0
    return decoded.reshape(image.shape[0], image.shape[1], -1)


def augment_views(
    image: np.ndarray,
    policy: AugmentationPolicy,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Build ``k`` independent stochastic views of an image.

    Returns float32 views of shape (k, view_side, view_side, C) in [0, 1];
    bit-identical across runs for the same rng seed.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    base = _to_float(image)
    views = []
    for _ in range(k):
        view = base
        if policy.resize and rng.random() < policy.p_apply:
            view = _resize(view, float(rng.uniform(*policy.resize_scale)))
        if policy.rotate and rng.random() < policy.p_apply:
            angle = float(rng.uniform(-policy.rotate_degrees, policy.rotate_degrees))
            view = ndimage.rotate(view, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        random_pos = policy.crop and rng.random() < policy.p_apply
        view = _crop(view, policy.view_side, rng, random_pos)
        if policy.blur and rng.random() < policy.p_apply:
            sigma = float(rng.uniform(*policy.blur_sigma))
            view = ndimage.gaussian_filter(view, sigma=(sigma, sigma, 0.0))
        if policy.noise and rng.random() < policy.p_apply:
            sigma = float(rng.uniform(*policy.noise_sigma)) / 255.0
            view = view + rng.normal(0.0, sigma, size=view.shape).astype(np.float32)
        if policy.jpeg and rng.random() < policy.p_apply:
            view = _jpeg_roundtrip(view, int(rng.integers(policy.jpeg_quality[0], policy.jpeg_quality[1] + 1)))
        views.append(np.clip(view, 0.0, 1.0).astype(np.float32))
    return np.stack(views)


def bce_loss(y_hat, y) -> torch.Tensor:
    """Binary cross-entropy -[y ln p + (1-y) ln(1-p)], averaged over the
    batch. Probabilities must lie strictly inside (0, 1)."""
    y_hat = torch.as_tensor(y_hat, dtype=torch.float64 if not torch.is_tensor(y_hat) else None)
    y = torch.as_tensor(y, dtype=y_hat.dtype)
    if not torch.all((y_hat > 0) & (y_hat < 1)):
        raise InvalidInputError("predicted probabilities must lie strictly inside (0, 1)")
    return -(y * torch.log(y_hat) + (1.0 - y) * torch.log(1.0 - y_hat)).mean()


def lr_schedule(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from the floor to the base rate, then per-step cosine
    decay back down to the floor at the final step."""
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    warmup_steps = config.warmup_epochs * steps_per_epoch
    total_steps = config.epochs * steps_per_epoch
    if warmup_steps > 0 and step < warmup_steps:
        frac = step / warmup_steps
        return config.floor_lr + (config.base_lr - config.floor_lr) * frac
    last = max(total_steps - 1, warmup_steps + 1)
    frac = min(1.0, (step - warmup_steps) / (last - warmup_steps))
    cos = 0.5 * (1.0 + math.cos(math.pi * frac))
    return config.floor_lr + (config.base_lr - config.floor_lr) * cos


def _load_records(records: list[ManifestRecord]) -> tuple[list[np.ndarray], np.ndarray]:
    images, labels = [], []
    for rec in records:
        images.append(np.asarray(Image.open(rec.path).convert("RGB")))
        labels.append(LABELS[rec.label])
    return images, np.asarray(labels, dtype=np.float32)


def _require_both_classes(records: list[ManifestRecord], name: str) -> None:
    labels = {rec.label for rec in records}
    if labels != set(LABELS):
        raise InvalidDatasetError(f"{name} manifest must contain both classes, found {sorted(labels)}")


def _policy_digest(policy: AugmentationPolicy) -> str:
    return hashlib.sha256(json.dumps(asdict(policy), sort_keys=True).encode()).hexdigest()


def build_augmented_validation(
    records: list[ManifestRecord],
    policy: AugmentationPolicy,
    k: int,
    seed: int,
    cache_dir=None,
) -> tuple[np.ndarray, np.ndarray, str]:
    """Apply the augmentation policy to the validation split exactly once.

    Returns (views (Nv, k, S, S, C), labels, content digest). When a cache
    directory is available (argument or ``SPAI_CACHE_DIR``), the views are
    persisted and reused, keyed by manifest content, policy, and seed.
    """
    cache_dir = cache_dir or os.environ.get(CACHE_ENV_VAR)
    key_src = json.dumps(
        {
            "records": [[r.path, r.label, r.source] for r in records],
            "policy": _policy_digest(policy),
            "k": k,
            "seed": seed,
        },
        sort_keys=True,
    )
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    cache_file = Path(cache_dir) / f"augval_{key}.npz" if cache_dir else None
    if cache_file is not None and cache_file.exists():
        data = np.load(cache_file)
        views, labels = data["views"], data["labels"]
    else:
        images, labels = _load_records(records)
        rng = np.random.default_rng([seed, 0xA06])
        views = np.stack([augment_views(img, policy, k, rng) for img in images])
        if cache_file is not None:
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(cache_file, views=views, labels=labels)
    digest = hashlib.sha256(views.tobytes() + labels.tobytes()).hexdigest()
    return views, labels, digest


@dataclass
class FitResult:
    detector: SpectralDetector
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    val_digest: str = ""
    backbone_checksum: str = ""


def _views_to_tensor(views: np.ndarray) -> torch.Tensor:
    # (B, K, S, S, C) -> (B, K, C, S, S)
    return torch.from_numpy(views.transpose(0, 1, 4, 2, 3).copy())


@torch.no_grad()
def _evaluate_split(detector, views, labels, batch: int = 32):
    detector.eval()
    probs = []
    for start in range(0, len(views), batch):
        chunk = _views_to_tensor(views[start : start + batch])
        p, _ = detector(chunk)
        probs.append(p)
    probs = torch.cat(probs)
    loss = bce_loss(probs, torch.from_numpy(labels).to(probs.dtype))
    scores = probs.numpy().tolist()
    return float(loss.item()), auc(scores, labels.astype(int).tolist())


def fit(
    train_records: list[ManifestRecord],
    val_records: list[ManifestRecord],
    encoder: SpectralEncoder,
    config: TrainConfig,
    policy: AugmentationPolicy | None = None,
    cache_dir=None,
    log_fn=None,
) -> FitResult:
    """Train projections, spectral map, patch attention, and head against a
    frozen encoder; select the best epoch on the augmented validation split.

    Raises InvalidDatasetError for single-class manifests and RuntimeError
    (with step diagnostics) if the loss goes non-finite.
    """
    if not train_records or not val_records:
        raise InvalidDatasetError("manifests must be non-empty")
    _require_both_classes(train_records, "train")
    _require_both_classes(val_records, "validation")
    policy = policy or AugmentationPolicy(view_side=encoder.config.input_side)
    if policy.view_side != encoder.config.input_side:
        raise InvalidInputError(
            f"policy view_side {policy.view_side} != encoder input side {encoder.config.input_side}"
        )

    torch.manual_seed(config.seed)
    detector = SpectralDetector(encoder, config.detector_config())
    frozen_before = parameter_checksum(encoder)

    train_images, train_labels = _load_records(train_records)
    val_views, val_labels, val_digest = build_augmented_validation(
        val_records, policy, config.k_training, config.seed, cache_dir
    )

    trainable = detector.trainable_parameters()
    optimizer = torch.optim.AdamW(
        trainable, lr=config.base_lr, weight_decay=config.weight_decay
    )
    steps_per_epoch = math.ceil(len(train_images) / config.batch_size)
    rng = np.random.default_rng([config.seed, 0x7124])

    result = FitResult(detector=detector, val_digest=val_digest)
    best_state = None
    global_step = 0
    for epoch in range(config.epochs):
        detector.train()
        order = rng.permutation(len(train_images))
        epoch_losses = []
        lr = config.floor_lr
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            views = np.stack(
                [augment_views(train_images[i], policy, config.k_training, rng) for i in idx]
            )
            batch = _views_to_tensor(views)
            targets = torch.from_numpy(train_labels[idx])
            lr = lr_schedule(global_step, config, steps_per_epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            probs, _ = detector(batch)
            loss = bce_loss(probs, targets.to(probs.dtype))
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {global_step} (lr={lr:.3e}); aborting"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, config.clip_norm)
            optimizer.step()
            epoch_losses.append(float(loss.item()))
            global_step += 1

        val_loss, val_auc = _evaluate_split(detector, val_views, val_labels)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": val_loss,
            "val_auc": val_auc,
            "lr": lr,
        }
        result.history.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = copy.deepcopy(
                {k: v for k, v in detector.state_dict().items() if not k.startswith("encoder.")}
            )

    if best_state is not None:
        detector.load_state_dict(best_state, strict=False)
    result.backbone_checksum = parameter_checksum(encoder)
    if result.backbone_checksum != frozen_before:
        raise RuntimeError("frozen backbone parameters changed during fit")
    detector.eval()
    return result
