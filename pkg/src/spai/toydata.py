"""Desk-scale dataset synthesis.

Two pieces: a procedural generator of photograph-like images (power-law
spectra plus soft geometric structure), and a spectral-flattening transform
that manufactures "generated" counterparts by replacing every image's
high-frequency magnitudes with the corpus-median radial profile. The
separation between the two classes is purely spectral, which is exactly the
signal the detector is built to pick up.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import ManifestRecord, write_manifest


def synthesize_photo(rng: np.random.Generator, side: int = 64) -> np.ndarray:
    """One pseudo-photograph. Returns uint8 (side, side, 3).

    Built from a 1/f field plus strongly anisotropic content: oriented
    gratings and hard-edged shapes. The directional high-frequency energy is
    what makes each image's spectrum individual, so the flattening transform
    below has something real to destroy.
    """
    freq_y = np.fft.fftfreq(side)[:, None]
    freq_x = np.fft.fftfreq(side)[None, :]
    radius = np.sqrt(freq_y**2 + freq_x**2)
    radius[0, 0] = 1.0 / side

    def power_field(exponent: float) -> np.ndarray:
        phases = rng.uniform(0, 2 * np.pi, size=(side, side))
        amplitude = radius ** (-exponent)
        spec = amplitude * np.exp(1j * phases)
        field = np.fft.ifft2(spec).real
        field -= field.min()
        return field / max(field.max(), 1e-9)

    base = power_field(rng.uniform(0.8, 1.6))
    tint = rng.uniform(0.4, 1.0, size=3)
    img = base[:, :, None] * tint[None, None, :]

    yy, xx = np.mgrid[0:side, 0:side]

    # luminance gradient
    gy, gx = rng.uniform(-0.3, 0.3, size=2)
    img += ((gy * yy + gx * xx) / side)[:, :, None]

    # oriented gratings: sharp directional peaks in the upper spectrum
    for _ in range(rng.integers(2, 5)):
        cycles = rng.uniform(0.18, 0.42)  # cycles/pixel, well above the flatten radius
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * cycles * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        # confine to a soft window so gratings read as local texture
        cy, cx = rng.uniform(0, side, size=2)
        sigma = rng.uniform(side / 6, side / 2)
        window = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        img += (wave * window)[:, :, None] * rng.uniform(0.08, 0.25)

    # hard-edged rectangles: sinc-like directional energy
    for _ in range(rng.integers(1, 4)):
        top, left = rng.integers(0, side, size=2)
        h = int(rng.integers(side // 8, side // 2))
        w = int(rng.integers(side // 8, side // 2))
        color = rng.uniform(-0.4, 0.4, size=3)
        img[top : top + h, left : left + w] += color[None, None, :]

    # soft blobs with their own color
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, side, size=2)
        sigma = rng.uniform(side / 12, side / 4)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        color = rng.uniform(-0.5, 0.5, size=3)
        img += blob[:, :, None] * color[None, None, :]

    img += power_field(rng.uniform(0.2, 0.6))[:, :, None] * 0.15  # fine texture
    img -= img.min()
    img /= max(img.max(), 1e-9)
    return (img * 255.0).astype(np.uint8)


def _radial_bins(side: int) -> np.ndarray:
    cy, cx = side // 2, side // 2
    yy = np.arange(side)[:, None] - cy
    xx = np.arange(side)[None, :] - cx
    return np.rint(np.sqrt(yy * yy + xx * xx)).astype(int)


def corpus_median_profile(images: list[np.ndarray]) -> np.ndarray:
    """Median (over the corpus) of the per-image mean spectral magnitude in
    integer radial bins, averaged over channels."""
    side = images[0].shape[0]
    bins = _radial_bins(side)
    n_bins = bins.max() + 1
    profiles = []
    for img in images:
        chan_profiles = []
        for c in range(img.shape[2]):
            spec = np.abs(np.fft.fftshift(np.fft.fft2(img[:, :, c].astype(np.float64))))
            sums = np.bincount(bins.ravel(), weights=spec.ravel(), minlength=n_bins)
            counts = np.bincount(bins.ravel(), minlength=n_bins)
            chan_profiles.append(sums / np.maximum(counts, 1))
        profiles.append(np.mean(chan_profiles, axis=0))
    return np.median(np.stack(profiles), axis=0)


def flatten_spectrum(image: np.ndarray, profile: np.ndarray, radius: float) -> np.ndarray:
    """Replace spectral magnitudes at distance >= radius from the center
    with the corpus profile, keeping phases. Returns uint8."""
    side = image.shape[0]
    bins = _radial_bins(side)
    outside = np.sqrt(
        (np.arange(side)[:, None] - side // 2) ** 2 + (np.arange(side)[None, :] - side // 2) ** 2
    ) >= radius
    target = profile[np.minimum(bins, len(profile) - 1)]
    out = np.empty_like(image, dtype=np.float64)
    for c in range(image.shape[2]):
        spec = np.fft.fftshift(np.fft.fft2(image[:, :, c].astype(np.float64)))
        mag = np.abs(spec)
        phase = np.where(mag > 0, spec / np.maximum(mag, 1e-12), 1.0)
        new_mag = np.where(outside, target, mag)
        flattened = np.fft.ifft2(np.fft.ifftshift(new_mag * phase)).real
        out[:, :, c] = flattened
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def synthesize_corpus(out_dir, count: int, side: int = 64, seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = out_dir / f"photo_{i:04d}.png"
        Image.fromarray(synthesize_photo(rng, side)).save(path)
        paths.append(path)
    return paths


def make_toy_dataset(
    root,
    n_train: int = 200,
    n_val: int = 60,
    side: int = 64,
    flatten_radius: float = 10.0,
    seed: int = 0,
) -> tuple[Path, Path]:
    """Materialize the toy detection task under ``root``.

    Writes real and spectrally-flattened images plus train/val manifests;
    every real image has a fake twin, so both splits are balanced. Returns
    the two manifest paths.
    """
    root = Path(root)
    real_dir, fake_dir = root / "real", root / "fake"
    real_dir.mkdir(parents=True, exist_ok=True)
    fake_dir.mkdir(parents=True, exist_ok=True)
    total = n_train + n_val
    rng = np.random.default_rng(seed)
    reals = [synthesize_photo(rng, side) for _ in range(total)]
    profile = corpus_median_profile(reals)

    records = []
    for i, real in enumerate(reals):
        real_path = real_dir / f"real_{i:04d}.png"
        fake_path = fake_dir / f"fake_{i:04d}.png"
        Image.fromarray(real).save(real_path)
        Image.fromarray(flatten_spectrum(real, profile, flatten_radius)).save(fake_path)
        records.append((i, ManifestRecord(str(real_path), "real", "toy-photos"),
                        ManifestRecord(str(fake_path), "generated", "spectral-flat")))

    train_recs = [r for i, a, b in records if i < n_train for r in (a, b)]
    val_recs = [r for i, a, b in records if i >= n_train for r in (a, b)]
    train_manifest = root / "train.csv"
    val_manifest = root / "val.csv"
    write_manifest(train_recs, train_manifest)
    write_manifest(val_recs, val_manifest)
    return train_manifest, val_manifest
