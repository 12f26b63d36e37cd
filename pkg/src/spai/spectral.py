"""Centered 2D DFT utilities: radial masks, low/high frequency splitting,
component sampling for the pretext task, and the frequency-distance loss.

Conventions (fixed across the package):

* Forward transform is unnormalized, the inverse carries the ``1/(H*W)``
  factor, so ``sum |x|^2 == sum |X|^2 / (H*W)`` (Parseval) and the DC
  coefficient of an image equals the plain sum of its pixels.
* Spectra are stored centered: the DC coefficient sits at
  ``(H // 2, W // 2)``. The conjugate partner of centered index ``i`` is
  ``(2 * (n // 2) - i) % n``, which is what :func:`conjugate_pair_index`
  returns; radial masks are invariant under that map, so masking a real
  image's spectrum keeps the inverse transform real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SymmetryViolationError

# Imaginary residue above this (relative to the output magnitude) means the
# spectrum fed to idft2 was not conjugate-symmetric.
REALNESS_TOL = 1e-5


@dataclass
class Spectrum:
    """Centered complex frequency representation of one image channel."""

    height: int
    width: int
    coefficients: np.ndarray

    @property
    def center(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2


@dataclass
class RadialMask:
    """Binary mask over a centered spectrum: 0 inside the disc of ``radius``
    pixels around the DC coefficient, 1 outside."""

    height: int
    width: int
    radius: float
    values: np.ndarray

    @property
    def center(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2


@dataclass
class FrequencyComponents:
    """Low/high band-limited images that sum back to the original."""

    low: np.ndarray
    high: np.ndarray
    radius: float


def conjugate_pair_index(i: np.ndarray | int, n: int):
    """Index of the conjugate partner of centered-spectrum index ``i``."""
    return (2 * (n // 2) - np.asarray(i)) % n


def dft2(image: np.ndarray) -> Spectrum:
    """Forward 2D DFT of a single channel, shifted so DC is at the center.

    Args:
        image: real matrix of shape (H, W).

    Raises:
        InvalidInputError: empty input, wrong rank, or non-finite pixels.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("image contains non-finite pixels")
    coeff = np.fft.fftshift(np.fft.fft2(image))
    return Spectrum(height=image.shape[0], width=image.shape[1], coefficients=coeff)


def idft2(
    spectrum: Spectrum, tol: float = REALNESS_TOL, scale_hint: float | None = None
) -> np.ndarray:
    """Inverse transform back to a real image.

    The result of the inverse FFT is complex in general; for a
    conjugate-symmetric spectrum the imaginary part is numerical noise and is
    dropped. A residue above ``tol`` raises :class:`SymmetryViolationError`
    instead of silently returning a wrong image.

    The residue is judged relative to the spectrum's natural image scale.
    Callers inverting a band cut out of a larger spectrum should pass the
    source scale as ``scale_hint`` (see :func:`split_frequency`): a
    numerically empty band is then recognized as noise rather than flagged.
    """
    if spectrum.height < 1 or spectrum.width < 1:
        raise InvalidInputError("spectrum dimensions must be positive")
    out = np.fft.ifft2(np.fft.ifftshift(spectrum.coefficients))
    scale = np.max(np.abs(spectrum.coefficients)) / (spectrum.height * spectrum.width)
    scale = max(scale, scale_hint or 0.0)
    residue = 0.0 if scale == 0.0 else np.max(np.abs(out.imag)) / scale
    if residue > tol:
        raise SymmetryViolationError(
            f"imaginary residue {residue:.3e} exceeds {tol:.1e}; "
            "spectrum is not conjugate-symmetric"
        )
    return out.real


def build_radial_mask(height: int, width: int, radius: float) -> RadialMask:
    """Binary mask that is 0 where the Euclidean distance to the spectral
    center is strictly below ``radius`` and 1 elsewhere.

    ``radius=0`` therefore keeps everything (no distance is negative).
    """
    if height < 1 or width < 1:
        raise InvalidInputError("mask dimensions must be >= 1")
    if radius < 0:
        raise InvalidInputError("radius must be non-negative")
    cy, cx = height // 2, width // 2
    yy = np.arange(height, dtype=np.float64)[:, None] - cy
    xx = np.arange(width, dtype=np.float64)[None, :] - cx
    dist = np.sqrt(yy * yy + xx * xx)
    values = (dist >= radius).astype(np.float64)
    return RadialMask(height=height, width=width, radius=float(radius), values=values)


def split_frequency(image: np.ndarray, radius: float) -> FrequencyComponents:
    """Split an image into complementary low/high frequency components.

    ``high`` keeps the coefficients outside the masking disc, ``low`` the
    ones inside; their pixel-wise sum reconstructs the input. Color images
    are processed per channel with the same mask.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    if image.ndim != 3:
        raise InvalidInputError(f"expected (H, W) or (H, W, C) image, got shape {image.shape}")
    mask = build_radial_mask(image.shape[0], image.shape[1], radius).values
    low = np.empty_like(image)
    high = np.empty_like(image)
    for c in range(image.shape[2]):
        spec = dft2(image[:, :, c])
        scale = np.max(np.abs(spec.coefficients)) / (spec.height * spec.width)
        high_spec = Spectrum(spec.height, spec.width, spec.coefficients * mask)
        low_spec = Spectrum(spec.height, spec.width, spec.coefficients * (1.0 - mask))
        high[:, :, c] = idft2(high_spec, scale_hint=scale)
        low[:, :, c] = idft2(low_spec, scale_hint=scale)
    if squeeze:
        low, high = low[:, :, 0], high[:, :, 0]
    return FrequencyComponents(low=low, high=high, radius=float(radius))


def sample_component(
    components: FrequencyComponents,
    p_low: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Return the low component with probability ``p_low``, else the high one.

    The caller owns ``rng``; a fixed seed makes the choice deterministic.
    """
    if not 0.0 <= p_low <= 1.0:
        raise InvalidInputError(f"p_low must be in [0, 1], got {p_low}")
    return components.low if rng.random() < p_low else components.high


def frequency_distance(
    x: np.ndarray,
    x_hat: np.ndarray,
    alpha: float = 1.0,
    mask: np.ndarray | None = None,
) -> float:
    """Mean magnitude of the spectral difference between two images.

    Computes ``mean |F(x) - F(x_hat)|^alpha`` over all frequencies (and
    channels). When ``mask`` is given, the mean runs only over entries where
    ``mask`` is nonzero; the mask uses centered spectral coordinates, which
    lets callers restrict the distance to the band removed by a radial mask.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise InvalidInputError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    squeeze = x.ndim == 2
    if squeeze:
        x, x_hat = x[:, :, None], x_hat[:, :, None]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:2]:
            raise InvalidInputError(f"mask shape {mask.shape} does not match image {x.shape[:2]}")
        if not mask.any():
            raise InvalidInputError("mask selects no frequencies")
    total = 0.0
    for c in range(x.shape[2]):
        diff = np.abs(dft2(x[:, :, c]).coefficients - dft2(x_hat[:, :, c]).coefficients)
        mag = diff**alpha
        total += float(mag[mask].mean() if mask is not None else mag.mean())
    return total / x.shape[2]


def mask_to_png(mask: RadialMask, path) -> None:
    """Write a mask as an 8-bit PNG (debug/documentation aid)."""
    from PIL import Image

    img = (mask.values * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
