"""2D Fourier transforms, polar decomposition and the frequency reconstruction loss.

Images are ``(H, W)`` or ``(H, W, C)`` real arrays; transforms act over the two
leading axes, channel by channel. A :data:`Spectrum` is simply a complex array of
the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Spectrum = np.ndarray

# Norm used inside the frequency reconstruction loss: 1 -> sum of complex
# magnitudes, 2 -> Euclidean norm over all bins and channels.
FREQ_LOSS_NORM = 1


@dataclass(frozen=True)
class PolarSpectrum:
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(
                f"amplitude {self.amplitude.shape} and phase {self.phase.shape} differ in shape"
            )


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{what} contains a non-finite value at index {idx}")


def _check_spatial(arr: np.ndarray) -> None:
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"spatial dimensions must be >= 2, got {arr.shape[:2]}")


def fft2(img: np.ndarray) -> Spectrum:
    """Unnormalized forward DFT over the spatial axes (negative exponent)."""
    img = np.asarray(img, dtype=np.float64)
    _check_spatial(img)
    _check_finite(img, "image")
    return np.fft.fft2(img, axes=(0, 1))


def ifft2(spec: Spectrum) -> np.ndarray:
    """Inverse DFT with 1/(HW) normalization; the imaginary part is dropped.

    No clamping is applied.
    """
    spec = np.asarray(spec)
    _check_spatial(spec)
    _check_finite(spec, "spectrum")
    return np.fft.ifft2(spec, axes=(0, 1)).real


def to_polar(spec: Spectrum) -> PolarSpectrum:
    spec = np.asarray(spec, dtype=np.complex128)
    # arctan2 resolves all four quadrants; phase lies in (-pi, pi]
    return PolarSpectrum(np.abs(spec), np.angle(spec))


def from_polar(p: PolarSpectrum) -> Spectrum:
    if np.any(p.amplitude < 0):
        raise ValueError("amplitude must be nonnegative")
    return p.amplitude * np.exp(1j * p.phase)


def center_shift(spec: np.ndarray) -> np.ndarray:
    """Move frequency (0, 0) to index (H // 2, W // 2)."""
    return np.fft.fftshift(spec, axes=(0, 1))


def uncenter_shift(spec: np.ndarray) -> np.ndarray:
    return np.fft.ifftshift(spec, axes=(0, 1))


def centered_frequencies(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency grids ``(m, n)`` matching the centered layout."""
    m = np.arange(h) - h // 2
    n = np.arange(w) - w // 2
    return np.meshgrid(m, n, indexing="ij")


def frequency_reconstruction_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """log(1 + ||F(target) - F(pred)|| / (HW)), norm summed over bins and channels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    h, w = pred.shape[:2]
    diff = np.abs(fft2(target) - fft2(pred))
    if FREQ_LOSS_NORM == 1:
        dist = diff.sum()
    else:
        dist = np.sqrt((diff**2).sum())
    return float(np.log1p(dist / (h * w)))
