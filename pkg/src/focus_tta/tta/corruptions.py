"""Common-corruption analogues at five severities.

The constants below are this package's own table, tuned for 32x32 images; they
are ordered so that severity 5 is strictly harsher than severity 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .. import kernelfilter as kf


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    SHOT_NOISE = "shot_noise"
    IMPULSE_NOISE = "impulse_noise"
    DEFOCUS_BLUR = "defocus_blur"
    MOTION_BLUR = "motion_blur"
    FOG = "fog"
    CONTRAST = "contrast"
    BRIGHTNESS = "brightness"
    PIXELATE = "pixelate"


SEVERITY_TABLE: dict[CorruptionKind, tuple[float, ...]] = {
    CorruptionKind.GAUSSIAN_NOISE: (0.08, 0.12, 0.18, 0.24, 0.30),  # std
    CorruptionKind.SHOT_NOISE: (60, 25, 12, 5, 3),  # photon rate scale
    CorruptionKind.IMPULSE_NOISE: (0.03, 0.06, 0.09, 0.17, 0.27),  # salt-and-pepper fraction
    CorruptionKind.DEFOCUS_BLUR: (1.0, 1.5, 2.0, 2.5, 3.0),  # disk radius
    CorruptionKind.MOTION_BLUR: (3, 5, 7, 9, 11),  # line length
    CorruptionKind.FOG: (0.5, 0.8, 1.1, 1.5, 2.0),  # extinction over the ramp
    CorruptionKind.CONTRAST: (0.4, 0.3, 0.2, 0.1, 0.05),  # scale about the mean
    CorruptionKind.BRIGHTNESS: (0.1, 0.2, 0.3, 0.4, 0.5),  # additive offset
    CorruptionKind.PIXELATE: (1.5, 2.0, 2.5, 3.0, 4.0),  # downsample factor
}

CATEGORIES: dict[str, tuple[CorruptionKind, ...]] = {
    "noise": (CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.SHOT_NOISE, CorruptionKind.IMPULSE_NOISE),
    "blur": (CorruptionKind.DEFOCUS_BLUR, CorruptionKind.MOTION_BLUR),
    "weather": (CorruptionKind.FOG,),
    "digital": (CorruptionKind.CONTRAST, CorruptionKind.BRIGHTNESS, CorruptionKind.PIXELATE),
}


def category_of(kind: CorruptionKind) -> str:
    for name, kinds in CATEGORIES.items():
        if kind in kinds:
            return name
    raise KeyError(kind)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int = 5
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", CorruptionKind(self.kind))
        except ValueError:
            raise ValueError(f"unknown corruption kind {self.kind!r}") from None
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in [1, 5], got {self.severity}")

    @property
    def param(self) -> float:
        return SEVERITY_TABLE[self.kind][self.severity - 1]

    @property
    def name(self) -> str:
        return f"{self.kind.value}@{self.severity}"


def contrast(img: np.ndarray, scale: float) -> np.ndarray:
    mean = img.mean()
    return np.clip((img - mean) * scale + mean, 0, 1)


def disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (yy**2 + xx**2 <= radius**2).astype(np.float64)
    return k / k.sum()


def line_kernel(length: int, angle: float) -> np.ndarray:
    half = (length - 1) / 2
    size = int(length) | 1
    k = np.zeros((size, size))
    c = size // 2
    for s in np.linspace(-half, half, 4 * length):
        y = int(round(c + s * np.sin(angle)))
        x = int(round(c + s * np.cos(angle)))
        k[y, x] = 1.0
    return k / k.sum()


def _convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return np.stack([ndimage.convolve(img[..., c], kernel, mode="mirror") for c in range(img.shape[2])], axis=-1)


def apply_corruption(img: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Corrupt an (H, W, C) image in [0, 1]; randomness comes from ``rng`` or ``spec.seed``."""
    img = np.asarray(img, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    p = spec.param
    k = spec.kind
    if k is CorruptionKind.GAUSSIAN_NOISE:
        out = img + rng.normal(0.0, p, size=img.shape)
    elif k is CorruptionKind.SHOT_NOISE:
        out = rng.poisson(img * p) / p
    elif k is CorruptionKind.IMPULSE_NOISE:
        u = rng.random(img.shape)
        out = img.copy()
        out[u < p / 2] = 0.0
        out[(u >= p / 2) & (u < p)] = 1.0
    elif k is CorruptionKind.DEFOCUS_BLUR:
        out = _convolve(img, disk_kernel(p))
    elif k is CorruptionKind.MOTION_BLUR:
        out = _convolve(img, line_kernel(int(p), rng.uniform(0, np.pi)))
    elif k is CorruptionKind.FOG:
        h = img.shape[0]
        # far at the top of the frame, near at the bottom
        ramp = (1.0 - np.arange(h) / max(h - 1, 1))[:, None, None] + rng.uniform(0, 0.2)
        trans = np.exp(-p * ramp)
        out = img * trans + (1 - trans)
    elif k is CorruptionKind.CONTRAST:
        out = contrast(img, p)
    elif k is CorruptionKind.BRIGHTNESS:
        out = img + p
    else:
        h, w = img.shape[:2]
        out = kf._apply_separable(img, kf.resample_matrix(h, p, "nearest"), kf.resample_matrix(w, p, "nearest"))
    return np.clip(out, 0.0, 1.0)


def corrupt_batch(images: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Per-image streams keyed by (seed, kind, severity, index) so results ignore batch order."""
    kind_idx = list(CorruptionKind).index(spec.kind)
    return np.stack(
        [apply_corruption(img, spec, np.random.default_rng([spec.seed, kind_idx, spec.severity, i])) for i, img in enumerate(images)]
    )
