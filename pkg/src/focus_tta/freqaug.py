"""Frequency-dependent amplitude perturbations and the FrequencyMix augmentation.

Perturbation fields live in the centered spectrum layout (DC at ``(H//2, W//2)``)
and are shared by all channels of an image.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import spectral


class PerturbationKind(str, Enum):
    HIGH = "high"
    LOW = "low"
    RAND = "rand"
    UNI = "uni"


AUGMENTATIONS = ("noise", "low", "high", "uni", "rand")


@dataclass(frozen=True)
class PerturbationField:
    values: np.ndarray
    kind: PerturbationKind

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("perturbation field must be finite")


@dataclass
class MixConfig:
    severity_choices: tuple[float, ...] = (3, 4, 5)
    beta_const: float = 0.3
    dirichlet_alpha: float = 1.0
    blend_beta_params: tuple[float, float] = (1.0, 1.0)
    uniform_noise_delta: float = 0.1
    rng_seed: int = 0
    augmentations: tuple[str, ...] = AUGMENTATIONS
    # use the printed form 1 + eps * A instead of eps * A
    additive: bool = False
    # evaluate the low-band exponent on (m/H, n/W) instead of raw indices
    normalized_low: bool = False

    def __post_init__(self):
        self.severity_choices = tuple(self.severity_choices)
        self.blend_beta_params = tuple(self.blend_beta_params)
        self.augmentations = tuple(self.augmentations)
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be > 0")
        if len(self.blend_beta_params) != 2 or min(self.blend_beta_params) <= 0:
            raise ValueError("blend_beta_params must be two positive numbers")
        if not 0 <= self.uniform_noise_delta <= 1:
            raise ValueError("uniform_noise_delta must lie in [0, 1]")
        if not self.severity_choices or min(self.severity_choices) <= 0:
            raise ValueError("severity_choices must be positive")
        unknown = set(self.augmentations) - set(AUGMENTATIONS)
        if unknown or not self.augmentations:
            raise ValueError(f"unknown augmentations {sorted(unknown)}; choose from {AUGMENTATIONS}")


def _hermitian_partner(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    # centered index i holds frequency i - h//2; its conjugate partner holds the negation
    ii = (2 * (h // 2) - np.arange(h)) % h
    jj = (2 * (w // 2) - np.arange(w)) % w
    return np.meshgrid(ii, jj, indexing="ij")


def symmetrize(values: np.ndarray) -> np.ndarray:
    """Make a centered field even, ``f[k] == f[-k]``, so perturbed spectra stay Hermitian.

    Each conjugate pair takes the value drawn at its lexicographically smaller member.
    """
    h, w = values.shape
    pi, pj = _hermitian_partner(h, w)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    keep = (ii < pi) | ((ii == pi) & (jj <= pj))
    return np.where(keep, values, values[pi, pj])


def sample_perturbation_field(
    kind: PerturbationKind | str,
    h: int,
    w: int,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
    *,
    normalized_low: bool = False,
) -> PerturbationField:
    kind = PerturbationKind(kind)
    if alpha <= 0:
        raise ValueError(f"severity alpha must be positive, got {alpha}")
    if h < 2 or w < 2:
        raise ValueError("field dimensions must be >= 2")
    m, n = spectral.centered_frequencies(h, w)
    m = m.astype(np.float64)
    n = n.astype(np.float64)

    if kind is PerturbationKind.UNI:
        return PerturbationField(np.full((h, w), alpha * beta), kind)

    if kind is PerturbationKind.HIGH:
        std = 2 * alpha * np.sqrt((m**2 + n**2) / (h**2 + w**2)) + beta
        values = rng.normal(1.0, std)
    elif kind is PerturbationKind.LOW:
        if normalized_low:
            r2 = (m / h) ** 2 + (n / w) ** 2
        else:
            r2 = m**2 + n**2
        std = 2 * np.exp(-alpha * r2)
        values = beta * rng.normal(1.0, std)
    else:
        x_pk = rng.uniform(0, w / 4)
        y_pk = rng.uniform(0, h / 4)
        num = (h - m + y_pk) ** 2 + (w - n + x_pk) ** 2
        den = h**2 + y_pk**2 + w**2 + x_pk**2
        values = rng.normal(1.0, alpha * num / den)
    return PerturbationField(symmetrize(values), kind)


def perturb_amplitude(
    img: np.ndarray, field: PerturbationField, *, additive: bool = False, clamp: bool = True
) -> np.ndarray:
    """Scale the centered amplitude spectrum by the field and keep the original phase."""
    img = np.asarray(img, dtype=np.float64)
    if field.values.shape != img.shape[:2]:
        raise ValueError(f"field shape {field.values.shape} does not match image {img.shape[:2]}")
    polar = spectral.to_polar(spectral.fft2(img))
    amp = spectral.center_shift(polar.amplitude)
    eps = field.values if img.ndim == 2 else field.values[..., None]
    amp_hat = 1 + eps * amp if additive else eps * amp
    amp_hat = spectral.uncenter_shift(amp_hat)
    # amp_hat may be negative; recombine directly rather than through from_polar
    out = spectral.ifft2(amp_hat * np.exp(1j * polar.phase))
    return np.clip(out, 0.0, 1.0) if clamp else out


def uniform_pixel_noise(img: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img + rng.uniform(-delta, delta, size=img.shape), 0.0, 1.0)


Augmentation = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def make_augmentation(name: str, cfg: MixConfig) -> Augmentation:
    """Return ``op(img, rng)``; spectral ops draw a fresh severity on every call."""
    if name == "noise":
        return lambda img, rng: uniform_pixel_noise(img, cfg.uniform_noise_delta, rng)

    def op(img, rng):
        alpha = float(rng.choice(cfg.severity_choices))
        fld = sample_perturbation_field(
            name, img.shape[0], img.shape[1], alpha, cfg.beta_const, rng,
            normalized_low=cfg.normalized_low,
        )
        return perturb_amplitude(img, fld, additive=cfg.additive)

    return op


def frequency_mix(
    img: np.ndarray,
    cfg: MixConfig,
    rng: np.random.Generator,
    *,
    blend: float | None = None,
    ops: Sequence[Augmentation] | None = None,
) -> np.ndarray:
    """Dirichlet-weighted mixture of random augmentation chains, Beta-blended with ``img``.

    ``blend`` forces the final Beta weight and ``ops`` replaces the augmentation pool;
    both exist for testing.
    """
    img = np.asarray(img, dtype=np.float64)
    pool = list(ops) if ops is not None else [make_augmentation(a, cfg) for a in cfg.augmentations]
    weights = rng.dirichlet([cfg.dirichlet_alpha] * 4)
    mixed = np.zeros_like(img)
    for wi in weights:
        picks = rng.integers(0, len(pool), size=4)
        depth = int(rng.integers(1, 5))
        out = img
        for p in picks[:depth]:
            out = pool[p](out, rng)
        mixed += wi * out
    w = float(rng.beta(*cfg.blend_beta_params)) if blend is None else float(blend)
    return np.clip(w * img + (1 - w) * mixed, 0.0, 1.0)
