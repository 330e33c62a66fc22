"""Per-pixel kernel filtering, the learned frequency priors, and the image-level low-pass.

A kernel field stores one ``K x K`` filter per pixel and channel, flattened
row-major into the last axis: entry ``u * K + v`` weighs the neighbour at offset
``(u - K//2, v - K//2)``. Borders use reflect padding (edge pixel not repeated).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class KernelField:
    weights: np.ndarray  # (H, W, C, K*K)
    k: int = 3
    normalized: bool = False

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel side must be odd and >= 1, got {self.k}")
        if self.weights.ndim != 4 or self.weights.shape[-1] != self.k * self.k:
            raise ValueError(
                f"weights must have shape (H, W, C, {self.k * self.k}), got {self.weights.shape}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.weights.shape[:3]

    @classmethod
    def delta(cls, h: int, w: int, c: int, k: int = 3) -> "KernelField":
        wts = np.zeros((h, w, c, k * k))
        wts[..., (k * k) // 2] = 1.0
        return cls(wts, k, normalized=True)

    @classmethod
    def uniform(cls, h: int, w: int, c: int, k: int = 3) -> "KernelField":
        return cls(np.full((h, w, c, k * k), 1.0 / (k * k)), k, normalized=True)


def spatial_softmax(field: KernelField) -> KernelField:
    if field.normalized:
        raise ValueError("kernel field is already normalized; refusing to apply softmax twice")
    z = field.weights - field.weights.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return KernelField(e / e.sum(axis=-1, keepdims=True), field.k, normalized=True)


def _as_normalized(field: KernelField) -> KernelField:
    return field if field.normalized else spatial_softmax(field)


def _reflect_index(size: int, pad: int) -> np.ndarray:
    return np.pad(np.arange(size), pad, mode="reflect")


def _patches(img: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = img.shape[:2]
    padded = img[_reflect_index(h, r)][:, _reflect_index(w, r)]
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    # (H, W, C, K, K) -> (H, W, C, K*K)
    return win.reshape(h, w, img.shape[2], k * k)


def _check(img: np.ndarray, field: KernelField) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if not field.normalized:
        raise ValueError("kernel field must be normalized (apply spatial_softmax first)")
    if img.shape != field.shape:
        raise ValueError(f"image shape {img.shape} does not match kernel field {field.shape}")
    return img


def apply_kernel_field(img: np.ndarray, field: KernelField) -> np.ndarray:
    was_2d = np.ndim(img) == 2
    img = _check(img, field)
    out = np.einsum("hwck,hwck->hwc", field.weights, _patches(img, field.k))
    return out[..., 0] if was_2d else out


def kernel_field_adjoint(residual: np.ndarray, field: KernelField) -> np.ndarray:
    """Transpose of :func:`apply_kernel_field`, including the reflect-padding fold."""
    was_2d = np.ndim(residual) == 2
    res = _check(residual, field)
    h, w, c = res.shape
    k = field.k
    r = k // 2
    acc = np.zeros((h + 2 * r, w + 2 * r, c))
    for idx in range(k * k):
        u, v = divmod(idx, k)
        acc[u : u + h, v : v + w] += field.weights[..., idx] * res
    rows = np.zeros((h, w + 2 * r, c))
    np.add.at(rows, _reflect_index(h, r), acc)
    out = np.zeros((h, w, c))
    np.add.at(out, (slice(None), _reflect_index(w, r)), rows)
    return out[..., 0] if was_2d else out


def low_pass_prior(img: np.ndarray, k1: KernelField) -> np.ndarray:
    return apply_kernel_field(img, _as_normalized(k1))


def high_pass_prior(img: np.ndarray, k2: KernelField) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) - apply_kernel_field(img, _as_normalized(k2))


def yfpn_reconstruct(
    img: np.ndarray, k1: KernelField, k2: KernelField, *, literal: bool = False
) -> np.ndarray:
    """Filtered estimate from the two predicted kernel fields.

    Default is ``lp(img) + hp(img)``; ``literal=True`` gives ``K1*img + K2*img``,
    which doubles the DC gain and is kept only for ablation.
    """
    if literal:
        return apply_kernel_field(img, k1) + apply_kernel_field(img, k2)
    return low_pass_prior(img, k1) + high_pass_prior(img, k2)


@lru_cache(maxsize=64)
def _area_matrix(size: int, out: int) -> np.ndarray:
    """(out, size) area-averaging weights; bins may straddle pixels."""
    edges = np.linspace(0.0, size, out + 1)
    mat = np.zeros((out, size))
    for j in range(out):
        lo, hi = edges[j], edges[j + 1]
        for i in range(int(np.floor(lo)), min(size, int(np.ceil(hi)))):
            mat[j, i] = min(hi, i + 1) - max(lo, i)
    return mat / mat.sum(axis=1, keepdims=True)


@lru_cache(maxsize=64)
def _bilinear_matrix(size: int, src: int) -> np.ndarray:
    """(size, src) half-pixel-centred linear interpolation weights."""
    mat = np.zeros((size, src))
    pos = np.clip((np.arange(size) + 0.5) * src / size - 0.5, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    mat[np.arange(size), lo] += 1 - frac
    mat[np.arange(size), hi] += frac
    return mat


def _nearest_matrix(size: int, src: int) -> np.ndarray:
    mat = np.zeros((size, src))
    idx = np.minimum((np.arange(size) * src) // size, src - 1)
    mat[np.arange(size), idx] = 1.0
    return mat


def resample_matrix(size: int, factor: float, upsample: str = "bilinear") -> np.ndarray:
    """Square operator: area-downsample by ``factor`` then upsample back to ``size``."""
    small = max(1, int(np.floor(size / factor + 0.5)))
    up = _bilinear_matrix(size, small) if upsample == "bilinear" else _nearest_matrix(size, small)
    return up @ _area_matrix(size, small)


def _apply_separable(img: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return mh @ img @ mw.T
    return np.einsum("ih,hwc,jw->ijc", mh, img, mw, optimize=True)


def image_level_lowpass(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsample by ``factor`` followed by bilinear upsampling."""
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    h, w = np.shape(img)[:2]
    return _apply_separable(img, resample_matrix(h, factor), resample_matrix(w, factor))


def image_level_lowpass_adjoint(residual: np.ndarray, factor: int) -> np.ndarray:
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    h, w = np.shape(residual)[:2]
    return _apply_separable(residual, resample_matrix(h, factor).T, resample_matrix(w, factor).T)
