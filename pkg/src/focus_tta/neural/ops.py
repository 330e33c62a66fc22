"""Differentiable building blocks (torch, NCHW layout)."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .. import spectral

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def to_nchw(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, C) or (B, H, W, C) numpy -> (B, C, H, W) tensor."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_nhwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float64)


def kernel_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the K*K axis of (B, C, K*K, H, W) logits."""
    return torch.softmax(logits, dim=2)


def apply_kernels(img: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Per-pixel filtering; ``weights`` is (B, C, K*K, H, W), reflect padded borders."""
    b, c, h, w = img.shape
    kk = weights.shape[2]
    k = int(math.isqrt(kk))
    r = k // 2
    padded = F.pad(img, (r, r, r, r), mode="reflect") if r else img
    patches = F.unfold(padded, k).view(b, c, kk, h, w)
    return (patches * weights).sum(dim=2)


def reconstruct(img: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor) -> torch.Tensor:
    """lp + hp decomposition with normalized kernels ``w1`` and ``w2``."""
    return apply_kernels(img, w1) + img - apply_kernels(img, w2)


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM over valid windows, all channels and the batch.

    Images smaller than the 11x11 window use the largest odd window that fits.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    c = a.shape[1]
    size = min(SSIM_WINDOW, a.shape[2], a.shape[3])
    size -= 1 - size % 2
    win = _gaussian_window(size, SSIM_SIGMA, a.dtype).expand(c, 1, size, size)

    def filt(x):
        return F.conv2d(x, win, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean()


def freq_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-image log(1 + ||F(target) - F(pred)|| / HW), averaged over the batch."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    h, w = pred.shape[-2:]
    diff = torch.fft.fft2(target - pred)
    mag = torch.sqrt(diff.real**2 + diff.imag**2 + 1e-24)
    if spectral.FREQ_LOSS_NORM == 1:
        dist = mag.flatten(1).sum(dim=1)
    else:
        dist = torch.sqrt((mag**2).flatten(1).sum(dim=1))
    return torch.log1p(dist / (h * w)).mean()


def yfpn_loss(pred: torch.Tensor, clean: torch.Tensor, lam1: float, lam2: float) -> torch.Tensor:
    """mean |pred - clean| - lam1 * SSIM + lam2 * frequency loss."""
    loss = (pred - clean).abs().mean()
    if lam1:
        loss = loss - lam1 * ssim(pred, clean)
    if lam2:
        loss = loss + lam2 * freq_loss(pred, clean)
    return loss


def entropy(logits: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel Shannon entropy of the class softmax (class axis 1)."""
    logp = torch.log_softmax(logits, dim=1)
    return -(logp.exp() * logp).sum(dim=1).mean()


def pixel_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    n_cls = logits.shape[1]
    if labels.numel() and (int(labels.max()) >= n_cls or int(labels.min()) < 0):
        raise ValueError(f"label index out of range for {n_cls} classes")
    return F.cross_entropy(logits, labels.long())
