"""Test-time adaptation objectives for segmentation and depth."""

from __future__ import annotations

import torch

from ..neural import ops

CONFIDENCE_EPS = 1e-6


def entropy_loss(logits: torch.Tensor) -> torch.Tensor:
    """Mean pixel entropy of (B, K, H, W) logits."""
    return ops.entropy(logits)


def cross_entropy_pseudo(logits: torch.Tensor, pseudo_logits: torch.Tensor) -> torch.Tensor:
    """Cross entropy against the argmax of ``pseudo_logits`` (no gradient through the labels)."""
    labels = pseudo_logits.detach().argmax(dim=1)
    return ops.pixel_cross_entropy(logits, labels)


def hflip(x: torch.Tensor) -> torch.Tensor:
    return torch.flip(x, dims=(-1,))


@torch.no_grad()
def flip_targets(depth_net, x: torch.Tensor, x_flip: torch.Tensor | None = None):
    """Prediction, mirrored-back prediction of the flipped input, and confidence weights."""
    x_flip = hflip(x) if x_flip is None else x_flip
    p = depth_net(x)
    p_flip = hflip(depth_net(x_flip))
    return p, p_flip, depth_confidence_mask(p, p_flip)


def depth_confidence_mask(p: torch.Tensor, p_flip: torch.Tensor) -> torch.Tensor:
    """Pixels where the two views agree get large weight, up to 1e6."""
    if p.shape != p_flip.shape:
        raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(p_flip.shape)}")
    return 1.0 / ((p_flip - p).abs() + CONFIDENCE_EPS)


def depth_consistency_loss(
    depth_net, x: torch.Tensor, x_flip: torch.Tensor | None = None, live_consistency: bool = False
) -> torch.Tensor:
    """Flip-consistency objective, the depth stand-in for entropy.

    ``p``, ``p_flip`` and the confidence weights are fixed targets and only the
    fresh ``D(x)`` is differentiable. Because that fresh pass equals ``p``, the
    gradient is identically zero; ``live_consistency=True`` instead keeps ``p``
    live inside the ``|p_flip - p|`` term so the objective can move the model.
    """
    p, p_flip, s = flip_targets(depth_net, x, x_flip)
    live = depth_net(x)
    first = (p_flip - (live if live_consistency else p)).abs()
    return (first + s * (p - live).abs()).mean()


def focus_depth_loss(depth_net, x: torch.Tensor, x_focus: torch.Tensor) -> torch.Tensor:
    """Confidence-weighted L1 pulling the prediction on the denoised input toward the original view."""
    p, _, s = flip_targets(depth_net, x)
    return (s * (p - depth_net(x_focus)).abs()).mean()
