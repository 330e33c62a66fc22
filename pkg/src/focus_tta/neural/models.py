"""Small encoder-decoder networks: the Y-FPN, the epsilon denoiser and the task nets.

Every model carries a JSON-serializable ``descriptor`` from which
:func:`build_model` rebuilds an identical architecture.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..kernelfilter import KernelField
from . import ops

LEAK = 0.2


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, norm: bool, stride: int = 1):
        super().__init__()
        self.conv = _conv(cin, cout, stride)
        self.norm = nn.InstanceNorm2d(cout, affine=True) if norm else None
        self.act = nn.LeakyReLU(LEAK)

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return self.act(x)


class UNetTrunk(nn.Module):
    """Encoder-decoder with skip concatenation; output has ``base_width`` channels."""

    def __init__(self, cin: int, depth: int, base_width: int, norm: bool = False):
        super().__init__()
        if not 1 <= depth <= 4:
            raise ValueError(f"depth must be in [1, 4], got {depth}")
        if not 4 <= base_width <= 64:
            raise ValueError(f"base_width must be in [4, 64], got {base_width}")
        widths = [base_width * 2**i for i in range(depth)]
        self.depth = depth
        self.enc = nn.ModuleList()
        prev = cin
        for i, wd in enumerate(widths):
            stride = 1 if i == 0 else 2
            self.enc.append(nn.Sequential(ConvBlock(prev, wd, norm, stride), ConvBlock(wd, wd, norm)))
            prev = wd
        self.dec = nn.ModuleList()
        for i in reversed(range(depth - 1)):
            self.dec.append(
                nn.Sequential(ConvBlock(widths[i + 1] + widths[i], widths[i], norm), ConvBlock(widths[i], widths[i], norm))
            )
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x):
        mult = 2 ** (self.depth - 1)
        if x.shape[-1] % mult or x.shape[-2] % mult:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} must be divisible by {mult}")
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
        skips.pop()
        for block in self.dec:
            x = block(torch.cat([self.up(x), skips.pop()], dim=1))
        return x


class YFPN(nn.Module):
    """Kernel prediction network with two heads (low-pass and high-pass kernels)."""

    def __init__(self, depth: int = 3, base_width: int = 16, k: int = 3, channels: int = 3):
        super().__init__()
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel side must be odd, got {k}")
        self.descriptor = {"arch": "yfpn", "depth": depth, "base_width": base_width, "k": k, "channels": channels}
        self.k = k
        self.channels = channels
        self.trunk = UNetTrunk(channels, depth, base_width)
        self.head_lp = nn.Conv2d(base_width, channels * k * k, 3, padding=1)
        self.head_hp = nn.Conv2d(base_width, channels * k * k, 3, padding=1)
        for head in (self.head_lp, self.head_hp):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, x):
        """Returns two (B, C, K*K, H, W) logit tensors."""
        feat = self.trunk(x)
        b, _, h, w = x.shape
        shape = (b, self.channels, self.k * self.k, h, w)
        return self.head_lp(feat).view(shape), self.head_hp(feat).view(shape)

    def filter(self, x):
        l1, l2 = self(x)
        return ops.reconstruct(x, ops.kernel_softmax(l1), ops.kernel_softmax(l2))

    @torch.no_grad()
    def predict_kernels(self, img: np.ndarray) -> tuple[list[KernelField], list[KernelField]]:
        """Raw-logit kernel fields for an (H, W, C) or (B, H, W, C) image batch."""
        l1, l2 = self(ops.to_nchw(img))

        def fields(logits):
            arr = logits.double().numpy().transpose(0, 3, 4, 1, 2)  # B, H, W, C, KK
            return [KernelField(a, self.k, normalized=False) for a in arr]

        return fields(l1), fields(l2)


def timestep_features(t: torch.Tensor, n_steps: int, n_freq: int, h: int, w: int) -> torch.Tensor:
    """Sinusoidal features of t/N broadcast to (B, 2*n_freq, H, W)."""
    s = t.double() / n_steps
    freqs = (2.0 ** torch.arange(n_freq, dtype=torch.float64)) * math.pi
    ang = s[:, None] * freqs[None]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1).float()
    return emb[:, :, None, None].expand(-1, -1, h, w)


class EpsDenoiser(nn.Module):
    """Predicts the added Gaussian noise from (x_t, t)."""

    def __init__(self, depth: int = 3, base_width: int = 32, channels: int = 3, n_freq: int = 4, n_steps: int = 1000):
        super().__init__()
        self.descriptor = {
            "arch": "eps", "depth": depth, "base_width": base_width, "channels": channels,
            "n_freq": n_freq, "n_steps": n_steps,
        }
        self.n_freq = n_freq
        self.n_steps = n_steps
        self.trunk = UNetTrunk(channels + 2 * n_freq, depth, base_width)
        self.head = nn.Conv2d(base_width, channels, 3, padding=1)

    def forward(self, x, t):
        emb = timestep_features(t, self.n_steps, self.n_freq, x.shape[2], x.shape[3])
        return self.head(self.trunk(torch.cat([x, emb], dim=1)))


DEPTH_MIN, DEPTH_MAX = 0.5, 3.0


class TaskNet(nn.Module):
    """Segmenter (``task='seg'``) or depth regressor (``task='depth'``) with instance norm."""

    def __init__(self, task: str = "seg", depth: int = 3, base_width: int = 16, channels: int = 3, n_classes: int = 3):
        super().__init__()
        if task not in ("seg", "depth"):
            raise ValueError(f"unknown task {task!r}")
        self.descriptor = {
            "arch": "task", "task": task, "depth": depth, "base_width": base_width,
            "channels": channels, "n_classes": n_classes,
        }
        self.task = task
        self.trunk = UNetTrunk(channels, depth, base_width, norm=True)
        self.head = nn.Conv2d(base_width, n_classes if task == "seg" else 1, 1)

    def forward(self, x):
        out = self.head(self.trunk(x))
        if self.task == "depth":
            return DEPTH_MIN + (DEPTH_MAX - DEPTH_MIN) * torch.sigmoid(out[:, 0])
        return out


def norm_affine_names(model: nn.Module) -> list[str]:
    """Names of the learnable normalization scale/shift parameters."""
    names = []
    for mod_name, mod in model.named_modules():
        if isinstance(mod, (nn.InstanceNorm2d, nn.BatchNorm2d, nn.GroupNorm)):
            for p_name, _ in mod.named_parameters(recurse=False):
                names.append(f"{mod_name}.{p_name}")
    return names


def build_model(descriptor: dict) -> nn.Module:
    d = dict(descriptor)
    arch = d.pop("arch")
    if arch == "yfpn":
        return YFPN(**d)
    if arch == "eps":
        return EpsDenoiser(**d)
    if arch == "task":
        return TaskNet(**d)
    raise ValueError(f"unknown architecture {arch!r}")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
