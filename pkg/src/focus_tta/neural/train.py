"""Training loops: Y-FPN on FrequencyMix data, plus the desk-scale auxiliary models."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..freqaug import MixConfig, frequency_mix
from . import ops
from .models import YFPN, EpsDenoiser, TaskNet

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lambda1: float = 0.2
    lambda2: float = 0.2
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    depth: int = 3
    base_width: int = 16
    kernel_size: int = 3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


def _check_loss(loss: torch.Tensor, step: int) -> float:
    val = float(loss.item())
    if not np.isfinite(val):
        raise TrainingError(step, val)
    return val


def frequency_mix_batch(clean: np.ndarray, mix: MixConfig, seed: int, step: int) -> np.ndarray:
    """One independent RNG stream per image, keyed by (seed, step, index)."""
    return np.stack(
        [frequency_mix(img, mix, np.random.default_rng([seed, step, i])) for i, img in enumerate(clean)]
    )


def train_yfpn(
    images: np.ndarray,
    cfg: TrainConfig,
    mix: MixConfig | None = None,
    log_every: int = 0,
) -> tuple[YFPN, list[float]]:
    """FrequencyMix -> Y-FPN -> softmax kernels -> reconstruct -> loss -> Adam step."""
    mix = mix or MixConfig()
    torch.manual_seed(cfg.seed)
    model = YFPN(cfg.depth, cfg.base_width, cfg.kernel_size, images.shape[-1])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2))
    pick = np.random.default_rng([cfg.seed, 1])
    trace = []
    model.train()
    for step in range(cfg.steps):
        idx = pick.integers(0, len(images), size=cfg.batch_size)
        clean = images[idx]
        noisy = frequency_mix_batch(clean, mix, cfg.seed, step)
        x, y = ops.to_nchw(noisy), ops.to_nchw(clean)
        loss = ops.yfpn_loss(model.filter(x), y, cfg.lambda1, cfg.lambda2)
        trace.append(_check_loss(loss, step))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and step % log_every == 0:
            log.info("yfpn step %d loss %.5f", step, trace[-1])
    model.eval()
    return model, trace


@dataclass
class AuxConfig:
    denoiser_steps: int = 4000
    denoiser_width: int = 24
    denoiser_lr: float = 1e-3
    denoiser_batch_size: int = 16
    task_steps: int = 1500
    task_width: int = 16
    task_lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0
    n_diffusion_steps: int = 1000


def _flip_batch(rng, *arrays):
    """Random horizontal flips applied identically to every array (axis 2 = width)."""
    flip = rng.random(len(arrays[0])) < 0.5
    return [np.where(flip.reshape(-1, *[1] * (a.ndim - 1)), a[:, :, ::-1], a) for a in arrays]


def _adam(params, lr):
    return torch.optim.Adam(params, lr=lr)


def _cosine(opt, steps):
    return torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1 + np.cos(np.pi * min(s, steps) / max(steps, 1))))


def train_denoiser(images: np.ndarray, cfg: AuxConfig, log_every: int = 0) -> tuple[EpsDenoiser, list[float]]:
    """Standard epsilon-prediction objective on images mapped to [-1, 1]."""
    from ..diffusion import DiffusionSchedule

    sched = DiffusionSchedule(cfg.n_diffusion_steps)
    ab = torch.from_numpy(sched.alpha_bars).float()
    torch.manual_seed(cfg.seed)
    model = EpsDenoiser(base_width=cfg.denoiser_width, channels=images.shape[-1], n_steps=cfg.n_diffusion_steps)
    opt = _adam(model.parameters(), cfg.denoiser_lr)
    lr_sched = _cosine(opt, cfg.denoiser_steps)
    rng = np.random.default_rng([cfg.seed, 2])
    gen = torch.Generator().manual_seed(cfg.seed)
    trace = []
    for step in range(cfg.denoiser_steps):
        idx = rng.integers(0, len(images), size=cfg.denoiser_batch_size)
        (batch,) = _flip_batch(rng, images[idx])
        x0 = ops.to_nchw(2 * batch - 1)
        t = torch.randint(1, cfg.n_diffusion_steps + 1, (len(idx),), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        a = ab[t].view(-1, 1, 1, 1)
        x_t = a.sqrt() * x0 + (1 - a).sqrt() * eps
        loss = F.mse_loss(model(x_t, t), eps)
        trace.append(_check_loss(loss, step))
        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
        if log_every and step % log_every == 0:
            log.info("denoiser step %d loss %.5f", step, trace[-1])
    model.eval()
    return model, trace


def train_task_net(
    images: np.ndarray, targets: np.ndarray, task: str, cfg: AuxConfig, log_every: int = 0
) -> tuple[TaskNet, list[float]]:
    """Cross entropy (segmentation) or L1 (depth) on clean data."""
    torch.manual_seed(cfg.seed + (0 if task == "seg" else 1))
    model = TaskNet(task, base_width=cfg.task_width, channels=images.shape[-1])
    opt = _adam(model.parameters(), cfg.task_lr)
    lr_sched = _cosine(opt, cfg.task_steps)
    rng = np.random.default_rng([cfg.seed, 3 if task == "seg" else 4])
    trace = []
    model.train()
    for step in range(cfg.task_steps):
        idx = rng.integers(0, len(images), size=cfg.batch_size)
        batch, tgt = _flip_batch(rng, images[idx], targets[idx])
        out = model(ops.to_nchw(batch))
        tgt = torch.from_numpy(np.ascontiguousarray(tgt))
        if task == "seg":
            loss = F.cross_entropy(out, tgt.long())
        else:
            loss = (out - tgt.float()).abs().mean()
        trace.append(_check_loss(loss, step))
        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
        if log_every and step % log_every == 0:
            log.info("%s step %d loss %.5f", task, step, trace[-1])
    model.eval()
    return model, trace


def build_and_train_auxiliaries(dataset, cfg: AuxConfig | None = None, log_every: int = 0) -> dict:
    cfg = cfg or AuxConfig()
    denoiser, d_trace = train_denoiser(dataset.images, cfg, log_every)
    segmenter, s_trace = train_task_net(dataset.images, dataset.masks, "seg", cfg, log_every)
    depth_net, z_trace = train_task_net(dataset.images, dataset.depths, "depth", cfg, log_every)
    return {
        "denoiser": denoiser,
        "segmenter": segmenter,
        "depth_net": depth_net,
        "traces": {"denoiser": d_trace, "segmenter": s_trace, "depth_net": z_trace},
    }


@torch.no_grad()
def predict(model: torch.nn.Module, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Segmentation logits (B, C, H, W) or depth maps (B, H, W) as float64 numpy."""
    model.eval()
    outs = [model(ops.to_nchw(images[i : i + batch_size])).double().numpy() for i in range(0, len(images), batch_size)]
    return np.concatenate(outs)


@torch.no_grad()
def filter_images(model: YFPN, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    outs = [ops.to_nhwc(model.filter(ops.to_nchw(images[i : i + batch_size]))) for i in range(0, len(images), batch_size)]
    return np.clip(np.concatenate(outs), 0.0, 1.0)


def evaluate_yfpn(model: YFPN, clean: np.ndarray, mix: MixConfig | None = None, seed: int = 10_000) -> dict:
    """Held-out PSNR (pooled over the set) of corrupted inputs and of the Y-FPN output."""
    from ..tta.metrics import psnr

    noisy = frequency_mix_batch(clean, mix or MixConfig(), seed, 0)
    out = filter_images(model, noisy)
    p_in, p_out = psnr(noisy, clean), psnr(out, clean)
    return {"psnr_input": p_in, "psnr_output": p_out, "gain": p_out - p_in}
