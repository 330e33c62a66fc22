"""DDPM schedule, ancestral sampling and frequency-prior guidance.

Sampler state is numpy float64. Denoisers are passed as ``eps_fn(x_t, t)``
callables on arrays of any leading shape; :func:`model_eps_fn` adapts an
:class:`~focus_tta.neural.models.EpsDenoiser`. Guided denoising runs in the
symmetric data range ``[-1, 1]`` (``x = 2 * img - 1``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from . import kernelfilter as kf
from .neural import ops

EpsFn = Callable[[np.ndarray, int], np.ndarray]


class StepPolicy(str, enum.Enum):
    RESPACED = "respaced"
    TRUNCATED = "truncated"


class PriorMode(str, enum.Enum):
    LEARNED = "learned"
    LOWPASS = "lowpass"
    NONE = "none"


@dataclass(frozen=True)
class DiffusionSchedule:
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        betas = np.linspace(self.beta_start, self.beta_end, self.n_steps)
        alphas = 1.0 - betas
        # index 0 is the clean state: alpha_bar[0] == 1; step t uses index t
        object.__setattr__(self, "betas", np.concatenate([[0.0], betas]))
        object.__setattr__(self, "alphas", np.concatenate([[1.0], alphas]))
        object.__setattr__(self, "alpha_bars", np.cumprod(self.alphas))

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"timestep {t} outside [1, {self.n_steps}]")

    def timesteps(self, nsteps: int, policy: StepPolicy | str = StepPolicy.RESPACED) -> list[int]:
        """Descending visit order; each step moves from ``ts[i]`` to ``ts[i + 1]`` (or 0)."""
        if not 1 <= nsteps <= self.n_steps:
            raise ValueError(f"nsteps must lie in [1, {self.n_steps}]")
        if StepPolicy(policy) is StepPolicy.TRUNCATED:
            return list(range(self.n_steps, self.n_steps - nsteps, -1))
        ts = np.round(np.linspace(self.n_steps, 1, nsteps)).astype(int)
        return [int(t) for t in ts]


@dataclass
class GuidanceConfig:
    w: float = 2.0
    nsteps: int = 25
    prior_mode: PriorMode = PriorMode.LEARNED
    step_policy: StepPolicy = StepPolicy.RESPACED
    lowpass_factor: int = 4
    seed: int = 0

    def __post_init__(self):
        self.prior_mode = PriorMode(self.prior_mode)
        self.step_policy = StepPolicy(self.step_policy)
        if self.w < 0:
            raise ValueError("guidance scale w must be >= 0")
        if self.nsteps < 1:
            raise ValueError("nsteps must be >= 1")
        if self.lowpass_factor < 2:
            raise ValueError("lowpass_factor must be >= 2")


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_t(t)
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps


def estimate_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_t(t)
    ab = sched.alpha_bars[t]
    return np.sqrt(1 / ab) * x_t - eps_hat * np.sqrt(1 / ab - 1)


def posterior_mean_var(x_t, x0_hat, t: int, t_prev: int, sched: DiffusionSchedule):
    """Mean and variance of q(x_{t_prev} | x_t, x0) for any ``t_prev < t``."""
    ab_t = sched.alpha_bars[t]
    ab_prev = sched.alpha_bars[t_prev]
    beta = 1 - ab_t / ab_prev
    mean = (np.sqrt(ab_prev) * beta / (1 - ab_t)) * x0_hat + (np.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab_t)) * x_t
    var = (1 - ab_prev) / (1 - ab_t) * beta
    return mean, var


def reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator | Sequence[np.random.Generator],
    t_prev: int | None = None,
    clip: float | None = None,
) -> np.ndarray:
    """One ancestral step; no noise is added when landing on t = 0.

    ``rng`` may be a list with one generator per leading batch element. ``clip``
    bounds the x0 estimate used in the posterior mean.
    """
    sched.check_t(t)
    t_prev = t - 1 if t_prev is None else t_prev
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev {t_prev} must lie in [0, {t})")
    x0_hat = estimate_x0(x_t, eps_hat, t, sched)
    if clip is not None:
        x0_hat = np.clip(x0_hat, -clip, clip)
    mean, var = posterior_mean_var(x_t, x0_hat, t, t_prev, sched)
    if t_prev == 0:
        return mean
    return mean + np.sqrt(var) * _normal(rng, np.shape(x_t))


def _normal(rng, shape) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def _unit(r: np.ndarray) -> np.ndarray:
    """r / ||r|| per leading batch element; zero where the residual vanishes."""
    axes = tuple(range(1, r.ndim))
    norm = np.sqrt((r**2).sum(axis=axes, keepdims=True))
    return np.divide(r, norm, out=np.zeros_like(r), where=norm > 0)


def _batched(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return (x, False) if x.ndim == 4 else (x[None], True)


def guidance_gradient(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    ref: np.ndarray,
    k1: Sequence[kf.KernelField] | kf.KernelField | None,
    k2: Sequence[kf.KernelField] | kf.KernelField | None,
    t: int,
    sched: DiffusionSchedule,
    prior_mode: PriorMode | str = PriorMode.LEARNED,
    lowpass_factor: int = 4,
) -> np.ndarray:
    """Gradient w.r.t. x_t of the prior-matching objective, epsilon held fixed.

    Objective: ``||lp(ref) - lp(x0)|| + ||hp(ref) - hp(x0)||`` (learned kernels) or
    ``||L(ref) - L(x0)||`` with ``L`` the image-level low-pass. Since
    ``d x0 / d x_t = 1 / sqrt(alpha_bar_t)`` the gradient is the operator adjoints
    applied to the unit residuals, scaled by that factor.
    """
    sched.check_t(t)
    mode = PriorMode(prior_mode)
    xb, single = _batched(x0_hat)
    rb, _ = _batched(ref)
    scale = 1 / np.sqrt(sched.alpha_bars[t])
    grad = np.zeros_like(xb)
    if mode is PriorMode.NONE:
        pass
    elif mode is PriorMode.LOWPASS:
        r = _unit(np.stack([kf.image_level_lowpass(a, lowpass_factor) - kf.image_level_lowpass(b, lowpass_factor) for a, b in zip(xb, rb)]))
        grad = np.stack([kf.image_level_lowpass_adjoint(ri, lowpass_factor) for ri in r])
    else:
        if k1 is None or k2 is None:
            raise ValueError("learned prior mode requires both kernel fields")
        k1s = [k1] if isinstance(k1, kf.KernelField) else list(k1)
        k2s = [k2] if isinstance(k2, kf.KernelField) else list(k2)
        k1s = [kf._as_normalized(k) for k in k1s]
        k2s = [kf._as_normalized(k) for k in k2s]
        diff = xb - rb  # both priors are linear, so compare them on the difference
        r_lp = _unit(np.stack([kf.apply_kernel_field(d, a) for d, a in zip(diff, k1s)]))
        r_hp = _unit(np.stack([d - kf.apply_kernel_field(d, a) for d, a in zip(diff, k2s)]))
        grad = np.stack(
            [
                kf.kernel_field_adjoint(rl, a) + rh - kf.kernel_field_adjoint(rh, b)
                for rl, rh, a, b in zip(r_lp, r_hp, k1s, k2s)
            ]
        )
    grad = scale * grad
    return grad[0] if single else grad


def guidance_objective(x0_hat, ref, k1, k2, prior_mode=PriorMode.LEARNED, lowpass_factor: int = 4) -> float:
    """The scalar objective whose x0-gradient :func:`guidance_gradient` returns (single image)."""
    mode = PriorMode(prior_mode)
    if mode is PriorMode.NONE:
        return 0.0
    if mode is PriorMode.LOWPASS:
        d = kf.image_level_lowpass(ref, lowpass_factor) - kf.image_level_lowpass(x0_hat, lowpass_factor)
        return float(np.linalg.norm(d))
    lp = kf.low_pass_prior(ref, k1) - kf.low_pass_prior(x0_hat, k1)
    hp = kf.high_pass_prior(ref, k2) - kf.high_pass_prior(x0_hat, k2)
    return float(np.linalg.norm(lp) + np.linalg.norm(hp))


def analytic_epsilon_gaussian(x_t, t: int, mu, sigma0: float, sched: DiffusionSchedule) -> np.ndarray:
    """Posterior-optimal epsilon when x0 ~ N(mu, sigma0^2 I)."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    sched.check_t(t)
    ab = sched.alpha_bars[t]
    post_mean = (np.sqrt(ab) * sigma0**2 * x_t + (1 - ab) * mu) / (ab * sigma0**2 + 1 - ab)
    return (x_t - np.sqrt(ab) * post_mean) / np.sqrt(1 - ab)


def model_eps_fn(model: torch.nn.Module) -> EpsFn:
    """Wrap an epsilon network as ``eps_fn(x_t, t)`` on (H, W, C) or (B, H, W, C) arrays."""

    @torch.no_grad()
    def eps_fn(x_t: np.ndarray, t: int) -> np.ndarray:
        xb, single = _batched(x_t)
        inp = ops.to_nchw(xb)
        tt = torch.full((inp.shape[0],), int(t), dtype=torch.long)
        out = ops.to_nhwc(model(inp, tt))
        return out[0] if single else out

    return eps_fn


class SamplingError(RuntimeError):
    pass


def _rngs(seeds, batch: int) -> list[np.random.Generator]:
    if isinstance(seeds, (int, np.integer)):
        seeds = [[int(seeds), i] for i in range(batch)]
    if len(seeds) != batch:
        raise ValueError(f"{len(seeds)} seeds for a batch of {batch}")
    return [np.random.default_rng(s) for s in seeds]


def predict_reference(noisy: np.ndarray, yfpn) -> tuple[np.ndarray, list, list]:
    """Y-FPN filtered estimate and its (raw logit) kernel fields for a batch."""
    k1, k2 = yfpn.predict_kernels(noisy)
    ref = np.stack([kf.yfpn_reconstruct(x, a, b) for x, a, b in zip(noisy, k1, k2)])
    return ref, k1, k2


def guided_denoise(
    noisy: np.ndarray,
    yfpn,
    denoiser: torch.nn.Module | EpsFn,
    cfg: GuidanceConfig,
    sched: DiffusionSchedule,
    seeds=None,
    kernels: tuple[Sequence[kf.KernelField], Sequence[kf.KernelField]] | None = None,
) -> np.ndarray:
    """Guided reverse diffusion from the (filtered) noisy image.

    ``noisy`` is (H, W, C) or (B, H, W, C) in [0, 1]. ``seeds`` gives one seed
    per batch element (default derives them from ``cfg.seed``) so results do not
    depend on batch composition. ``kernels`` overrides the Y-FPN prediction.
    """
    nb, single = _batched(noisy)
    mode = cfg.prior_mode
    eps_fn = model_eps_fn(denoiser) if isinstance(denoiser, torch.nn.Module) else denoiser
    rngs = _rngs(cfg.seed if seeds is None else seeds, len(nb))

    k1 = k2 = None
    ref01 = nb
    if mode is PriorMode.LEARNED:
        if kernels is not None:
            k1, k2 = (list(k) for k in kernels)
            ref01 = np.stack([kf.yfpn_reconstruct(x, a, b) for x, a, b in zip(nb, k1, k2)])
        else:
            if yfpn is None:
                raise ValueError("learned prior mode needs a Y-FPN model")
            ref01, k1, k2 = predict_reference(nb, yfpn)
            k1 = [kf.spatial_softmax(k) for k in k1]
            k2 = [kf.spatial_softmax(k) for k in k2]
    ref = 2 * ref01 - 1

    ts = sched.timesteps(cfg.nsteps, cfg.step_policy)
    x = forward_sample(ref, ts[0], _normal(rngs, ref.shape), sched)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else (0 if cfg.step_policy is StepPolicy.RESPACED else t - 1)
        eps_hat = eps_fn(x, t)
        x_new = reverse_step(x, eps_hat, t, sched, rngs, t_prev=t_prev, clip=1.0)
        if mode is not PriorMode.NONE and cfg.w != 0:
            x0_hat = estimate_x0(x, eps_hat, t, sched)
            x_new = x_new - cfg.w * guidance_gradient(x, x0_hat, ref, k1, k2, t, sched, mode, cfg.lowpass_factor)
        if not np.all(np.isfinite(x_new)):
            raise SamplingError(f"non-finite sample at step {i} (t={t})")
        x = x_new
        t_last = t_prev
    if t_last > 0:
        x = estimate_x0(x, eps_fn(x, t_last), t_last, sched)
    out = np.clip((x + 1) / 2, 0.0, 1.0)
    return out[0] if single else out


def sample_unguided(
    noisy: np.ndarray,
    denoiser: torch.nn.Module | EpsFn,
    nsteps: int,
    sched: DiffusionSchedule,
    policy: StepPolicy | str = StepPolicy.RESPACED,
    seed: int = 0,
    seeds=None,
) -> np.ndarray:
    """Plain ancestral sampling started from q(x_N | noisy), no guidance."""
    nb, single = _batched(noisy)
    policy = StepPolicy(policy)
    eps_fn = model_eps_fn(denoiser) if isinstance(denoiser, torch.nn.Module) else denoiser
    rngs = _rngs(seed if seeds is None else seeds, len(nb))
    ts = sched.timesteps(nsteps, policy)
    x0 = 2 * nb - 1
    x = forward_sample(x0, ts[0], _normal(rngs, x0.shape), sched)
    ends = ts[1:] + [0 if policy is StepPolicy.RESPACED else ts[-1] - 1]
    for t, t_prev in zip(ts, ends):
        x = reverse_step(x, eps_fn(x, t), t, sched, rngs, t_prev=t_prev, clip=1.0)
    if ends[-1] > 0:
        x = estimate_x0(x, eps_fn(x, ends[-1]), ends[-1], sched)
    out = np.clip((x + 1) / 2, 0.0, 1.0)
    return out[0] if single else out
