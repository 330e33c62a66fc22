"""Episodic and continual adaptation over an ordered corruption stream."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from .. import io
from ..diffusion import DiffusionSchedule, GuidanceConfig, guided_denoise
from ..neural import ops
from ..neural.models import norm_affine_names
from . import losses, metrics
from .corruptions import CATEGORIES, CorruptionKind, CorruptionSpec, category_of, corrupt_batch


class Method(str, Enum):
    FROZEN = "frozen"
    TENT = "tent"
    FOCUS = "focus"
    FOCUS_PLUS_TENT = "focus_plus_tent"
    PSEUDO_LABEL_FOCUS = "pseudo_label_focus"

    @property
    def adapts_model(self) -> bool:
        return self in (Method.TENT, Method.FOCUS_PLUS_TENT, Method.PSEUDO_LABEL_FOCUS)

    @property
    def uses_tent(self) -> bool:
        return self in (Method.TENT, Method.FOCUS_PLUS_TENT)

    @property
    def uses_pseudo(self) -> bool:
        return self in (Method.FOCUS_PLUS_TENT, Method.PSEUDO_LABEL_FOCUS)


class Mode(str, Enum):
    EPISODIC = "episodic"
    CONTINUAL = "continual"


DEFAULT_STREAM = (
    CorruptionKind.GAUSSIAN_NOISE,
    CorruptionKind.SHOT_NOISE,
    CorruptionKind.IMPULSE_NOISE,
    CorruptionKind.DEFOCUS_BLUR,
    CorruptionKind.FOG,
    CorruptionKind.CONTRAST,
)


def default_stream(severity: int = 5, seed: int = 0, kinds=DEFAULT_STREAM) -> list[CorruptionSpec]:
    return [CorruptionSpec(k, severity, seed) for k in kinds]


@dataclass
class AdaptationRun:
    method: Method = Method.FROZEN
    mode: Mode = Mode.EPISODIC
    k: int = 1
    stream: list[CorruptionSpec] = field(default_factory=default_stream)
    learning_rate: float = 3e-3
    task: str = "seg"
    batch_size: int = 1
    live_consistency: bool = False
    metrics_path: str | None = None

    def __post_init__(self):
        self.method = Method(self.method)
        self.mode = Mode(self.mode)
        if self.k < 0:
            raise ValueError("k must be >= 1, or 0 for never")
        if self.task not in ("seg", "depth"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")
        if not self.stream:
            raise ValueError("corruption stream is empty")
        names = [s.name for s in self.stream]
        if len(set(names)) != len(names):
            raise ValueError("corruption stream repeats an entry")

    def fires(self, iteration: int) -> bool:
        """Supervision schedule anchored at iteration 0; k = 0 never fires."""
        return self.k > 0 and iteration % self.k == 0


def expected_fires(iterations: int, k: int) -> int:
    return math.ceil(iterations / k) if k > 0 else 0


@dataclass
class AdaptationModels:
    task_net: torch.nn.Module
    denoiser: torch.nn.Module | None = None
    yfpn: torch.nn.Module | None = None


class FocusCache:
    """Denoised images keyed by corruption and image index.

    Each image gets its own sampler seed derived from the guidance seed, the
    corruption and the index, so entries do not depend on which method, mode or
    stream order asked for them.
    """

    def __init__(self, models: AdaptationModels, guidance: GuidanceConfig, sched: DiffusionSchedule | None = None):
        if models.denoiser is None:
            raise ValueError("FOCUS needs a trained denoiser")
        self.models = models
        self.guidance = guidance
        self.sched = sched or DiffusionSchedule()
        self._store: dict[tuple, np.ndarray] = {}

    def _key(self, spec: CorruptionSpec, i: int) -> tuple:
        return (spec.kind.value, spec.severity, spec.seed, i)

    def get(self, spec: CorruptionSpec, corrupted: np.ndarray, idx) -> np.ndarray:
        """Denoised ``corrupted[idx]``; ``idx`` indexes the full corrupted set."""
        idx = list(idx)
        missing = [i for i in idx if self._key(spec, i) not in self._store]
        if missing:
            kind_idx = list(CorruptionKind).index(spec.kind)
            seeds = [[self.guidance.seed, kind_idx, spec.severity, spec.seed, i] for i in missing]
            out = guided_denoise(
                corrupted[missing], self.models.yfpn, self.models.denoiser, self.guidance, self.sched, seeds=seeds
            )
            for i, img in zip(missing, out):
                self._store[self._key(spec, i)] = img
        return np.stack([self._store[self._key(spec, i)] for i in idx])



def _snapshot(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {n: p.detach().clone() for n, p in model.named_parameters()}


def _changed(model: torch.nn.Module, ref: dict[str, torch.Tensor]) -> set[str]:
    return {n for n, p in model.named_parameters() if not torch.equal(p.detach(), ref[n])}


class _Evaluator:
    def __init__(self, task: str, n_classes: int):
        self.task = task
        self.conf = metrics.ConfusionAccumulator(n_classes) if task == "seg" else None
        self.err_sum = 0.0
        self.err_count = 0
        self.values: set | None = set() if task == "seg" else None
        self.depth_min = math.inf
        self.depth_max = -math.inf

    def update(self, out: torch.Tensor, gt: np.ndarray) -> None:
        if self.task == "seg":
            pred = out.argmax(dim=1).numpy()
            self.conf.update(pred, gt)
            self.values.update(np.unique(pred).tolist())
        else:
            pred = out.double().numpy()
            valid = gt > 0
            self.err_sum += float(np.sum(np.abs(pred[valid] - gt[valid]) / gt[valid]))
            self.err_count += int(valid.sum())
            self.depth_min = min(self.depth_min, float(pred.min()))
            self.depth_max = max(self.depth_max, float(pred.max()))

    def value(self) -> float:
        if self.task == "seg":
            return self.conf.value()
        return self.err_sum / self.err_count

    def degenerate(self) -> bool:
        if self.task == "seg":
            return len(self.values) <= 1
        return self.depth_max - self.depth_min < 1e-6


def _tent_loss(model, x: torch.Tensor, run: AdaptationRun) -> torch.Tensor:
    if run.task == "seg":
        return losses.entropy_loss(model(x))
    return losses.depth_consistency_loss(model, x, live_consistency=run.live_consistency)


def _pseudo_loss(model, x: torch.Tensor, x_focus: torch.Tensor, run: AdaptationRun) -> torch.Tensor:
    if run.task == "seg":
        with torch.no_grad():
            pseudo = model(x_focus)
        return losses.cross_entropy_pseudo(model(x), pseudo)
    return losses.focus_depth_loss(model, x, x_focus)


def run_adaptation(
    run: AdaptationRun,
    models: AdaptationModels,
    dataset,
    guidance: GuidanceConfig | None = None,
    focus_cache: FocusCache | None = None,
) -> dict:
    """Stream every corruption of ``dataset`` through ``run.method`` and return a metrics report.

    Predictions are recorded before the update on the same batch. The caller's
    task model is never modified; the run adapts its own copy.
    """
    model = copy.deepcopy(models.task_net)
    model.eval()
    source = copy.deepcopy(model.state_dict())
    start = _snapshot(model)
    n_classes = getattr(model, "descriptor", {}).get("n_classes", 3)
    norm_names = set(norm_affine_names(model))

    needs_focus = run.method is Method.FOCUS or (run.method.uses_pseudo and run.k > 0)
    if needs_focus and focus_cache is None:
        focus_cache = FocusCache(models, guidance or GuidanceConfig())

    params = [p for n, p in model.named_parameters() if n in norm_names]
    for n, p in model.named_parameters():
        p.requires_grad_(n in norm_names and run.method.adapts_model)

    def new_opt():
        return torch.optim.Adam(params, lr=run.learning_rate) if run.method.adapts_model else None

    opt = new_opt()
    targets = dataset.masks if run.task == "seg" else dataset.depths
    per_corruption, degenerate = {}, {}
    changed: set[str] = set()
    iteration = 0
    fires = 0

    for spec in run.stream:
        if run.mode is Mode.EPISODIC:
            model.load_state_dict(source)
            opt = new_opt()
        corrupted = corrupt_batch(dataset.images, spec)
        if needs_focus:
            # denoise every image this corruption will need in one batched call
            starts = range(0, len(corrupted), run.batch_size)
            needed = [
                i
                for n, b in enumerate(starts)
                if run.method is Method.FOCUS or run.fires(iteration + n)
                for i in range(b, min(b + run.batch_size, len(corrupted)))
            ]
            if needed:
                focus_cache.get(spec, corrupted, needed)
        ev = _Evaluator(run.task, n_classes)
        for b in range(0, len(corrupted), run.batch_size):
            idx = range(b, min(b + run.batch_size, len(corrupted)))
            x = ops.to_nchw(corrupted[idx.start : idx.stop])
            gt = targets[idx.start : idx.stop]
            fire = run.method.uses_pseudo and run.fires(iteration)

            if run.method is Method.FOCUS:
                with torch.no_grad():
                    ev.update(model(ops.to_nchw(focus_cache.get(spec, corrupted, idx))), gt)
            else:
                with torch.no_grad():
                    ev.update(model(x), gt)

            if run.method.adapts_model:
                loss = None
                if run.method.uses_tent:
                    loss = _tent_loss(model, x, run)
                if fire:
                    x_focus = ops.to_nchw(focus_cache.get(spec, corrupted, idx))
                    sup = _pseudo_loss(model, x, x_focus, run)
                    loss = sup if loss is None else loss + sup
                    fires += 1
                if loss is not None:
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
            iteration += 1

        changed |= _changed(model, start)
        per_corruption[spec.name] = ev.value()
        degenerate[spec.name] = ev.degenerate()

    report = _build_report(run, per_corruption, degenerate, changed, norm_names, iteration, fires)
    if run.metrics_path:
        io.write_json(report, run.metrics_path)
    return report


def _build_report(run, per_corruption, degenerate, changed, norm_names, iterations, fires) -> dict:
    by_cat: dict[str, list[float]] = {}
    for spec in run.stream:
        by_cat.setdefault(category_of(spec.kind), []).append(per_corruption[spec.name])
    return {
        "method": run.method.value,
        "mode": run.mode.value,
        "task": run.task,
        "metric": "miou" if run.task == "seg" else "abs_rel",
        "k": run.k,
        "learning_rate": run.learning_rate,
        "stream": [s.name for s in run.stream],
        "per_corruption": per_corruption,
        "category_averages": {c: float(np.mean(by_cat[c])) for c in CATEGORIES if c in by_cat},
        "overall_average": float(np.mean(list(per_corruption.values()))),
        "iterations": iterations,
        "supervision_fires": fires,
        "param_audit": {
            "changed": sorted(changed),
            "unchanged": not changed,
            "only_norm_affine": changed <= norm_names,
        },
        "degenerate": degenerate,
    }


def compare_modes(run: AdaptationRun, models: AdaptationModels, dataset, guidance=None, focus_cache=None) -> dict:
    """Episodic and continual reports plus the forgetting gap (positive = continual is worse)."""
    reports = {}
    for mode in Mode:
        r = copy.copy(run)
        r.mode = mode
        r.metrics_path = None
        reports[mode.value] = run_adaptation(r, models, dataset, guidance, focus_cache)
    epi, cont = reports["episodic"]["overall_average"], reports["continual"]["overall_average"]
    gap = epi - cont if run.task == "seg" else cont - epi
    out = {**reports, "forgetting_gap": gap}
    if run.metrics_path:
        io.write_json(out, run.metrics_path)
    return out
