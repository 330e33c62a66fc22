"""Command-line entry point: ``focus-tta <command> [options]``."""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, io, spectral
from .config import RunConfig, load_config
from .diffusion import DiffusionSchedule, PriorMode, StepPolicy, guided_denoise, sample_unguided
from .freqaug import AUGMENTATIONS, MixConfig, frequency_mix, make_augmentation
from .neural.train import build_and_train_auxiliaries, evaluate_yfpn, train_yfpn
from .tta.corruptions import CorruptionKind, CorruptionSpec, corrupt_batch
from .tta.runner import AdaptationModels, FocusCache, Method, Mode, compare_modes, run_adaptation

log = logging.getLogger("focus_tta")

SWEEP_PARAMS = ("lambda2", "w", "nsteps", "perturbations")


def fft_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Centered log-magnitude of the spectrum difference, averaged over channels and scaled to [0, 1]."""
    diff = np.abs(spectral.fft2(a) - spectral.fft2(b)).mean(axis=-1)
    mag = np.log1p(spectral.center_shift(diff))
    top = mag.max()
    return mag / top if top > 0 else mag


def _load_data(path, n: int = 0):
    ds = data.load_dataset(path, verify=True)
    return ds.subset(slice(0, n)) if n else ds


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _echo_config(cfg: RunConfig, out_dir) -> None:
    io.write_json(cfg.to_dict(), Path(out_dir) / "config.json")


def cmd_gen_data(args, cfg):
    manifest = data.generate_shapes_dataset(args.n, args.seed or 0, args.out)
    print(f"wrote {manifest['n']} samples to {args.out} (both classes in {manifest['both_classes_fraction']:.1%})")


def cmd_train_yfpn(args, cfg):
    ds = _load_data(args.data)
    if args.steps is not None:
        cfg.train.steps = args.steps
    model, trace = train_yfpn(ds.images, cfg.train, cfg.mix, log_every=args.log_every)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(model, out, {"config": cfg.to_dict()["train"], "final_loss": trace[-1] if trace else None})
    io.write_json({"loss": trace}, out.with_suffix(".trace.json"))
    print(f"saved {out}")


def cmd_train_aux(args, cfg):
    ds = _load_data(args.data)
    if args.steps_scale != 1.0:
        cfg.aux.denoiser_steps = int(cfg.aux.denoiser_steps * args.steps_scale)
        cfg.aux.task_steps = int(cfg.aux.task_steps * args.steps_scale)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trained = build_and_train_auxiliaries(ds, cfg.aux, log_every=args.log_every)
    for name in ("denoiser", "segmenter", "depth_net"):
        io.save_checkpoint(trained[name], out / f"{name}.fock", {"config": cfg.to_dict()["aux"]})
    io.write_json(trained["traces"], out / "traces.json")
    _echo_config(cfg, out)
    print(f"saved denoiser, segmenter and depth_net to {out}")


def cmd_augment(args, cfg):
    images = np.stack([io.load_png(args.image)]) if args.image else _load_data(args.data, args.n).images
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    op = None if args.op == "mix" else make_augmentation(args.op, cfg.mix)
    for i, img in enumerate(images):
        rng = np.random.default_rng([cfg.mix.rng_seed, i])
        aug = frequency_mix(img, cfg.mix, rng) if op is None else op(img, rng)
        io.save_png(aug, out / f"{i:05d}_{args.op}.png")
        io.save_png(fft_difference(aug, img), out / f"{i:05d}_{args.op}_fftdiff.png")
    _echo_config(cfg, out)
    print(f"wrote {len(images)} augmented images to {out}")


def cmd_corrupt(args, cfg):
    ds = _load_data(args.data, args.n)
    kinds = args.kinds.split(",") if args.kinds else list(cfg.adapt.corruptions)
    for kind in kinds:
        spec = CorruptionSpec(kind, args.severity or cfg.adapt.severity, cfg.adapt.corruption_seed)
        corrupted = data.ShapesDataset(corrupt_batch(ds.images, spec), ds.masks, ds.depths)
        data.write_dataset(corrupted, Path(args.out) / spec.kind.value, corruption=spec.name, seed=spec.seed)
        print(f"wrote {spec.name} to {Path(args.out) / spec.kind.value}")


def _guidance(args, cfg):
    g = copy.copy(cfg.guidance)
    for key in ("w", "nsteps"):
        if getattr(args, key, None) is not None:
            setattr(g, key, getattr(args, key))
    if getattr(args, "prior", None):
        g.prior_mode = PriorMode(args.prior)
    if getattr(args, "policy", None):
        g.step_policy = StepPolicy(args.policy)
    g.__post_init__()
    return g


def cmd_denoise(args, cfg):
    g = _guidance(args, cfg)
    if g.prior_mode is PriorMode.LEARNED and not args.yfpn and not args.unguided:
        raise UsageError("--prior learned needs --yfpn")
    ds = _load_data(args.data, args.n)
    denoiser = io.load_checkpoint(args.denoiser)
    yfpn = io.load_checkpoint(args.yfpn) if args.yfpn else None
    sched = DiffusionSchedule()
    seeds = [[g.seed, i] for i in range(len(ds))]
    if args.unguided:
        out = sample_unguided(ds.images, denoiser, g.nsteps, sched, g.step_policy, seeds=seeds)
    else:
        out = guided_denoise(ds.images, yfpn, denoiser, g, sched, seeds=seeds)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    np.save(dest / "denoised.npy", out)
    for i, img in enumerate(out):
        io.save_png(img, dest / f"{i:05d}_denoised.png")
    _echo_config(cfg, dest)
    print(f"wrote {len(out)} denoised images to {dest}")


def _models(args, task: str, method: Method) -> AdaptationModels:
    task_ckpt = args.segmenter if task == "seg" else args.depth_net
    if not task_ckpt:
        raise UsageError(f"task {task!r} needs --{'segmenter' if task == 'seg' else 'depth-net'}")
    needs_focus = method is Method.FOCUS or method.uses_pseudo
    if needs_focus and not args.denoiser:
        raise UsageError(f"method {method.value!r} needs --denoiser")
    return AdaptationModels(
        io.load_checkpoint(task_ckpt),
        io.load_checkpoint(args.denoiser) if args.denoiser else None,
        io.load_checkpoint(args.yfpn) if args.yfpn else None,
    )


def _apply_adapt_flags(args, cfg) -> None:
    for key in ("method", "mode", "k", "task", "learning_rate"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg.adapt, key, val)
    cfg.adapt.__post_init__()


def _check_learned(g, models) -> None:
    if g.prior_mode is PriorMode.LEARNED and models.yfpn is None:
        raise UsageError("learned prior needs --yfpn")


def cmd_adapt(args, cfg):
    _apply_adapt_flags(args, cfg)
    g = _guidance(args, cfg)
    run = cfg.adapt.to_run(args.out)
    models = _models(args, run.task, run.method)
    if run.method is Method.FOCUS or run.method.uses_pseudo:
        _check_learned(g, models)
    ds = _load_data(args.data, cfg.adapt.n_images)
    if args.compare:
        report = compare_modes(run, models, ds, g)
        print(f"forgetting gap {report['forgetting_gap']:+.4f}")
    else:
        report = run_adaptation(run, models, ds, g)
        print(f"{report['metric']} overall {report['overall_average']:.4f}")
    print(f"wrote {args.out}")


def _parse_values(param: str, raw: str) -> list:
    if param == "perturbations":
        subsets = [tuple(s.split("+")) for s in raw.split(",")]
        for s in subsets:
            bad = set(s) - set(AUGMENTATIONS)
            if bad:
                raise UsageError(f"unknown perturbations {sorted(bad)}; choose from {AUGMENTATIONS}")
        return subsets
    if param == "nsteps":
        return [int(v) for v in raw.split(",")]
    return [float(v) for v in raw.split(",")]


def cmd_sweep(args, cfg):
    values = _parse_values(args.param, args.values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_data(args.data)
    if args.param in ("lambda2", "perturbations"):
        # training-side sweeps: one Y-FPN per value, scored on held-out FrequencyMix data
        held = ds.subset(slice(len(ds) - args.held_out, len(ds)))
        train = ds.subset(slice(0, len(ds) - args.held_out))
        for v in values:
            c = copy.deepcopy(cfg)
            if args.param == "lambda2":
                c.train.lambda2 = v
            else:
                c.mix = MixConfig(**{**c.to_dict()["mix"], "augmentations": v})
            model, trace = train_yfpn(train.images, c.train, c.mix)
            report = {"param": args.param, "value": list(v) if isinstance(v, tuple) else v,
                      "final_loss": trace[-1] if trace else None, **evaluate_yfpn(model, held.images, c.mix)}
            name = "+".join(v) if isinstance(v, tuple) else f"{v:g}"
            io.write_json(report, out / f"{args.param}_{name}.json")
            print(f"{args.param}={name}: gain {report['gain']:+.2f} dB")
    else:
        _apply_adapt_flags(args, cfg)
        if cfg.adapt.method == Method.FROZEN.value:
            cfg.adapt.method = Method.FOCUS.value
        run = cfg.adapt.to_run()
        models = _models(args, run.task, run.method)
        ds = ds.subset(slice(0, cfg.adapt.n_images)) if cfg.adapt.n_images else ds
        for v in values:
            setattr(args, args.param, v)
            g = _guidance(args, cfg)
            _check_learned(g, models)
            r = copy.copy(run)
            r.metrics_path = str(out / f"{args.param}_{v:g}.json")
            report = run_adaptation(r, models, ds, g, FocusCache(models, g))
            report.update({"param": args.param, "value": v})
            io.write_json(report, r.metrics_path)
            print(f"{args.param}={v:g}: {report['metric']} {report['overall_average']:.4f}")
    _echo_config(cfg, out)


def _report_rows(doc: dict, source: str) -> list[dict]:
    if "per_corruption" not in doc:
        if "episodic" in doc and "continual" in doc:
            rows = _report_rows(doc["episodic"], source) + _report_rows(doc["continual"], source)
            for r in rows:
                r["forgetting_gap"] = doc["forgetting_gap"]
            return rows
        return [{"source": source, **{k: v for k, v in doc.items() if not isinstance(v, (dict, list))}}]
    row = {"source": source}
    for key in ("param", "value", "method", "mode", "task", "metric", "k", "learning_rate",
                "overall_average", "iterations", "supervision_fires"):
        if key in doc:
            row[key] = doc[key]
    row.update({f"cat:{k}": v for k, v in doc["category_averages"].items()})
    row.update(doc["per_corruption"])
    row["only_norm_affine"] = doc["param_audit"]["only_norm_affine"]
    row["any_degenerate"] = any(doc["degenerate"].values())
    return [row]


def cmd_report(args, cfg):
    rows = []
    for path in args.inputs:
        rows.extend(_report_rows(io.read_json(path), str(path)))
    if not rows:
        raise UsageError("no reports given")
    io.write_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    common.add_argument("--config", type=Path, default=None, help="JSON run config; missing keys use defaults")
    common.add_argument("--log-every", type=int, default=0)

    p = argparse.ArgumentParser(prog="focus-tta", description="Frequency-guided diffusion denoising for test-time adaptation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate the synthetic shapes dataset")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-yfpn", parents=[common], help="train the kernel prediction network on FrequencyMix data")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_train_yfpn)

    s = sub.add_parser("train-aux", parents=[common], help="train the denoiser, segmenter and depth network")
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--steps-scale", type=float, default=1.0, help="multiply all step counts")
    s.set_defaults(func=cmd_train_aux)

    s = sub.add_parser("augment", parents=[common], help="apply FrequencyMix or one perturbation and dump FFT differences")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--image")
    s.add_argument("--op", choices=("mix", *AUGMENTATIONS), default="mix")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("corrupt", parents=[common], help="write corrupted copies of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kinds", help=f"comma list from {[k.value for k in CorruptionKind]}")
    s.add_argument("--severity", type=int, choices=range(1, 6))
    s.add_argument("--n", type=int, default=0)
    s.set_defaults(func=cmd_corrupt)

    def sampling_flags(s):
        s.add_argument("--w", type=float)
        s.add_argument("--nsteps", type=int)
        s.add_argument("--prior", choices=[m.value for m in PriorMode])
        s.add_argument("--policy", choices=[m.value for m in StepPolicy])
        s.add_argument("--denoiser")
        s.add_argument("--yfpn")

    s = sub.add_parser("denoise", parents=[common], help="guided diffusion denoising of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=0)
    s.add_argument("--unguided", action="store_true", help="plain ancestral sampling, no guidance")
    sampling_flags(s)
    s.set_defaults(func=cmd_denoise)

    def adapt_flags(s):
        s.add_argument("--method", choices=[m.value for m in Method])
        s.add_argument("--mode", choices=[m.value for m in Mode])
        s.add_argument("--k", type=int)
        s.add_argument("--task", choices=("seg", "depth"))
        s.add_argument("--learning-rate", type=float)
        s.add_argument("--segmenter")
        s.add_argument("--depth-net")
        sampling_flags(s)

    s = sub.add_parser("adapt", parents=[common], help="run test-time adaptation over a corruption stream")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--compare", action="store_true", help="run both modes and report the forgetting gap")
    adapt_flags(s)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("sweep", parents=[common], help="grid over one hyperparameter")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    s.add_argument("--values", required=True, help="comma list; perturbation subsets join names with '+'")
    s.add_argument("--held-out", type=int, default=100)
    adapt_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="merge metrics reports into a CSV")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.log_every else logging.WARNING, format="%(message)s")
    try:
        args.func(args, _config(args))
    except (UsageError, ValueError) as exc:
        parser.error(str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
