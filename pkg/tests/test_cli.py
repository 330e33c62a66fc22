import csv
import json

import numpy as np
import pytest

from focus_tta import io
from focus_tta.cli import fft_difference, main
from focus_tta.neural.models import YFPN, EpsDenoiser, TaskNet


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    main(["gen-data", "--n", "4", "--out", str(root / "data"), "--seed", "1"])
    for name, model in {
        "den": EpsDenoiser(depth=1, base_width=4),
        "seg": TaskNet("seg", depth=1, base_width=4),
        "depth": TaskNet("depth", depth=1, base_width=4),
        "yfpn": YFPN(depth=1, base_width=4),
    }.items():
        io.save_checkpoint(model, root / f"{name}.fock")
    cfg = {
        "guidance": {"nsteps": 3},
        "adapt": {"n_images": 3, "corruptions": ["gaussian_noise", "fog"]},
        "train": {"steps": 3, "batch_size": 2, "depth": 1, "base_width": 4},
        "aux": {"denoiser_steps": 2, "task_steps": 2, "denoiser_width": 4, "task_width": 4,
                "batch_size": 2, "denoiser_batch_size": 2},
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def run(ws, *argv):
    return main([*argv, "--config", str(ws / "cfg.json")])


def test_gen_data_deterministic(workspace, tmp_path):
    main(["gen-data", "--n", "4", "--out", str(tmp_path / "again"), "--seed", "1"])
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (workspace / "data" / "manifest.json").read_bytes()


def test_denoise_zero_guidance_equals_unguided(workspace, tmp_path):
    common = ["--data", str(workspace / "data"), "--denoiser", str(workspace / "den.fock"), "--seed", "3"]
    run(workspace, "denoise", *common, "--out", str(tmp_path / "a"), "--w", "0", "--prior", "none")
    run(workspace, "denoise", *common, "--out", str(tmp_path / "b"), "--unguided")
    a, b = np.load(tmp_path / "a" / "denoised.npy"), np.load(tmp_path / "b" / "denoised.npy")
    assert a.shape == (4, 32, 32, 3) and np.array_equal(a, b)
    assert (tmp_path / "a" / "00003_denoised.png").exists()
    run(workspace, "denoise", *common, "--out", str(tmp_path / "c"), "--w", "0", "--prior", "none")
    assert np.array_equal(a, np.load(tmp_path / "c" / "denoised.npy"))


def test_adapt_frozen_modes_agree(workspace, tmp_path):
    common = ["--data", str(workspace / "data"), "--segmenter", str(workspace / "seg.fock"), "--method", "frozen"]
    run(workspace, "adapt", *common, "--mode", "episodic", "--out", str(tmp_path / "e.json"))
    run(workspace, "adapt", *common, "--mode", "continual", "--out", str(tmp_path / "c.json"))
    e, c = io.read_json(tmp_path / "e.json"), io.read_json(tmp_path / "c.json")
    assert e["per_corruption"] == c["per_corruption"] and e["mode"] == "episodic" and c["mode"] == "continual"
    assert e["stream"] == ["gaussian_noise@5", "fog@5"] and set(e["per_corruption"]) == set(e["stream"])


def test_adapt_compare_and_depth(workspace, tmp_path):
    run(workspace, "adapt", "--data", str(workspace / "data"), "--depth-net", str(workspace / "depth.fock"),
        "--task", "depth", "--method", "tent", "--compare", "--out", str(tmp_path / "cmp.json"))
    doc = io.read_json(tmp_path / "cmp.json")
    assert set(doc) == {"episodic", "continual", "forgetting_gap"} and doc["episodic"]["metric"] == "abs_rel"


def test_sweep_w_emits_one_report_per_value_and_report_csv(workspace, tmp_path):
    run(workspace, "sweep", "--data", str(workspace / "data"), "--param", "w", "--values", "0.5,1,2,4",
        "--segmenter", str(workspace / "seg.fock"), "--denoiser", str(workspace / "den.fock"),
        "--yfpn", str(workspace / "yfpn.fock"), "--out", str(tmp_path / "sw"))
    reports = sorted((tmp_path / "sw").glob("w_*.json"))
    assert [p.name for p in reports] == ["w_0.5.json", "w_1.json", "w_2.json", "w_4.json"]
    assert all(io.read_json(p)["method"] == "focus" for p in reports)
    run(workspace, "report", *map(str, reports), "--out", str(tmp_path / "r.csv"))
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["value"]) for r in rows] == [0.5, 1, 2, 4]
    assert "gaussian_noise@5" in rows[0] and "cat:noise" in rows[0]


def test_sweep_lambda2_trains_per_value(workspace, tmp_path):
    run(workspace, "sweep", "--data", str(workspace / "data"), "--param", "lambda2", "--values", "0,0.2",
        "--held-out", "2", "--out", str(tmp_path / "sw"))
    docs = [io.read_json(tmp_path / "sw" / f"lambda2_{v}.json") for v in ("0", "0.2")]
    assert all(set(d) >= {"psnr_input", "psnr_output", "gain"} for d in docs)


def test_train_commands_reproducible(workspace, tmp_path):
    for out in ("a", "b"):
        run(workspace, "train-yfpn", "--data", str(workspace / "data"), "--out", str(tmp_path / out / "y.fock"))
    ta = io.read_json(tmp_path / "a" / "y.trace.json")
    assert len(ta["loss"]) == 3 and ta == io.read_json(tmp_path / "b" / "y.trace.json")
    assert (tmp_path / "a" / "y.fock").read_bytes() == (tmp_path / "b" / "y.fock").read_bytes()
    run(workspace, "train-aux", "--data", str(workspace / "data"), "--out-dir", str(tmp_path / "aux"))
    for name in ("denoiser", "segmenter", "depth_net"):
        assert io.load_checkpoint(tmp_path / "aux" / f"{name}.fock") is not None


def test_augment_and_corrupt(workspace, tmp_path):
    run(workspace, "augment", "--data", str(workspace / "data"), "--n", "2", "--out", str(tmp_path / "aug"))
    assert (tmp_path / "aug" / "00001_mix_fftdiff.png").exists()
    run(workspace, "augment", "--data", str(workspace / "data"), "--op", "high", "--n", "1", "--out", str(tmp_path / "h"))
    assert (tmp_path / "h" / "00000_high.png").exists()
    run(workspace, "corrupt", "--data", str(workspace / "data"), "--kinds", "fog,pixelate", "--severity", "2",
        "--out", str(tmp_path / "cor"))
    assert io.read_json(tmp_path / "cor" / "fog" / "manifest.json")["corruption"] == "fog@2"
    assert (tmp_path / "cor" / "pixelate" / "00003_img.png").exists()


def test_fft_difference_range():
    rng = np.random.default_rng(0)
    a = rng.random((8, 8, 3))
    d = fft_difference(a, a * 0.5)
    assert d.shape == (8, 8) and d.max() == pytest.approx(1.0) and d.min() >= 0
    assert np.all(fft_difference(a, a) == 0)


@pytest.mark.parametrize(
    "argv",
    [
        ["denoise", "--prior", "learned"],
        ["denoise", "--prior", "sharp"],
        ["corrupt", "--severity", "9"],
        ["corrupt", "--kinds", "snow"],
        ["adapt", "--method", "focus"],
        ["adapt", "--method", "tent"],
        ["adapt", "--method", "tent", "--k", "-1"],
        ["sweep", "--param", "perturbations", "--values", "high+bogus"],
        ["sweep", "--param", "beta"],
        ["augment", "--image", "x.png", "--data", "d"],
    ],
)
def test_invalid_invocations_exit_with_usage(workspace, tmp_path, argv, capsys):
    if argv[0] in ("denoise", "adapt"):
        argv = argv + ["--data", str(workspace / "data"), "--denoiser" if argv[0] == "denoise" else "--out",
                       str(workspace / "den.fock") if argv[0] == "denoise" else str(tmp_path / "m.json")]
        if argv[0] == "denoise":
            argv += ["--out", str(tmp_path / "o")]
        if "focus" in argv:
            argv += ["--segmenter", str(workspace / "seg.fock")]
    elif argv[0] in ("corrupt", "sweep"):
        argv = argv + ["--data", str(workspace / "data"), "--out", str(tmp_path / "o")]
        if argv[0] == "sweep" and "--values" not in argv:
            argv += ["--values", "1"]
    elif argv[0] == "augment":
        argv = argv + ["--out", str(tmp_path / "o")]
    with pytest.raises(SystemExit) as exc:
        run(workspace, *argv)
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err
