"""Synthetic shapes corpus with segmentation masks and depth maps.

Each 32x32 sample holds one circle and one rectangle (plus an optional extra
shape) over a smooth background. Depth is cued by layout: nearer shapes sit
lower in the frame and are drawn larger; the background is the far plane.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io

BACKGROUND, CIRCLE, RECTANGLE = 0, 1, 2
N_CLASSES = 3
FAR_PLANE = 3.0
NEAR, FAR = 0.7, 2.6
IMAGE_SIZE = 32


@dataclass
class ShapesDataset:
    images: np.ndarray  # (N, H, W, 3) float64 in [0, 1]
    masks: np.ndarray  # (N, H, W) int64
    depths: np.ndarray  # (N, H, W) float64

    def __len__(self):
        return len(self.images)

    def subset(self, idx) -> "ShapesDataset":
        return ShapesDataset(self.images[idx], self.masks[idx], self.depths[idx])


def _color(rng, avoid, min_dist=0.35):
    for _ in range(100):
        c = rng.uniform(0.05, 0.95, size=3)
        if all(np.linalg.norm(c - a) >= min_dist for a in avoid):
            return c
    return c


def _draw_one(rng: np.random.Generator, size: int):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    bg = _color(rng, [])
    grad = rng.uniform(-0.15, 0.15, size=2)
    img = bg + grad[0] * (yy / size - 0.5)[..., None] + grad[1] * (xx / size - 0.5)[..., None]
    mask = np.zeros((size, size), dtype=np.int64)
    depth = np.full((size, size), FAR_PLANE)

    kinds = [CIRCLE, RECTANGLE]
    if rng.random() < 0.3:
        kinds.append(int(rng.choice([CIRCLE, RECTANGLE])))
    depths = rng.uniform(NEAR, FAR, size=len(kinds))
    colors = []
    # painter's order: farthest first
    for i in np.argsort(-depths):
        kind, d = kinds[i], depths[i]
        closeness = (FAR - d) / (FAR - NEAR)
        cy = size * (0.3 + 0.5 * closeness) + rng.uniform(-2, 2)
        cx = rng.uniform(0.2, 0.8) * size
        extent = 6.5 / d + rng.uniform(-0.5, 0.5)
        if kind == CIRCLE:
            region = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent**2
        else:
            ratio = rng.uniform(0.6, 1.4)
            hy, hx = extent * np.sqrt(ratio) * 0.9, extent / np.sqrt(ratio) * 0.9
            region = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        col = _color(rng, [bg, *colors])
        colors.append(col)
        img[region] = col
        mask[region] = kind
        depth[region] = d
    return np.clip(img, 0, 1), mask, depth


def generate_sample(rng: np.random.Generator, size: int = IMAGE_SIZE):
    """Draw until both shape classes are visible (occlusion can hide one)."""
    while True:
        img, mask, depth = _draw_one(rng, size)
        if (mask == CIRCLE).any() and (mask == RECTANGLE).any():
            return img, mask, depth


def generate_shapes(n: int, seed: int, size: int = IMAGE_SIZE) -> ShapesDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    imgs, masks, depths = [], [], []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        img, mask, depth = generate_sample(rng, size)
        # quantize exactly as the PNG round trip would
        imgs.append(np.round(img * 255) / 255)
        masks.append(mask)
        depths.append(np.round(depth * io.DEPTH_SCALE) / io.DEPTH_SCALE)
    return ShapesDataset(np.stack(imgs), np.stack(masks), np.stack(depths))


def write_dataset(ds: ShapesDataset, out_dir, **extra) -> dict:
    """Write PNG images, palette masks, 16-bit depth maps and a JSON manifest with hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(len(ds)):
        stem = f"{i:05d}"
        entry = {"image": f"{stem}_img.png", "mask": f"{stem}_mask.png", "depth": f"{stem}_depth.png"}
        io.save_png(ds.images[i], out / entry["image"])
        io.save_mask(ds.masks[i], out / entry["mask"])
        io.save_depth(ds.depths[i], out / entry["depth"])
        entry["sha256"] = {k: io.sha256_file(out / v) for k, v in entry.items()}
        files.append(entry)
    presence = [(m == CIRCLE).any() and (m == RECTANGLE).any() for m in ds.masks]
    manifest = {
        "n": len(ds),
        **extra,
        "size": int(ds.images.shape[1]),
        "classes": {"0": "background", "1": "circle", "2": "rectangle"},
        "depth_encoding": {"format": "png-uint16", "scale": io.DEPTH_SCALE, "far_plane": FAR_PLANE},
        "class_pixel_fraction": [float((ds.masks == c).mean()) for c in range(N_CLASSES)],
        "both_classes_fraction": float(np.mean(presence)),
        "files": files,
    }
    io.write_json(manifest, out / "manifest.json")
    return manifest


def generate_shapes_dataset(n: int, seed: int, out_dir) -> dict:
    return write_dataset(generate_shapes(n, seed), out_dir, seed=seed)


def verify_manifest(data_dir) -> dict:
    root = Path(data_dir)
    manifest = io.read_json(root / "manifest.json")
    for entry in manifest["files"]:
        for key, digest in entry["sha256"].items():
            if io.sha256_file(root / entry[key]) != digest:
                raise ValueError(f"integrity check failed for {entry[key]}")
    return manifest


def load_dataset(data_dir, verify: bool = True) -> ShapesDataset:
    root = Path(data_dir)
    manifest = verify_manifest(root) if verify else io.read_json(root / "manifest.json")
    files = manifest["files"]
    return ShapesDataset(
        np.stack([io.load_png(root / f["image"]) for f in files]),
        np.stack([io.load_mask(root / f["mask"]) for f in files]),
        np.stack([io.load_depth(root / f["depth"]) for f in files]),
    )


def reference_image() -> np.ndarray:
    """The bundled 32x32 RGB reference image (shapes sample, seed 0)."""
    from importlib.resources import files

    return io.load_png(files("focus_tta") / "assets" / "reference_32.png")
