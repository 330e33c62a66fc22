"""Persistence: FOCK1 checkpoints, PNG images/masks/depth maps, JSON and CSV."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .neural.models import build_model

MAGIC = b"FOCK1"
DEPTH_SCALE = 1000.0  # 16-bit depth PNG stores round(depth * DEPTH_SCALE)
MASK_PALETTE = [0, 0, 0, 230, 60, 60, 60, 120, 230] + [0] * (256 * 3 - 9)


def save_checkpoint(model: torch.nn.Module, path, meta: dict | None = None) -> None:
    """Layout: magic, uint32 LE header length, JSON header, float32 LE parameters."""
    state = model.state_dict()
    header = {
        "descriptor": model.descriptor,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a FOCK1 checkpoint")
    off = len(MAGIC)
    (n,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    header = json.loads(data[off : off + n])
    off += n
    arrays = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        off += 4 * count
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return header, arrays


def load_checkpoint(path) -> torch.nn.Module:
    header, arrays = read_checkpoint(path)
    model = build_model(header["descriptor"])
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    model.meta = header["meta"]
    return model


def save_png(img: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    PILImage.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(mask: np.ndarray, path) -> None:
    im = PILImage.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    im.putpalette(MASK_PALETTE)
    im.save(path)


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im, dtype=np.int64)


def save_depth(depth: np.ndarray, path) -> None:
    vals = np.round(np.asarray(depth) * DEPTH_SCALE)
    if vals.min() < 0 or vals.max() > 65535:
        raise ValueError("depth out of the 16-bit encodable range")
    PILImage.fromarray(vals.astype(np.uint16)).save(path)


def load_depth(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im, dtype=np.float64) / DEPTH_SCALE


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(rows: list[dict], path) -> None:
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
