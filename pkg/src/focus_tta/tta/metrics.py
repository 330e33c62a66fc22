"""Segmentation mIoU and depth AbsRel."""

from __future__ import annotations

import math

import numpy as np


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth sizes differ")
    if gt.min() < 0 or gt.max() >= n_classes or pred.min() < 0 or pred.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return np.bincount(gt * n_classes + pred, minlength=n_classes**2).reshape(n_classes, n_classes)


def miou_from_confusion(conf: np.ndarray) -> float:
    """Mean IoU over classes that occur in the ground truth (rows with support)."""
    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1)
    union = support + conf.sum(axis=0) - tp
    present = support > 0
    if not present.any():
        raise ValueError("ground truth contains no labelled pixels")
    return float(np.mean(tp[present] / union[present]))


def miou(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> float:
    return miou_from_confusion(confusion_matrix(pred, gt, n_classes))


class ConfusionAccumulator:
    """Dataset-level mIoU: sum confusion matrices, then take the ratio."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.conf = np.zeros((n_classes, n_classes), dtype=np.int64)

    def update(self, pred, gt) -> None:
        self.conf += confusion_matrix(pred, gt, self.n_classes)

    def value(self) -> float:
        return miou_from_confusion(self.conf)


def abs_rel(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean |pred - gt| / gt over pixels with positive ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    valid = gt > 0
    if not valid.any():
        raise ValueError("no pixels with positive ground truth depth")
    return float(np.mean(np.abs(pred[valid] - gt[valid]) / gt[valid]))


def psnr(pred: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give inf."""
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(ref, dtype=np.float64)) ** 2))
    return math.inf if mse == 0 else 10 * math.log10(peak**2 / mse)

