"""Classification mAP, segmentation mIoU and seed-mask extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError


@dataclass
class EvalReport:
    map: float
    per_class_ap: np.ndarray
    miou: float
    per_class_iou: np.ndarray
    excluded_classes: list = field(default_factory=list)
    loss_curves: dict = field(default_factory=dict)

    def to_text(self, class_names=None):
        """Stable key-value report followed by a per-class table."""
        k = len(self.per_class_iou)
        names = list(class_names or [f"class{i}" for i in range(k - 1)]) + ["background"]
        lines = [f"map={self.map:.6f}", f"miou={self.miou:.6f}"]
        if self.excluded_classes:
            lines.append("excluded_ap=" + ",".join(names[i] for i in self.excluded_classes))
        lines.append("")
        lines.append(f"{'class':<12} {'ap':>10} {'iou':>10}")
        for i in range(k):
            ap = self.per_class_ap[i] if i < len(self.per_class_ap) else float("nan")
            lines.append(f"{names[i]:<12} {_fmt(ap):>10} {_fmt(self.per_class_iou[i]):>10}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "-" if not np.isfinite(v) else f"{v:.6f}"


def average_precision(scores, labels):
    """AP of one class: mean precision at each positive in the score ranking.

    Equal scores keep their input order. Returns NaN without positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if not labels.any():
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean())


def evaluate_map(scores, labels):
    """Per-class AP over the dataset and their mean.

    Returns ``(map, per_class_ap, excluded)`` where classes without any
    positive are listed in ``excluded`` and left out of the mean.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError(f"scores {scores.shape} vs labels {labels.shape}")
    ap = np.array([average_precision(scores[:, c], labels[:, c]) for c in range(scores.shape[1])])
    excluded = [int(c) for c in np.flatnonzero(np.isnan(ap))]
    valid = ap[~np.isnan(ap)]
    return (float(valid.mean()) if valid.size else float("nan")), ap, excluded


def confusion(pred, gt, num_classes):
    """(K, K) counts with rows = ground truth, columns = prediction."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(conf):
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    valid = iou[~np.isnan(iou)]
    return (float(valid.mean()) if valid.size else float("nan")), iou


def evaluate_miou(pred_masks, gt_masks, num_classes):
    """Global-confusion IoU per class and their mean over non-empty classes."""
    return iou_from_confusion(confusion(pred_masks, gt_masks, num_classes))


def nearest_upsample(labels, height, width):
    """Nearest-neighbour resize of integer maps over the last two axes."""
    h, w = labels.shape[-2:]
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
    return labels[..., rows[:, None], cols[None, :]]


def seed_mask_from_cams(maps, height, width):
    """Per-token argmax over the (C+1) channels, upsampled to ``height`` x ``width``.

    ``maps`` is (K, P, P) or (B, K, P, P); channel axis is -3.
    """
    maps = np.asarray(getattr(maps, "data", maps))
    labels = maps.argmax(axis=-3)
    return nearest_upsample(labels, height, width).astype(np.uint8)
