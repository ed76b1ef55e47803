"""Training objectives: classification, seed consistency, class-wise contrast."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, NumericError
from .tensor import Tensor

SCORE_CLAMP = 1e-7
CCL_WEIGHT = 2.0 / 3.0


@dataclass
class LossBundle:
    cls: Tensor
    gsc: Tensor
    ccl: Tensor
    total: Tensor

    def as_floats(self):
        return {k: float(getattr(self, k).data) for k in ("cls", "gsc", "ccl", "total")}


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def cls_loss(scores, labels):
    """Multi-label binary cross-entropy on probabilities, averaged over classes.

    ``scores`` and ``labels`` are (C,) or (B, C); the batch is averaged.
    """
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError(f"scores {scores.shape} vs labels {labels.shape}")
    s = T.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    y = Tensor(labels.astype(scores.dtype))
    ll = y * T.log(s) + (1.0 - y) * T.log(1.0 - s)
    return -T.mean(ll)


def gsc_loss(cam, rcam):
    """Mean absolute difference between two (…, C+1, P, P) map stacks."""
    _check_same(cam, rcam, "gsc_loss")
    return T.mean(T.absolute(cam - rcam))


def class_cosine(cam, rcam):
    """Cosine between flattened spatial maps of each class, (…, C+1)."""
    _check_same(cam, rcam, "ccl_loss")
    lead = cam.shape[:-2]
    a = T.l2_normalize(cam.reshape(lead + (-1,)), axis=-1)
    b = T.l2_normalize(rcam.reshape(lead + (-1,)), axis=-1)
    return T.sum_(a * b, axis=-1)


def ccl_from_cosine(cs):
    """Per-class contrastive penalty ``0.5 * ((2/3 cs)^2 + (1 - cs)^2)``."""
    scaled = cs * CCL_WEIGHT
    return 0.5 * (scaled * scaled + (1.0 - cs) * (1.0 - cs))


def ccl_loss(cam, rcam):
    return T.mean(ccl_from_cosine(class_cosine(cam, rcam)))


def total_loss(cls, gsc=None, ccl=None):
    """Unweighted sum of the components; missing components count as zero."""
    parts = {}
    for name, value in (("cls", cls), ("gsc", gsc), ("ccl", ccl)):
        if value is None:
            value = Tensor(np.zeros((), dtype=np.float32))
        elif not isinstance(value, Tensor):
            value = Tensor(np.asarray(value, dtype=np.float64))
        if not math.isfinite(float(value.data)):
            raise NumericError(f"{name} loss is not finite", component=name)
        parts[name] = value
    total = parts["cls"] + parts["gsc"] + parts["ccl"]
    return LossBundle(parts["cls"], parts["gsc"], parts["ccl"], total)
