"""Class activation maps and class scores from output patch tokens."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError
from .tensor import Tensor

CAM_EPS = 1e-5


class ClassScores(NamedTuple):
    logits: Tensor
    scores: Tensor


def init_cam_params(cfg, rng):
    from .encoder import trunc_normal

    weight = trunc_normal(rng, (cfg.num_classes, cfg.final_dim, 1, 1))
    return {"cam.weight": Tensor(weight, requires_grad=True)}


def compute_fout(t_out, weight):
    """Raw per-class maps: a bias-free 1x1 convolution over the output tokens.

    ``t_out`` is a TokenGrid or a (B, 8D, P, P) Tensor; result is (B, C, P, P).
    """
    values = getattr(t_out, "values", t_out)
    if values.shape[-3] != weight.shape[1]:
        raise ConfigurationError(
            f"CAM head expects {weight.shape[1]} token channels, got {values.shape[-3]}"
        )
    return T.conv2d(values, weight)


def class_scores(f_out):
    """Global average pooling to logits, then a per-class sigmoid."""
    logits = T.mean(f_out, axis=(-2, -1))
    return ClassScores(logits, T.sigmoid(logits))


def max_normalize(x, eps=CAM_EPS):
    """relu(x) / (spatial max of relu(x) + eps), per channel."""
    r = T.relu(x)
    peak = T.max_(r, axis=(-2, -1), keepdims=True)
    return r / (peak + eps)


def normalize_cam(f_out, eps=CAM_EPS):
    """Normalized maps in [0, 1]; channels without positive evidence become 0."""
    return max_normalize(f_out, eps)


def upsample_cam(c_out, height, width):
    """Bilinear upsampling of normalized maps to image resolution."""
    return T.bilinear_resize(c_out, height, width)


def is_normalized(values, tol=1e-4):
    """True when each channel lies in [0, 1] and peaks at ~1 or is all zero."""
    v = np.asarray(getattr(values, "data", values))
    if v.min() < 0 or v.max() > 1:
        return False
    peaks = v.reshape(v.shape[:-2] + (-1,)).max(axis=-1)
    return bool(np.all((peaks == 0) | (peaks >= 1 - tol)))
