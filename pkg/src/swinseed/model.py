"""Parameter construction and the full forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cam import class_scores, compute_fout, init_cam_params, normalize_cam
from .encoder import encode, init_encoder_params
from .fusion import fuse_stages, init_hff_params
from .refine import background_map, build_prototypes, locate_seeds, refine_cam, token_affinity
from .tensor import Tensor


def init_params(cfg, refine=True):
    """All trainable tensors for ``cfg``; fusion tensors only when ``refine``."""
    rng = np.random.default_rng(cfg.seed)
    params = init_encoder_params(cfg, rng)
    params.update(init_cam_params(cfg, rng))
    if refine:
        params.update(init_hff_params(cfg, rng))
    return params


def has_refinement(params):
    return any(name.startswith("hff.") for name in params)


def cast_params(params, dtype):
    return {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in params.items()}


def count_params(params, prefix=""):
    return int(sum(v.size for k, v in params.items() if k.startswith(prefix)))


@dataclass
class ForwardOutput:
    stages: list
    f_out: Tensor
    logits: Tensor
    scores: Tensor
    c_out: Tensor
    cam: Tensor  # C_out with the background channel appended
    f_hie: Tensor = None
    affinity: Tensor = None
    seeds: object = None
    prototypes: object = None
    rcam: Tensor = None

    @property
    def seed_maps(self):
        """(C+1)-channel maps that define the seed mask."""
        return self.rcam if self.rcam is not None else self.cam


def forward(params, images, cfg, refine=None, labels=None):
    """Run the pipeline on a (B, 3, H, W) batch.

    ``refine`` defaults to whether ``params`` holds fusion tensors. Without
    refinement only the CAM branch is evaluated. When image ``labels``
    (B, C) are given, activation maps of absent classes are zeroed before
    the background channel is formed.
    """
    if refine is None:
        refine = has_refinement(params)
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
    stages = encode(x, params, cfg)
    f_out = compute_fout(stages[-1], params["cam.weight"])
    logits, scores = class_scores(f_out)
    c_out = normalize_cam(f_out)
    if labels is not None:
        c_out = c_out * Tensor(np.asarray(labels, dtype=c_out.dtype)[:, :, None, None])
    cam = background_map(c_out)
    out = ForwardOutput(stages, f_out, logits, scores, c_out, cam)
    if not refine:
        return out
    out.f_hie = fuse_stages(stages, params, cfg).values
    out.affinity = token_affinity(stages[-1])
    out.seeds = locate_seeds(out.affinity, cam)
    out.prototypes = build_prototypes(out.seeds, out.f_hie)
    out.rcam = refine_cam(out.prototypes, out.f_hie)
    return out


def predict_maps(params, images, cfg, batch_size=16, labels=None):
    """Inference helper: (scores, seed maps) as numpy arrays."""
    images = np.asarray(images)
    scores, maps = [], []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            gate = None if labels is None else labels[start : start + batch_size]
            out = forward(params, images[start : start + batch_size], cfg, labels=gate)
            scores.append(out.scores.data)
            maps.append(out.seed_maps.data)
    return np.concatenate(scores), np.concatenate(maps)
