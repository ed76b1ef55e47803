"""Background-aware seed locating and prototype refinement.

All maps live on the final token grid, shaped (B, K, P, P) with K = C + 1
once the background channel is appended as the last channel.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .cam import max_normalize
from .exceptions import DimensionError
from .tensor import Tensor

NORM_GUARD = 1e-8


class SeedMap(NamedTuple):
    """One-hot token assignment, (B, C+1, P, P); background is the last channel."""

    assignments: np.ndarray

    @property
    def labels(self):
        return self.assignments.argmax(axis=1)


class PrototypeSet(NamedTuple):
    vectors: Tensor  # (B, C+1, F)
    occupancy: np.ndarray  # (B, C+1) token counts

    @property
    def empty(self):
        return self.occupancy == 0


def _flat_tokens(x):
    # (B, F, P, P) -> (B, P*P, F)
    b, f = x.shape[:2]
    return x.reshape(b, f, -1).transpose(0, 2, 1)


def background_map(m):
    """Append ``1 - max_c M_c`` as the last channel of (B, C, P, P) maps."""
    peak = T.max_(m, axis=1, keepdims=True)
    return T.concat([m, 1.0 - peak], axis=1)


def token_affinity(t_out):
    """|cosine| similarity between all pairs of output tokens, (B, P*P, P*P)."""
    values = getattr(t_out, "values", t_out)
    unit = T.l2_normalize(_flat_tokens(values), axis=-1, eps=NORM_GUARD)
    sim = unit @ unit.transpose(0, 2, 1)
    return T.clip(T.absolute(sim), 0.0, 1.0)


def seed_scores(affinity, maps):
    """Affinity-weighted class evidence Z, (B, C+1, P*P)."""
    s = np.asarray(getattr(affinity, "data", affinity))
    m = np.asarray(getattr(maps, "data", maps))
    if s.shape[-1] != m.shape[-1] * m.shape[-2]:
        raise DimensionError(f"affinity {s.shape} does not match maps {m.shape}")
    flat = m.reshape(m.shape[0], m.shape[1], -1)
    mass = np.maximum(s.sum(axis=-1), NORM_GUARD)
    return (flat @ np.swapaxes(s, -1, -2)) / mass[:, None, :]


def locate_seeds(affinity, maps):
    """Assign every token to the class its affinity structure agrees with most.

    Ties go to the background (last) channel. The result carries no gradient.
    """
    z = seed_scores(affinity, maps)
    b, k = z.shape[:2]
    best = z.argmax(axis=1)
    best[z[:, -1] >= z.max(axis=1)] = k - 1
    side = maps.shape[-1]
    onehot = np.zeros(z.shape, dtype=np.float32)
    np.put_along_axis(onehot, best[:, None, :], 1.0, axis=1)
    return SeedMap(onehot.reshape(b, k, side, side))


def build_prototypes(seeds, f_hie):
    """Per-class centroids of the fused features over the seed regions."""
    feats = getattr(f_hie, "values", f_hie)
    r = seeds.assignments if isinstance(seeds, SeedMap) else np.asarray(seeds)
    b, k = r.shape[:2]
    r_flat = r.reshape(b, k, -1).astype(feats.dtype)
    if r_flat.shape[-1] != feats.shape[-1] * feats.shape[-2]:
        raise DimensionError(f"seed map {r.shape} does not match features {feats.shape}")
    counts = r_flat.sum(axis=-1)
    weights = Tensor(r_flat / np.maximum(counts, 1.0)[..., None])
    vectors = weights @ _flat_tokens(feats)
    return PrototypeSet(vectors, counts.astype(np.int64))


def refine_cam(prototypes, f_hie):
    """R-CAM: relu(cos(prototype, feature)) then per-channel max-normalization."""
    feats = getattr(f_hie, "values", f_hie)
    b, _, side, _ = feats.shape
    protos = T.l2_normalize(prototypes.vectors, axis=-1, eps=NORM_GUARD)
    tokens = T.l2_normalize(_flat_tokens(feats), axis=-1, eps=NORM_GUARD)
    corr = protos @ tokens.transpose(0, 2, 1)
    k = corr.shape[1]
    return max_normalize(corr.reshape(b, k, side, side))
