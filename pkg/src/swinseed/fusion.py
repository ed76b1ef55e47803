"""Hierarchical feature fusion of the four encoder stages.

Deep branch: X4 is bilinearly upsampled to the X3 grid, concatenated with X3
and projected by a 1x1 conv. Full branch: X1 and X2 are brought to the same
grid by strided convs, concatenated with the deep result, projected by a 1x1
conv to 8D channels and finally downsampled to the output grid by a strided
depthwise conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError
from .tensor import Tensor


@dataclass
class HierFeature:
    values: Tensor
    provenance: tuple = (1, 2, 3, 4)

    @property
    def channels(self):
        return self.values.shape[1]

    @property
    def side(self):
        return self.values.shape[-1]


def hff_widths(cfg):
    """Channel widths of the fusion branches (shallow1, shallow2, deep, out)."""
    d = cfg.embed_dim
    return d, 2 * d, 4 * d, 8 * d


def init_hff_params(cfg, rng):
    from .encoder import trunc_normal

    d = cfg.embed_dim
    w1, w2, wd, wo = hff_widths(cfg)

    def conv(name, cout, cin, k):
        p[f"hff.{name}.weight"] = Tensor(trunc_normal(rng, (cout, cin, k, k)), requires_grad=True)
        p[f"hff.{name}.bias"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    p = {}
    conv("down1", w1, d, 4)
    conv("down2", w2, 2 * d, 2)
    conv("deep", wd, 8 * d + 4 * d, 1)
    conv("fuse", wo, w1 + w2 + wd, 1)
    conv("out", wo, 1, 2)
    return p


def fuse_stages(stages, params, cfg=None):
    """Fuse ``[X1, X2, X3, X4]`` into F_hie at the final token grid.

    Parameters
    ----------
    stages : list of TokenGrid or Tensor
        Stage outputs shaped (B, D*2^k, N/2^k, N/2^k).
    params : dict
        Tensors under the ``hff.`` prefix.

    Returns
    -------
    HierFeature
        ``values`` shaped (B, 8D, N/8, N/8).
    """
    x1, x2, x3, x4 = (getattr(s, "values", s) for s in stages)
    d = x1.shape[1]
    n = x1.shape[-1]
    expected = [(d * 2**k, n // 2**k) for k in range(4)]
    got = [(x.shape[1], x.shape[-1]) for x in (x1, x2, x3, x4)]
    if got != expected or n % 8:
        raise ConfigurationError(f"stage shapes {got} violate the encoder shape law {expected}")
    quarter = n // 4

    up = T.bilinear_resize(x4, quarter, quarter)
    deep = T.conv2d(T.concat([up, x3], axis=1), params["hff.deep.weight"], params["hff.deep.bias"])
    s1 = T.conv2d(x1, params["hff.down1.weight"], params["hff.down1.bias"], stride=4)
    s2 = T.conv2d(x2, params["hff.down2.weight"], params["hff.down2.bias"], stride=2)
    fused = T.conv2d(
        T.concat([s1, s2, deep], axis=1), params["hff.fuse.weight"], params["hff.fuse.bias"]
    )
    out = T.conv2d(
        fused, params["hff.out.weight"], params["hff.out.bias"], stride=2, groups=fused.shape[1]
    )
    return HierFeature(out)
