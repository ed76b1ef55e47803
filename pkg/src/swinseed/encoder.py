"""Hierarchical shifted-window attention encoder.

Tokens travel between blocks channels-last, ``(B, S, S, C)``; the public
stage outputs are :class:`TokenGrid` objects holding ``(B, C, S, S)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError
from .tensor import Tensor

_MASK_FILL = -1e4
# pixel standardization applied before patch embedding
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass
class ModelConfig:
    """Encoder and head hyperparameters.

    Defaults are a desk-scale version of the tiny hierarchical backbone; the
    stage shape algebra (channels double, side halves) is unchanged.
    """

    image_size: int = 128
    patch_size: int = 4
    embed_dim: int = 16
    depths: tuple = (2, 2, 2, 2)
    num_heads: tuple = (1, 2, 4, 8)
    window_size: int = 4
    num_classes: int = 4
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.num_heads = tuple(int(h) for h in self.num_heads)

    @property
    def grid_size(self):
        return self.image_size // self.patch_size

    @property
    def final_size(self):
        return self.grid_size // 8

    @property
    def final_dim(self):
        return self.embed_dim * 8

    def stage_dim(self, k):
        return self.embed_dim * 2**k

    def stage_side(self, k):
        return self.grid_size // 2**k

    def validate(self):
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ConfigurationError("depths and num_heads need exactly four stages")
        if min(self.depths) < 1:
            raise ConfigurationError(f"every stage needs at least one block, got {self.depths}")
        if self.patch_size < 1 or self.image_size % (self.patch_size * 8):
            raise ConfigurationError(
                f"image_size {self.image_size} must be divisible by patch_size*8 = {self.patch_size * 8}"
            )
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        for k in range(4):
            side, dim = self.stage_side(k), self.stage_dim(k)
            if side % self.window_size:
                raise ConfigurationError(
                    f"stage {k + 1} side {side} is not divisible by window_size {self.window_size}"
                )
            if dim % self.num_heads[k]:
                raise ConfigurationError(
                    f"stage {k + 1}: {self.num_heads[k]} heads do not divide dim {dim}"
                )
        return self

    def to_dict(self):
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class TokenGrid:
    """Spatially arranged tokens, ``values`` shaped (B, C, H, W)."""

    values: Tensor
    stage: int = field(default=0)

    @property
    def channels(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[2]

    @property
    def width(self):
        return self.values.shape[3]


# -- parameters ----------------------------------------------------------
def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def _linear(params, name, rng, n_in, n_out, bias=True):
    params[f"{name}.weight"] = Tensor(trunc_normal(rng, (n_out, n_in)), requires_grad=True)
    if bias:
        params[f"{name}.bias"] = Tensor(np.zeros(n_out, np.float32), requires_grad=True)


def _norm(params, name, dim):
    params[f"{name}.weight"] = Tensor(np.ones(dim, np.float32), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(dim, np.float32), requires_grad=True)


def init_encoder_params(cfg, rng):
    """Fresh encoder parameters keyed by dotted name (insertion-ordered)."""
    cfg.validate()
    p = {}
    d, ps = cfg.embed_dim, cfg.patch_size
    p["encoder.patch_embed.proj.weight"] = Tensor(trunc_normal(rng, (d, 3, ps, ps)), requires_grad=True)
    p["encoder.patch_embed.proj.bias"] = Tensor(np.zeros(d, np.float32), requires_grad=True)
    _norm(p, "encoder.patch_embed.norm", d)
    w = cfg.window_size
    for k in range(4):
        dim = cfg.stage_dim(k)
        if k > 0:
            _norm(p, f"encoder.stages.{k}.merge.norm", 2 * dim)
            _linear(p, f"encoder.stages.{k}.merge.reduction", rng, 2 * dim, dim, bias=False)
        for j in range(cfg.depths[k]):
            pre = f"encoder.stages.{k}.blocks.{j}"
            _norm(p, f"{pre}.norm1", dim)
            _linear(p, f"{pre}.attn.qkv", rng, dim, 3 * dim)
            p[f"{pre}.attn.rel_pos_table"] = Tensor(
                np.zeros(((2 * w - 1) ** 2, cfg.num_heads[k]), np.float32), requires_grad=True
            )
            _linear(p, f"{pre}.attn.proj", rng, dim, dim)
            _norm(p, f"{pre}.norm2", dim)
            _linear(p, f"{pre}.mlp.fc1", rng, dim, cfg.mlp_ratio * dim)
            _linear(p, f"{pre}.mlp.fc2", rng, cfg.mlp_ratio * dim, dim)
    return p


# -- geometry helpers ----------------------------------------------------
def relative_position_index(window):
    """(w*w, w*w) index into the ((2w-1)^2, heads) bias table."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


def shift_region_ids(side, window, shift):
    """Region label per token of the cyclically shifted grid."""
    ids = np.zeros((side, side), dtype=np.int64)
    bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for rs in bounds:
        for cs in bounds:
            ids[rs, cs] = label
            label += 1
    return ids


def attention_mask(side, window, shift):
    """Additive (nW, w*w, w*w) mask, or None when ``shift`` is 0."""
    if shift == 0:
        return None
    ids = _partition(shift_region_ids(side, window, shift)[None, :, :, None], window)
    ids = ids.reshape(-1, window * window)
    same = ids[:, :, None] == ids[:, None, :]
    return np.where(same, 0.0, _MASK_FILL)


def _partition(x, window):
    b, s, _, c = x.shape
    n = s // window
    x = x.reshape(b, n, window, n, window, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * n * n, window * window, c)


def _reverse(windows, window, b, side):
    n = side // window
    c = windows.shape[-1]
    x = windows.reshape(b, n, n, window, window, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, side, side, c)


def block_geometry(cfg, k, j):
    """(window, shift) used by block ``j`` of stage ``k``.

    Odd blocks shift by half a window; a grid that fits inside one window
    uses neither partition nor shift.
    """
    side = cfg.stage_side(k)
    window = min(cfg.window_size, side)
    shift = 0 if side <= window or j % 2 == 0 else window // 2
    return window, shift


# -- ops -----------------------------------------------------------------
def patch_embed(image, params, cfg):
    """(B, 3, H, W) image Tensor -> TokenGrid of D channels at N x N."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    if x.shape[1] != 3 or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise ConfigurationError(
            f"expected images of shape (3, {cfg.image_size}, {cfg.image_size}), got {x.shape[1:]}"
        )
    x = (x - PIXEL_MEAN) * (1.0 / PIXEL_STD)
    tokens = T.conv2d(
        x,
        params["encoder.patch_embed.proj.weight"],
        params["encoder.patch_embed.proj.bias"],
        stride=cfg.patch_size,
    )
    tokens = tokens.transpose(0, 2, 3, 1)
    tokens = T.layer_norm(
        tokens, params["encoder.patch_embed.norm.weight"], params["encoder.patch_embed.norm.bias"]
    )
    return TokenGrid(tokens.transpose(0, 3, 1, 2), stage=0)


def _windowed_msa(x, params, pre, heads, window, shift, return_attention=False):
    b, side, _, c = x.shape
    if side % window:
        raise ConfigurationError(f"grid side {side} is not divisible by window {window}")
    if shift:
        x = T.roll(x, (-shift, -shift), axis=(1, 2))
    windows = _partition(x, window)
    nwb, length, _ = windows.shape
    hd = c // heads
    qkv = T.linear(windows, params[f"{pre}.qkv.weight"], params[f"{pre}.qkv.bias"])
    qkv = qkv.reshape(nwb, length, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q * (hd**-0.5)) @ k.transpose(0, 1, 3, 2)
    index = relative_position_index(window).reshape(-1)
    bias = params[f"{pre}.rel_pos_table"][index].reshape(length, length, heads).transpose(2, 0, 1)
    logits = logits + bias
    mask = attention_mask(side, window, shift)
    if mask is not None:
        nw = mask.shape[0]
        logits = logits.reshape(b, nw, heads, length, length) + Tensor(
            mask[None, :, None].astype(x.dtype)
        )
        logits = logits.reshape(nwb, heads, length, length)
    attn = T.softmax(logits, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(nwb, length, c)
    out = T.linear(out, params[f"{pre}.proj.weight"], params[f"{pre}.proj.bias"])
    out = _reverse(out, window, b, side)
    if shift:
        out = T.roll(out, (shift, shift), axis=(1, 2))
    if return_attention:
        return out, attn
    return out


def _block(x, params, pre, heads, window, shift, return_attention=False):
    h = T.layer_norm(x, params[f"{pre}.norm1.weight"], params[f"{pre}.norm1.bias"])
    msa = _windowed_msa(h, params, f"{pre}.attn", heads, window, shift, return_attention)
    if return_attention:
        msa, attn = msa
    x = x + msa
    h = T.layer_norm(x, params[f"{pre}.norm2.weight"], params[f"{pre}.norm2.bias"])
    h = T.linear(h, params[f"{pre}.mlp.fc1.weight"], params[f"{pre}.mlp.fc1.bias"])
    h = T.linear(T.gelu(h), params[f"{pre}.mlp.fc2.weight"], params[f"{pre}.mlp.fc2.bias"])
    x = x + h
    if return_attention:
        return x, attn
    return x


def window_attention(grid, shift, params, prefix, heads, window, return_attention=False):
    """One pre-norm shifted-window transformer block applied to ``grid``.

    Parameters
    ----------
    grid : TokenGrid
    shift : int
        0 or ``window // 2``.
    params : dict
        Must contain the block tensors under ``prefix``.
    prefix : str
        e.g. ``"encoder.stages.0.blocks.1"``.
    heads, window : int
    return_attention : bool, default=False
        Also return the (B*nW, heads, w*w, w*w) attention weights.
    """
    if grid.height % window or grid.width % window:
        raise ConfigurationError(f"grid {grid.height}x{grid.width} not divisible by window {window}")
    if shift not in (0, window // 2):
        raise ConfigurationError(f"shift must be 0 or {window // 2}, got {shift}")
    x = grid.values.transpose(0, 2, 3, 1)
    out = _block(x, params, prefix, heads, window, shift, return_attention)
    if return_attention:
        out, attn = out
        return TokenGrid(out.transpose(0, 3, 1, 2), grid.stage), attn
    return TokenGrid(out.transpose(0, 3, 1, 2), grid.stage)


def _merge(x, params, pre):
    b, side, _, c = x.shape
    if side % 2:
        raise ConfigurationError(f"patch merging needs an even side, got {side}")
    half = side // 2
    # neighbourhood order (0,0), (1,0), (0,1), (1,1) as (row, col) offsets
    x = x.reshape(b, half, 2, half, 2, c).transpose(0, 1, 3, 4, 2, 5).reshape(b, half, half, 4 * c)
    x = T.layer_norm(x, params[f"{pre}.norm.weight"], params[f"{pre}.norm.bias"])
    return T.linear(x, params[f"{pre}.reduction.weight"])


def patch_merge(grid, params, prefix):
    """Concatenate 2x2 neighbourhoods, normalize, project to twice the channels."""
    x = grid.values.transpose(0, 2, 3, 1)
    out = _merge(x, params, prefix)
    return TokenGrid(out.transpose(0, 3, 1, 2), grid.stage + 1)


def encode(image, params, cfg):
    """Run all four stages; returns their outputs ``[X1, X2, X3, X4]``.

    ``X4`` is used as-is for the output tokens; there is no trailing norm,
    which keeps per-token magnitude differences available to the CAM head.
    """
    grid = patch_embed(image, params, cfg)
    x = grid.values.transpose(0, 2, 3, 1)
    outputs = []
    for k in range(4):
        if k > 0:
            x = _merge(x, params, f"encoder.stages.{k}.merge")
        for j in range(cfg.depths[k]):
            window, shift = block_geometry(cfg, k, j)
            x = _block(x, params, f"encoder.stages.{k}.blocks.{j}", cfg.num_heads[k], window, shift)
        outputs.append(TokenGrid(x.transpose(0, 3, 1, 2), stage=k))
    return outputs
