import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinseed.encoder import (
    ModelConfig,
    TokenGrid,
    attention_mask,
    block_geometry,
    encode,
    init_encoder_params,
    patch_embed,
    patch_merge,
    relative_position_index,
    trunc_normal,
    window_attention,
)
from swinseed.exceptions import ConfigurationError
from swinseed.model import forward, init_params
from swinseed.losses import ccl_loss, cls_loss, gsc_loss
from swinseed.tensor import Tensor

from suites import _block_params, block_oracle, f64

SMALL = dict(image_size=32, patch_size=2, embed_dim=8, num_heads=(1, 2, 2, 4), window_size=2)


def small_cfg(**kw):
    return ModelConfig(**{**SMALL, **kw})


# -- shape law ---------------------------------------------------------------
SHAPE_CONFIGS = [
    ModelConfig(),
    ModelConfig(image_size=64, patch_size=2, embed_dim=8, num_heads=(1, 1, 2, 2), window_size=4),
    ModelConfig(image_size=96, patch_size=4, embed_dim=12, num_heads=(1, 2, 3, 4), window_size=3),
    ModelConfig(image_size=32, patch_size=1, embed_dim=4, depths=(1, 1, 1, 1), num_heads=(1, 1, 1, 1), window_size=4),
]


@pytest.mark.parametrize("cfg", SHAPE_CONFIGS, ids=lambda c: f"{c.image_size}p{c.patch_size}d{c.embed_dim}w{c.window_size}")
def test_stage_shape_law(cfg):
    params = init_encoder_params(cfg, np.random.default_rng(0))
    stages = encode(np.zeros((1, 3, cfg.image_size, cfg.image_size), np.float32), params, cfg)
    n, d = cfg.grid_size, cfg.embed_dim
    for k, grid in enumerate(stages):
        assert (grid.channels, grid.height, grid.width) == (d * 2**k, n // 2**k, n // 2**k)
    assert stages[-1].channels == 8 * d
    assert stages[-1].height == n // 8 == cfg.final_size


def test_default_stage_shapes():
    cfg = ModelConfig()
    stages = encode(np.zeros((1, 3, 128, 128), np.float32), init_encoder_params(cfg, np.random.default_rng(0)), cfg)
    assert [g.values.shape[1:] for g in stages] == [(16, 32, 32), (32, 16, 16), (64, 8, 8), (128, 4, 4)]


@pytest.mark.parametrize(
    "kw",
    [
        dict(image_size=100),
        dict(window_size=3),
        dict(num_heads=(3, 2, 4, 8)),
        dict(depths=(2, 2, 2)),
        dict(depths=(2, 0, 2, 2)),
    ],
)
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigurationError):
        ModelConfig(**kw).validate()


def test_config_roundtrip():
    cfg = ModelConfig(embed_dim=8, depths=(1, 2, 1, 2), seed=7)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- initialization ----------------------------------------------------------
def test_trunc_normal_bounds():
    x = trunc_normal(np.random.default_rng(0), (20000,), std=0.02)
    assert np.abs(x).max() <= 0.04 and 0.015 < x.std() < 0.02


def test_init_biases_and_tables_zero():
    params = init_encoder_params(ModelConfig(), np.random.default_rng(0))
    for name, p in params.items():
        if name.endswith(".bias") or "rel_pos_table" in name:
            assert not p.data.any(), name


def test_init_deterministic_in_seed():
    a, b = init_params(ModelConfig(seed=5)), init_params(ModelConfig(seed=5))
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    c = init_params(ModelConfig(seed=6))
    assert not np.array_equal(a["cam.weight"].data, c["cam.weight"].data)


# -- patch embedding -----------------------------------------------------------
def test_patch_embed_grid():
    cfg = ModelConfig()
    grid = patch_embed(np.zeros((3, 128, 128), np.float32), init_encoder_params(cfg, np.random.default_rng(0)), cfg)
    assert grid.values.shape == (1, 16, 32, 32)


def test_patch_embed_zero_image_finite():
    cfg = small_cfg()
    params = init_encoder_params(cfg, np.random.default_rng(0))
    params["encoder.patch_embed.proj.weight"].data[:] = 0
    out = patch_embed(np.zeros((1, 3, 32, 32), np.float32), params, cfg).values.data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-6)


def test_patch_embed_locality(rng):
    cfg = small_cfg()
    params = init_encoder_params(cfg, rng)
    a = rng.uniform(size=(1, 3, 32, 32)).astype(np.float32)
    b = a.copy()
    b[0, :, 6:8, 10:12] = rng.uniform(size=(3, 2, 2))  # exactly patch (3, 5)
    ga = patch_embed(a, params, cfg).values.data[0]
    gb = patch_embed(b, params, cfg).values.data[0]
    changed = np.argwhere(np.abs(ga - gb).max(axis=0) > 0)
    assert changed.tolist() == [[3, 5]]


def test_patch_embed_rejects_size():
    cfg = small_cfg()
    with pytest.raises(ConfigurationError):
        patch_embed(np.zeros((1, 3, 16, 16), np.float32), init_encoder_params(cfg, np.random.default_rng(0)), cfg)


# -- window attention ----------------------------------------------------------
def test_window_one_attends_to_self(rng):
    params = _block_params(rng, 4, 2, 1)
    x = rng.normal(size=(1, 4, 3, 3))
    _, attn = window_attention(TokenGrid(f64(x)), 0, params, "blk", 2, 1, return_attention=True)
    np.testing.assert_array_equal(attn.data, 1.0)
    # then the attention branch is the value path of the token itself
    ref = block_oracle(x[0].transpose(1, 2, 0), params, "blk", 2, 1, 0)
    got = window_attention(TokenGrid(f64(x)), 0, params, "blk", 2, 1).values.data[0].transpose(1, 2, 0)
    np.testing.assert_allclose(got, ref, atol=1e-10)


@pytest.mark.parametrize("shift", [0, 2])
def test_window_attention_matches_per_window_oracle(rng, shift):
    params = _block_params(rng, 8, 2, 4)
    x = rng.normal(size=(8, 8, 8))
    got = window_attention(TokenGrid(f64(x[None])), shift, params, "blk", 2, 4).values.data[0]
    ref = block_oracle(x.transpose(1, 2, 0), params, "blk", 2, 4, shift).transpose(2, 0, 1)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_shifted_mask_kills_cross_region_pairs(rng):
    params = _block_params(rng, 8, 2, 4)
    x = rng.normal(size=(1, 8, 8, 8))
    _, attn = window_attention(TokenGrid(f64(x)), 2, params, "blk", 2, 4, return_attention=True)
    mask = attention_mask(8, 4, 2)  # (nW, L, L)
    blocked = np.broadcast_to((mask < 0)[:, None], attn.shape)
    assert blocked.any()
    assert attn.data[blocked].max() < 1e-8


def test_attention_rows_sum_to_one(rng):
    params = _block_params(rng, 8, 4, 4)
    _, attn = window_attention(TokenGrid(f64(rng.normal(size=(2, 8, 8, 8)))), 2, params, "blk", 4, 4, return_attention=True)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-6)


def test_window_attention_rejects_geometry(rng):
    params = _block_params(rng, 4, 1, 4)
    with pytest.raises(ConfigurationError):
        window_attention(TokenGrid(f64(rng.normal(size=(1, 4, 6, 6)))), 0, params, "blk", 1, 4)
    with pytest.raises(ConfigurationError):
        window_attention(TokenGrid(f64(rng.normal(size=(1, 4, 8, 8)))), 1, params, "blk", 1, 4)


def test_no_flow_between_unshifted_windows(rng):
    params = _block_params(rng, 4, 1, 4)
    x = rng.normal(size=(1, 4, 8, 8))
    y = x.copy()
    y[0, :, 0, 0] += 5.0  # top-left window only
    a = window_attention(TokenGrid(f64(x)), 0, params, "blk", 1, 4).values.data
    b = window_attention(TokenGrid(f64(y)), 0, params, "blk", 1, 4).values.data
    diff = np.abs(a - b).max(axis=(0, 1))
    assert diff[:4, :4].max() > 0
    diff[:4, :4] = 0
    assert diff.max() == 0


def test_relative_position_index_range():
    idx = relative_position_index(3)
    assert idx.shape == (9, 9) and idx.min() == 0 and idx.max() == 24
    np.testing.assert_array_equal(np.diag(idx), 12)


def test_block_geometry_alternates_shift():
    cfg = ModelConfig()
    assert block_geometry(cfg, 0, 0) == (4, 0)
    assert block_geometry(cfg, 0, 1) == (4, 2)
    assert block_geometry(cfg, 3, 1) == (4, 0)  # 4x4 grid fits one window


# -- patch merging -------------------------------------------------------------
def test_patch_merge_shapes(rng):
    cfg = ModelConfig()
    params = init_encoder_params(cfg, rng)
    grid = TokenGrid(Tensor(rng.normal(size=(1, 16, 32, 32)).astype(np.float32)))
    assert patch_merge(grid, params, "encoder.stages.1.merge").values.shape == (1, 32, 16, 16)


def test_patch_merge_constant_input(rng):
    params = {
        "m.norm.weight": f64(rng.normal(size=12)),
        "m.norm.bias": f64(rng.normal(size=12)),
        "m.reduction.weight": f64(rng.normal(size=(6, 12))),
    }
    out = patch_merge(TokenGrid(f64(np.broadcast_to(rng.normal(size=(1, 3, 1, 1)), (1, 3, 4, 4)).copy())), params, "m")
    vals = out.values.data[0].reshape(6, -1)
    np.testing.assert_allclose(vals, np.broadcast_to(vals[:, :1], vals.shape), atol=1e-12)


def test_patch_merge_hand_trace(rng):
    c = 2
    x = rng.normal(size=(1, c, 2, 2))
    w, b, proj = rng.normal(size=4 * c), rng.normal(size=4 * c), rng.normal(size=(2 * c, 4 * c))
    params = {"m.norm.weight": f64(w), "m.norm.bias": f64(b), "m.reduction.weight": f64(proj)}
    got = patch_merge(TokenGrid(f64(x)), params, "m").values.data.reshape(-1)
    # neighbourhood order: (row 0, col 0), (1, 0), (0, 1), (1, 1)
    cat = np.concatenate([x[0, :, 0, 0], x[0, :, 1, 0], x[0, :, 0, 1], x[0, :, 1, 1]])
    normed = (cat - cat.mean()) / np.sqrt(cat.var() + 1e-5) * w + b
    np.testing.assert_allclose(got, proj @ normed, atol=1e-10)


def test_patch_merge_odd_side(rng):
    params = {"m.norm.weight": f64(np.ones(8)), "m.norm.bias": f64(np.zeros(8)), "m.reduction.weight": f64(np.ones((4, 8)))}
    with pytest.raises(ConfigurationError):
        patch_merge(TokenGrid(f64(rng.normal(size=(1, 2, 3, 3)))), params, "m")


# -- full encoder -----------------------------------------------------------------
def test_batch_independence(rng):
    cfg = small_cfg()
    params = init_encoder_params(cfg, rng)
    images = rng.uniform(size=(3, 3, 32, 32)).astype(np.float32)
    together = encode(images, params, cfg)[-1].values.data
    alone = encode(images[1:2], params, cfg)[-1].values.data
    np.testing.assert_allclose(together[1:2], alone, rtol=1e-5, atol=1e-6)


def test_encode_deterministic(rng):
    cfg = small_cfg(seed=11)
    images = rng.uniform(size=(2, 3, 32, 32)).astype(np.float32)
    a = encode(images, init_params(cfg), cfg)[-1].values.data
    b = encode(images, init_params(cfg), cfg)[-1].values.data
    assert np.array_equal(a, b)


def test_every_parameter_gets_finite_gradient(rng):
    cfg = small_cfg()
    params = init_params(cfg)
    images = rng.uniform(size=(2, 3, 32, 32)).astype(np.float32)
    out = forward(params, images, cfg, refine=True)
    labels = np.array([[1, 0, 0, 1], [0, 1, 1, 0]])
    loss = cls_loss(out.scores, labels) + gsc_loss(out.cam, out.rcam) + ccl_loss(out.cam, out.rcam)
    loss.backward()
    for name, p in params.items():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name


@settings(max_examples=8, deadline=None)
@given(
    d=st.sampled_from([4, 8]),
    patch=st.sampled_from([1, 2]),
    window=st.sampled_from([1, 2]),
    mult=st.sampled_from([2, 4]),
)
def test_shape_law_property(d, patch, window, mult):
    size = patch * 8 * window * mult // 2 * 2
    cfg = ModelConfig(image_size=size, patch_size=patch, embed_dim=d, num_heads=(1, 1, 1, 1), window_size=window, depths=(1, 1, 1, 1))
    try:
        cfg.validate()
    except ConfigurationError:
        return
    stages = encode(np.zeros((1, 3, size, size), np.float32), init_encoder_params(cfg, np.random.default_rng(0)), cfg)
    assert stages[-1].values.shape[1:] == (8 * d, cfg.grid_size // 8, cfg.grid_size // 8)
