import numpy as np
import pytest

from swinseed.data import gen_dataset, stack
from swinseed.encoder import ModelConfig
from swinseed.exceptions import ConfigurationError, NumericError
from swinseed.model import init_params
from swinseed.tensor import Tensor
from swinseed.train import AdamW, TrainConfig, batch_indices, history_csv, train

TINY = ModelConfig(image_size=32, patch_size=1, embed_dim=4, num_heads=(1, 1, 1, 1), window_size=2)


@pytest.fixture(scope="module")
def tiny_data():
    images, labels, _ = stack(gen_dataset(6, 0))
    return images[:, :, ::4, ::4].copy(), labels


def test_zero_steps_returns_initialization(tiny_data):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v2", steps=0), images, labels)
    ref = init_params(TINY)
    assert res.history == [] and set(res.params) == set(ref)
    for k in ref:
        np.testing.assert_array_equal(res.params[k].data, ref[k].data)


def test_training_is_deterministic(tiny_data):
    images, labels = tiny_data
    a = train(TINY, TrainConfig(mode="v2", steps=3, batch_size=2), images, labels)
    b = train(TINY, TrainConfig(mode="v2", steps=3, batch_size=2), images, labels)
    assert a.history == b.history
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_v1_has_no_fusion_and_zero_refinement_losses(tiny_data):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v1", steps=2, batch_size=2), images, labels)
    assert not any(k.startswith("hff.") for k in res.params)
    assert all(r["gsc"] == 0 and r["ccl"] == 0 for r in res.history)


def test_v2_logs_three_finite_components(tiny_data):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v2", steps=2, batch_size=2), images, labels)
    for row in res.history:
        assert all(np.isfinite(row[k]) for k in ("cls", "gsc", "ccl", "total"))
        assert row["total"] == pytest.approx(row["cls"] + row["gsc"] + row["ccl"], rel=1e-5)
        assert row["ccl"] > 0


@pytest.mark.parametrize("switch", [{"use_gsc": False}, {"use_ccl": False}])
def test_loss_switches(tiny_data, switch):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v2", steps=1, batch_size=2, **switch), images, labels)
    off = "gsc" if "use_gsc" in switch else "ccl"
    assert res.history[0][off] == 0


@pytest.mark.parametrize("flag", ["detach_cam", "detach_rcam", "label_gate"])
def test_variant_flags_run(tiny_data, flag):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v2", steps=1, batch_size=2, **{flag: True}), images, labels)
    assert np.isfinite(res.history[0]["total"])


def test_nan_input_aborts_with_component(tiny_data):
    images, labels = tiny_data
    bad = images.copy()
    bad[:] = np.nan
    with pytest.raises(NumericError) as err:
        train(TINY, TrainConfig(mode="v1", steps=1, batch_size=2), bad, labels)
    assert err.value.step == 0 and err.value.component == "cls"


def test_config_validation(tiny_data):
    images, labels = tiny_data
    for bad in ({"mode": "v3"}, {"batch_size": 0}, {"steps": -1}):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad).validate()
    with pytest.raises(ConfigurationError):
        train(TINY, TrainConfig(), images, labels[:2])


def test_config_dict_roundtrip():
    cfg = TrainConfig(mode="V1", steps=7, detach_cam=True)
    assert cfg.mode == "v1"
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_batches_cover_each_epoch():
    gen = batch_indices(10, 4, seed=0)
    first = np.concatenate([next(gen) for _ in range(5)])[:20]
    assert sorted(first[:10]) == list(range(10)) and sorted(first[10:]) == list(range(10))


def test_adamw_first_step_and_decay_exclusions():
    params = {
        "w": Tensor(np.ones((2, 2), np.float32), requires_grad=True),
        "b": Tensor(np.ones(2, np.float32), requires_grad=True),
        "x.rel_pos_table": Tensor(np.ones((3, 1), np.float32), requires_grad=True),
    }
    for p in params.values():
        p.grad = np.full(p.shape, 0.5, np.float32)
    opt = AdamW(params, lr=0.1, weight_decay=0.5)
    opt.step()
    # bias-corrected first step moves by ~lr; only the matrix is decayed first
    np.testing.assert_allclose(params["w"].data, (1 - 0.05) - 0.1, atol=1e-6)
    np.testing.assert_allclose(params["b"].data, 0.9, atol=1e-6)
    np.testing.assert_allclose(params["x.rel_pos_table"].data, 0.9, atol=1e-6)


def test_cls_loss_falls_on_tiny_overfit(tiny_data):
    images, labels = tiny_data
    res = train(TINY, TrainConfig(mode="v1", steps=60, batch_size=6, learning_rate=3e-3), images, labels)
    first = np.mean([r["cls"] for r in res.history[:10]])
    last = np.mean([r["cls"] for r in res.history[-10:]])
    assert last < 0.5 * first


def test_history_csv():
    text = history_csv([{"step": 0, "cls": 0.5, "gsc": 0.0, "ccl": 0.25, "total": 0.75}])
    assert text == "step,cls,gsc,ccl,total\n0,0.5,0.0,0.25,0.75\n"
