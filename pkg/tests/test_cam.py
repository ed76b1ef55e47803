import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swinseed.cam import CAM_EPS, class_scores, compute_fout, is_normalized, normalize_cam, upsample_cam
from swinseed.exceptions import ConfigurationError

from suites import f64

maps4 = arrays(np.float64, st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
               elements=st.floats(-5, 5))


def test_fout_shape_and_zero_weights(rng):
    tokens = f64(rng.normal(size=(1, 128, 4, 4)))
    out = compute_fout(tokens, f64(rng.normal(size=(4, 128, 1, 1))))
    assert out.shape == (1, 4, 4, 4)
    assert not compute_fout(tokens, f64(np.zeros((4, 128, 1, 1)))).data.any()


def test_fout_single_weight_selects_channel(rng):
    tokens = rng.normal(size=(1, 6, 3, 3))
    w = np.zeros((2, 6, 1, 1))
    w[1, 4] = 1.0
    out = compute_fout(f64(tokens), f64(w)).data
    np.testing.assert_array_equal(out[0, 1], tokens[0, 4])
    assert not out[0, 0].any()


def test_fout_channel_mismatch(rng):
    with pytest.raises(ConfigurationError):
        compute_fout(f64(rng.normal(size=(1, 8, 2, 2))), f64(np.ones((4, 16, 1, 1))))


def test_scores_examples(rng):
    const = f64(np.full((1, 1, 3, 3), 1.5))
    logits, scores = class_scores(const)
    assert logits.data.item() == pytest.approx(1.5)
    assert scores.data.item() == pytest.approx(1 / (1 + np.exp(-1.5)))
    balanced = f64(np.array([[[[-1.0, 1.0], [1.0, -1.0]]]]))
    assert class_scores(balanced).scores.data.item() == pytest.approx(0.5)
    x = rng.normal(size=(2, 3, 4, 4))
    ref = [[sum(x[b, c].ravel()) / 16 for c in range(3)] for b in range(2)]
    np.testing.assert_allclose(class_scores(f64(x)).logits.data, ref, atol=1e-6)


def test_normalize_examples():
    neg = normalize_cam(f64(np.array([[[[-3.0, -1.0]]]]))).data
    assert not neg.any()
    out = normalize_cam(f64(np.array([[[[0.0, 2.0, 4.0]]]]))).data.ravel()
    np.testing.assert_allclose(out, [0.0, 2 / (4 + CAM_EPS), 4 / (4 + CAM_EPS)])
    assert out[1] == pytest.approx(0.5, abs=1e-5) and out[2] == pytest.approx(1.0, abs=1e-5)


@settings(max_examples=60)
@given(maps4)
def test_normalized_peaks(x):
    out = normalize_cam(f64(x)).data
    peaks = out.reshape(out.shape[:2] + (-1,)).max(-1)
    raw = x.reshape(peaks.shape + (-1,)).max(-1)
    # a raw peak p normalizes to p / (p + eps), within 1e-4 of 1 once p >= 0.1
    assert np.all((peaks == 0) | ((peaks >= 1 - 1e-4) & (peaks <= 1)) | (raw < 0.1))
    assert out.min() >= 0 and out.max() <= 1


def _clear_peaks(a):
    # eps in the normalizer shifts results by ~eps/peak; keep peaks away from 0
    peaks = a.reshape(a.shape[:2] + (-1,)).max(-1)
    return bool(np.all((peaks <= 0) | (peaks >= 0.5)))


@settings(max_examples=40)
@given(maps4.filter(_clear_peaks), st.floats(0.5, 50))
def test_normalize_scale_invariance_and_idempotence(x, k):
    a = normalize_cam(f64(x)).data
    np.testing.assert_allclose(normalize_cam(f64(k * x)).data, a, atol=1e-4)
    np.testing.assert_allclose(normalize_cam(f64(a)).data, a, atol=1e-4)


@settings(max_examples=30)
@given(maps4, st.integers(0, 2**16))
def test_scores_permutation_equivariant(x, seed):
    b, c, h, w = x.shape
    perm = np.random.default_rng(seed).permutation(h * w)
    shuffled = x.reshape(b, c, -1)[..., perm].reshape(b, c, h, w)
    np.testing.assert_allclose(class_scores(f64(shuffled)).logits.data, class_scores(f64(x)).logits.data, atol=1e-12)


def test_upsample(rng):
    m = normalize_cam(f64(rng.normal(size=(1, 4, 4, 4))))
    up = upsample_cam(m, 128, 128).data
    assert up.shape == (1, 4, 128, 128)
    assert up.min() >= 0 and up.max() <= 1
    np.testing.assert_allclose(upsample_cam(f64(np.full((1, 1, 4, 4), 0.3)), 16, 16).data, 0.3)


def test_is_normalized():
    assert is_normalized(np.array([[[0.0, 1.0]], [[0.0, 0.0]]]))
    assert not is_normalized(np.array([[[0.0, 0.5]]]))
    assert not is_normalized(np.array([[[-0.1, 1.0]]]))
