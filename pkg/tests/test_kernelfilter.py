import numpy as np
import pytest

from focus_tta import kernelfilter as kf
from oracles import naive_box3, naive_kernel_filter


def random_field(rng, h=8, w=8, c=3, k=3, scale=2.0):
    return kf.spatial_softmax(kf.KernelField(rng.normal(scale=scale, size=(h, w, c, k * k)), k))


def test_softmax_uniform_and_saturated():
    z = np.zeros((4, 4, 3, 9))
    out = kf.spatial_softmax(kf.KernelField(z))
    np.testing.assert_allclose(out.weights, 1 / 9)
    z[..., 4] = 50
    out = kf.spatial_softmax(kf.KernelField(z))
    assert out.weights[..., 4].min() > 1 - 1e-9


def test_softmax_sums_and_positive():
    f = random_field(np.random.default_rng(0), scale=5)
    np.testing.assert_allclose(f.weights.sum(-1), 1, atol=1e-6)
    assert f.weights.min() > 0


def test_double_softmax_rejected():
    with pytest.raises(ValueError):
        kf.spatial_softmax(kf.KernelField.uniform(2, 2, 1))


def test_invalid_kernel_side():
    with pytest.raises(ValueError):
        kf.KernelField(np.zeros((2, 2, 1, 4)), k=2)


def test_apply_delta_and_constant():
    rng = np.random.default_rng(1)
    img = rng.random((8, 8, 3))
    np.testing.assert_allclose(kf.apply_kernel_field(img, kf.KernelField.delta(8, 8, 3)), img, atol=1e-12)
    const = np.full((8, 8, 3), 0.3)
    np.testing.assert_allclose(kf.apply_kernel_field(const, kf.KernelField.uniform(8, 8, 3)), 0.3, atol=1e-12)


def test_apply_uniform_matches_box_oracle():
    img = np.random.default_rng(2).random((8, 8, 3))
    np.testing.assert_allclose(kf.apply_kernel_field(img, kf.KernelField.uniform(8, 8, 3)), naive_box3(img), atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_apply_random_matches_naive(k):
    rng = np.random.default_rng(k)
    img = rng.random((7, 6, 2))
    f = random_field(rng, 7, 6, 2, k)
    np.testing.assert_allclose(kf.apply_kernel_field(img, f), naive_kernel_filter(img, f.weights, k), atol=1e-12)


def test_apply_rejects_unnormalized_and_mismatch():
    with pytest.raises(ValueError):
        kf.apply_kernel_field(np.zeros((4, 4, 1)), kf.KernelField(np.zeros((4, 4, 1, 9))))
    with pytest.raises(ValueError):
        kf.apply_kernel_field(np.zeros((4, 5, 1)), kf.KernelField.uniform(4, 4, 1))


def test_high_pass_cases():
    rng = np.random.default_rng(3)
    img = rng.random((8, 8, 3))
    assert np.abs(kf.high_pass_prior(img, kf.KernelField.delta(8, 8, 3))).max() < 1e-12
    const = np.full((8, 8, 3), 0.6)
    assert np.abs(kf.high_pass_prior(const, random_field(rng))).max() < 1e-12
    np.testing.assert_allclose(kf.high_pass_prior(img, kf.KernelField.uniform(8, 8, 3)), img - naive_box3(img), atol=1e-12)


def test_low_pass_accepts_raw_logits():
    rng = np.random.default_rng(4)
    img = rng.random((8, 8, 3))
    raw = kf.KernelField(rng.normal(size=(8, 8, 3, 9)))
    np.testing.assert_allclose(kf.low_pass_prior(img, raw), kf.apply_kernel_field(img, kf.spatial_softmax(raw)))


def test_reconstruct_cases():
    rng = np.random.default_rng(5)
    img = rng.random((8, 8, 3))
    f = random_field(rng)
    np.testing.assert_allclose(kf.yfpn_reconstruct(img, f, f), img, atol=1e-12)
    d = kf.KernelField.delta(8, 8, 3)
    np.testing.assert_allclose(kf.yfpn_reconstruct(img, d, d), img, atol=1e-12)
    np.testing.assert_allclose(kf.yfpn_reconstruct(img, kf.KernelField.uniform(8, 8, 3), d), naive_box3(img), atol=1e-12)
    # literal sum doubles DC
    np.testing.assert_allclose(kf.yfpn_reconstruct(np.full((8, 8, 3), 0.2), f, f, literal=True), 0.4)


def test_adjoint_identity_and_special_cases():
    rng = np.random.default_rng(6)
    for _ in range(20):
        f = random_field(rng, 6, 7, 2)
        x, y = rng.normal(size=(6, 7, 2)), rng.normal(size=(6, 7, 2))
        lhs = np.sum(kf.apply_kernel_field(x, f) * y)
        rhs = np.sum(x * kf.kernel_field_adjoint(y, f))
        assert lhs == pytest.approx(rhs, abs=1e-10)
    y = rng.random((8, 8, 3))
    np.testing.assert_allclose(kf.kernel_field_adjoint(y, kf.KernelField.delta(8, 8, 3)), y, atol=1e-12)
    box_adj = kf.kernel_field_adjoint(y, kf.KernelField.uniform(8, 8, 3))
    np.testing.assert_allclose(box_adj[2:-2, 2:-2], naive_box3(y)[2:-2, 2:-2], atol=1e-12)


def test_image_level_lowpass():
    const = np.full((12, 10, 3), 0.42)
    np.testing.assert_allclose(kf.image_level_lowpass(const, 3), 0.42, atol=1e-12)
    with pytest.raises(ValueError):
        kf.image_level_lowpass(const, 1)
    yy, xx = np.mgrid[0:32, 0:32]
    board = ((yy + xx) % 2).astype(float)[..., None]
    assert np.abs(kf.image_level_lowpass(board, 4) - 0.5).max() < 0.05
    board30 = board[:30, :30]
    assert np.abs(kf.image_level_lowpass(board30, 4) - 0.5).max() < 0.05


def test_image_level_lowpass_adjoint():
    rng = np.random.default_rng(7)
    x, y = rng.normal(size=(13, 11, 3)), rng.normal(size=(13, 11, 3))
    lhs = np.sum(kf.image_level_lowpass(x, 3) * y)
    assert lhs == pytest.approx(np.sum(x * kf.image_level_lowpass_adjoint(y, 3)), abs=1e-10)


def test_convexity_and_decomposition_properties():
    rng = np.random.default_rng(8)
    for _ in range(50):
        img = rng.random((8, 8, 3))
        f = random_field(rng, scale=4)
        out = kf.apply_kernel_field(img, f)
        lo = img.min(axis=(0, 1)) - 1e-12
        hi = img.max(axis=(0, 1)) + 1e-12
        assert np.all(out >= lo) and np.all(out <= hi)
        np.testing.assert_allclose(kf.low_pass_prior(img, f) + kf.high_pass_prior(img, f), img, atol=1e-6)


def test_dc_preservation_on_periodic_interior():
    # a periodic image with a spatially constant field keeps its mean exactly on the interior crop
    rng = np.random.default_rng(9)
    tile = rng.random((4, 4, 1))
    img = np.tile(tile, (4, 4, 1))
    wts = np.broadcast_to(rng.dirichlet(np.ones(9)), (16, 16, 1, 9)).copy()
    out = kf.apply_kernel_field(img, kf.KernelField(wts, 3, normalized=True))
    assert out[4:12, 4:12].mean() == pytest.approx(img[4:12, 4:12].mean(), abs=1e-3)
