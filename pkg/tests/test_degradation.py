import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate2d

from snfsr.degradation import (
    DegradationSpec,
    blur,
    degrade,
    make_aniso_kernel,
    make_iso_kernel,
    make_triple,
    sample_spec,
)
from snfsr.substrate import DimensionError, ParameterError, Rng


def _gauss_oracle(l1, l2, theta, size=21):
    """Direct per-cell evaluation of the rotated Gaussian density."""
    c, s = math.cos(theta), math.sin(theta)
    out = np.zeros((size, size))
    half = size // 2
    for i in range(size):
        for j in range(size):
            x, y = j - half, i - half
            # coordinates in the principal-axis frame
            a = c * x + s * y
            b = -s * x + c * y
            out[i, j] = math.exp(-0.5 * (a * a / l1**2 + b * b / l2**2))
    return out / out.sum()


def test_iso_delta_limit():
    k = make_iso_kernel(0.0).grid[0]
    assert k[10, 10] == 1.0
    assert k.sum() == 1.0 and (k != 0).sum() == 1


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.4, 4.0])
def test_iso_symmetries(sigma):
    k = make_iso_kernel(sigma).grid[0]
    assert torch.allclose(k, k.T, atol=0)
    assert torch.allclose(k, k.flip(0), atol=1e-15)
    assert torch.allclose(k, k.flip(1), atol=1e-15)


def test_iso_equals_aniso_with_equal_widths():
    iso = make_iso_kernel(2.4).grid
    for theta in (0.0, 0.7, 2.0, 3.1):
        assert (make_aniso_kernel(2.4, 2.4, theta).grid - iso).abs().max() < 1e-8


def test_axis_swap():
    a = make_aniso_kernel(1.2, 3.0, 0.0).grid
    b = make_aniso_kernel(3.0, 1.2, math.pi / 2).grid
    assert (a - b).abs().max() < 1e-12


def test_aniso_matches_direct_grid_oracle():
    k = make_aniso_kernel(1.2, 2.4, math.pi / 4).grid[0].numpy()
    oracle = _gauss_oracle(1.2, 2.4, math.pi / 4)
    assert np.abs(k - oracle).max() < 1e-12
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.unravel_index(k.argmax(), k.shape) == (10, 10)


def test_aniso_rejects_nonpositive():
    with pytest.raises(ParameterError):
        make_aniso_kernel(0.0, 1.0, 0.0)


def test_even_size_rejected():
    with pytest.raises(ParameterError):
        make_iso_kernel(1.0, size=20)


def test_kernels_normalised_over_random_specs():
    rng = Rng(0)
    for i in range(1000):
        spec = sample_spec(rng, "anisotropic_noisy" if i % 2 else "isotropic_noisefree", 4)
        k = spec.kernel().grid
        assert abs(float(k.sum()) - 1.0) < 1e-6
        assert float(k.min()) >= 0.0


@settings(max_examples=100, deadline=None)
@given(sigma=st.floats(0.2, 4.0), theta=st.floats(0.0, 3.14159))
def test_iso_aniso_consistency_property(sigma, theta):
    diff = make_aniso_kernel(sigma, sigma, theta).grid - make_iso_kernel(sigma).grid
    assert float(diff.abs().max()) < 1e-8


@settings(max_examples=50, deadline=None)
@given(l1=st.floats(0.2, 4.0), l2=st.floats(0.2, 4.0), theta=st.floats(0.0, 3.14159))
def test_period_pi(l1, l2, theta):
    a = make_aniso_kernel(l1, l2, theta).grid
    b = make_aniso_kernel(l1, l2, theta + math.pi).grid
    assert float((a - b).abs().max()) < 1e-10


def test_delta_image_reproduces_kernel():
    spec = DegradationSpec("anisotropic", lambda1=1.2, lambda2=2.4, theta_rot=0.6, scale_r=1)
    img = torch.zeros(3, 41, 41)
    img[:, 20, 20] = 1.0
    out = degrade(img, spec, Rng(0))
    grid = spec.kernel().grid[0].float()
    for c in range(3):
        assert (out[c, 10:31, 10:31] - grid).abs().max() < 1e-6
    assert out[:, :10].abs().max() == 0


def test_blur_matches_scipy_with_reflect_padding():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((3, 24, 30))
    k = make_aniso_kernel(0.8, 2.0, 1.0)
    ours = blur(torch.from_numpy(img), k).numpy()
    kk = k.grid[0].numpy()
    for c in range(3):
        padded = np.pad(img[c], 10, mode="reflect")
        ref = correlate2d(padded, kk, mode="valid")
        assert np.abs(ours[c] - ref).max() < 1e-10


def test_delta_kernel_decimation():
    x = torch.randn(3, 16, 16)
    spec = DegradationSpec("isotropic", sigma=0.0, scale_r=2)
    assert torch.equal(degrade(x, spec, Rng(0)), x[:, ::2, ::2])


def test_noise_free_is_deterministic():
    x = torch.randn(3, 32, 32)
    spec = DegradationSpec("isotropic", sigma=1.5, scale_r=4)
    assert torch.equal(degrade(x, spec, Rng(1)), degrade(x, spec, Rng(2)))


def test_noise_scale():
    x = torch.zeros(3, 256, 256)
    spec = DegradationSpec("isotropic", sigma=0.0, noise_level=25.0, scale_r=1)
    y = degrade(x, spec, Rng(3))
    assert float(y.std()) == pytest.approx(25.0 * 2 / 255, rel=0.02)


def test_linearity_without_noise():
    g = torch.Generator().manual_seed(0)
    x, y = torch.randn(3, 32, 32, generator=g), torch.randn(3, 32, 32, generator=g)
    spec = DegradationSpec("anisotropic", lambda1=0.9, lambda2=3.1, theta_rot=2.0, scale_r=4)
    lhs = degrade(2.5 * x - 0.7 * y, spec)
    rhs = 2.5 * degrade(x, spec) - 0.7 * degrade(y, spec)
    assert float((lhs - rhs).abs().max()) < 1e-5


def test_indivisible_dims():
    with pytest.raises(DimensionError):
        degrade(torch.zeros(3, 30, 32), DegradationSpec(scale_r=4))


def test_bicubic_downsample_shape():
    y = degrade(torch.randn(3, 32, 32), DegradationSpec(sigma=1.0, scale_r=4), downsample="bicubic")
    assert y.shape == (3, 8, 8)


def test_sample_spec_ranges():
    rng = Rng(11)
    for _ in range(10_000):
        s = sample_spec(rng, "anisotropic_noisy", 4)
        assert 0.2 <= s.lambda1 <= 4.0 and 0.2 <= s.lambda2 <= 4.0
        assert 0.0 <= s.theta_rot < math.pi
        assert 0.0 <= s.noise_level <= 25.0


def test_sample_spec_isotropic_has_no_noise():
    rng = Rng(5)
    for _ in range(500):
        s = sample_spec(rng, "isotropic_noisefree", 4)
        assert s.noise_level == 0.0 and 0.2 <= s.sigma <= 4.0


def test_sample_spec_deterministic_and_mode_checked():
    assert sample_spec(Rng(9), "anisotropic_noisy") == sample_spec(Rng(9), "anisotropic_noisy")
    with pytest.raises(ParameterError):
        sample_spec(Rng(9), "jpeg")


def test_spec_validation():
    with pytest.raises(ParameterError):
        DegradationSpec("isotropic", sigma=5.0)
    with pytest.raises(ParameterError):
        DegradationSpec("isotropic", sigma=1.0, noise_level=30)
    with pytest.raises(ParameterError):
        DegradationSpec("anisotropic", lambda1=1.0, lambda2=1.0, theta_rot=4.0)


def test_spec_text_round_trip():
    s = DegradationSpec("anisotropic", lambda1=1.25, lambda2=3.5, theta_rot=0.5, noise_level=7.0, scale_r=4)
    assert DegradationSpec.from_text(s.to_text()) == s


def test_triple_alignment_and_shared_degradation():
    img = torch.randn(3, 128, 96)
    spec = DegradationSpec("anisotropic", lambda1=1.0, lambda2=2.0, theta_rot=0.3, noise_level=10, scale_r=4)
    rng = Rng(4)
    tr = make_triple(img, spec, lr_patch=8, rng=rng)
    assert tr.x_lr.shape == tr.x_lr_pos.shape == (3, 8, 8)
    assert tr.x_hr.shape == (3, 32, 32)
    # replay the draws: same noise realisation, crops of one degraded image
    rng2 = Rng(4)
    full = degrade(img, spec, rng2)
    y, x = rng2.integers(0, 32 - 8 + 1), rng2.integers(0, 24 - 8 + 1)
    assert torch.equal(tr.x_lr, full[:, y:y + 8, x:x + 8])
    assert torch.equal(tr.x_hr, img[:, 4 * y:4 * y + 32, 4 * x:4 * x + 32])


def test_triple_full_size_patch():
    img = torch.randn(3, 256, 256)
    tr = make_triple(img, DegradationSpec(sigma=1.0, scale_r=4), lr_patch=64, rng=Rng(0))
    assert tr.x_hr.shape == (3, 256, 256) and tr.x_lr.shape == (3, 64, 64)


def test_triple_too_small():
    with pytest.raises(DimensionError):
        make_triple(torch.zeros(3, 64, 64), DegradationSpec(scale_r=4), lr_patch=64, rng=Rng(0))
