import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpunroll.errors import ShapeError
from fpunroll.metrics import gaussian_window, psnr, rgb_to_y, ssim


def test_psnr_equal_is_inf():
    a = np.random.default_rng(0).uniform(size=(8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_constant_case():
    a = np.zeros((16, 16))
    b = np.full((16, 16), 128.0)
    expected = 20 * math.log10(255 / 128)
    assert psnr(a, b, peak=255) == pytest.approx(expected, abs=1e-12)
    # the quoted 5.9879 is a rounded hand value; the formula gives 5.98662
    assert psnr(a, b, peak=255) == pytest.approx(5.9879, abs=2e-3)


def test_psnr_symmetric_and_errors():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(2, 10, 10))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ShapeError):
        psnr(a, b[:5])
    with pytest.raises(ValueError):
        psnr(a, b, peak=0)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(64, 64))
    n = rng.standard_normal(img.shape)
    vals = [psnr(img + s / 255 * n, img) for s in (5, 15, 25, 50)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_identical_is_one():
    a = np.random.default_rng(3).uniform(size=(20, 20))
    assert ssim(a, a) == 1.0


def test_ssim_constant_images():
    a = np.zeros((16, 16))
    b = np.full((16, 16), 255.0)
    C1 = (0.01 * 255) ** 2
    assert C1 == pytest.approx(6.5025)
    expected = C1 / (255.0**2 + C1)
    assert ssim(a, b, peak=255) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(9.999e-5, rel=1e-3)


def test_ssim_symmetric_range_and_errors():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(2, 24, 24))
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-15)
    assert 0 < s < 1
    with pytest.raises(ShapeError):
        ssim(a[:10, :10], b[:10, :10])
    with pytest.raises(ShapeError):
        ssim(a, b[:20])


def test_ssim_matches_direct_window_average():
    # brute force: weighted statistics at every valid window position
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(2, 13, 14))
    g = gaussian_window()
    w = np.outer(g, g)
    C1, C2 = 0.01**2, 0.03**2
    vals = []
    for i in range(13 - 10):
        for j in range(14 - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cab = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + C1) * (2 * cab + C2) / ((ma**2 + mb**2 + C1) * (va + vb + C2)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


def test_rgb_to_y_examples():
    assert rgb_to_y(np.ones(3)) == pytest.approx(235 / 255, abs=1e-12)
    assert rgb_to_y(np.zeros(3)) == pytest.approx(16 / 255, abs=1e-15)
    for g in (0.1, 0.5, 0.9):
        assert rgb_to_y(np.full(3, g)) == pytest.approx((16 + 219 * g) / 255, abs=1e-12)
    with pytest.raises(ShapeError):
        rgb_to_y(np.zeros((4, 4, 2)))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_rgb_to_y_affine(alpha, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(size=(2, 5, 5, 3))
    lhs = rgb_to_y(alpha * x + (1 - alpha) * y)
    rhs = alpha * rgb_to_y(x) + (1 - alpha) * rgb_to_y(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
