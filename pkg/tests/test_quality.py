"""PSNR, SSIM and seam-score metrics."""

import numpy as np
import pytest

from panosplat.quality import psnr, seam_score, ssim, ssim_with_grad

from conftest import smooth_erp


def constant_ssim(c1, c2):
    """Closed-form SSIM of two constant images."""
    C1, C2 = 0.01**2, 0.03**2
    return ((2 * c1 * c2 + C1) * C2) / ((c1**2 + c2**2 + C1) * C2)


class TestPsnr:
    def test_identical_capped(self, rng):
        a = rng.random((16, 16, 3))
        assert psnr(a, a) == 99.0

    def test_known_mse(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_symmetric(self, rng):
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shift_invariant(self, rng):
        a, b = rng.random((8, 16, 3)), rng.random((8, 16, 3))
        assert psnr(np.roll(a, 5, 1), np.roll(b, 5, 1)) == pytest.approx(psnr(a, b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_is_one(self, rng):
        a = rng.random((16, 24, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_offset_closed_form(self):
        a = np.full((32, 32, 3), 0.4)
        b = np.full((32, 32, 3), 0.5)
        assert ssim(a, b) == pytest.approx(constant_ssim(0.4, 0.5), abs=1e-12)

    def test_zero_vs_one_closed_form(self):
        a = np.zeros((16, 16, 3))
        b = np.ones((16, 16, 3))
        assert ssim(a, b) == pytest.approx(constant_ssim(0.0, 1.0), abs=1e-12)

    def test_noise_monotone(self, rng):
        base = smooth_erp(32, 1)
        vals = []
        for sigma in (0.01, 0.05, 0.1):
            noisy = np.clip(base + rng.normal(0, sigma, base.shape), 0, 1)
            vals.append(ssim(base, noisy))
        assert vals[0] > vals[1] > vals[2]

    def test_symmetric(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_horizontal_shift_invariant(self, rng):
        a, b = rng.random((16, 32, 3)), rng.random((16, 32, 3))
        assert ssim(np.roll(a, 7, 1), np.roll(b, 7, 1)) == pytest.approx(
            ssim(a, b), abs=1e-12
        )

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_gradient_matches_finite_differences(self, rng):
        a = rng.random((12, 14, 3))
        b = rng.random((12, 14, 3))
        val, grad = ssim_with_grad(a, b, win=11, want_grad=True)
        for _ in range(20):
            idx = tuple(rng.integers(0, s) for s in a.shape)
            h = 1e-6
            ap, am = a.copy(), a.copy()
            ap[idx] += h
            am[idx] -= h
            fd = (ssim_with_grad(ap, b, 11)[0] - ssim_with_grad(am, b, 11)[0]) / (2 * h)
            assert abs(grad[idx] - fd) < 1e-4 * max(abs(fd), 1e-3)


class TestSeamScore:
    def test_constant_guard(self):
        assert seam_score(np.full((32, 64, 3), 0.5)) == 1.0

    def test_smooth_gradient_near_one(self):
        for kind in range(3):
            s = seam_score(smooth_erp(64, kind))
            assert 0.8 <= s <= 1.2, (kind, s)

    def test_step_on_meridian_detected(self):
        h, w = 64, 128
        img = np.full((h, w, 3), 0.2)
        # theta = +45 deg meridian: u = 0.625 * w - 0.5
        edge = int(round(0.625 * w - 0.5))
        img[:, edge:] += 0.6
        img[:, w // 2 + w // 4 + w // 8:] = 0.2  # keep the far side flat
        assert seam_score(img) > 2.0

    def test_affine_invariant(self):
        base = smooth_erp(64, 2)
        s0 = seam_score(base)
        s1 = seam_score(0.5 * base + 0.2)
        assert s1 == pytest.approx(s0, rel=1e-12)
