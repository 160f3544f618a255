"""Image quality metrics: PSNR, SSIM and a cube-seam discontinuity score.

SSIM uses the classic 11x11 Gaussian window (sigma 1.5) with
C1 = 0.01^2, C2 = 0.03^2, computed per channel and averaged. Filtering
wraps horizontally (panoramas are periodic in longitude, which also makes
the score exactly invariant under simultaneous circular shifts) and crops
the window margin vertically, like the original valid-window definition.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["psnr", "ssim", "ssim_with_grad", "seam_score"]

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WIN = 11
SSIM_SIGMA = 1.5

PSNR_CAP = 99.0


def _as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return a


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_taps(win: int, sigma: float) -> np.ndarray:
    r = (win - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filt(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Window filter: horizontal wrap, vertical valid (rows cropped)."""
    m = (taps.size - 1) // 2
    t = correlate1d(x, taps, axis=1, mode="wrap")
    t = correlate1d(t, taps, axis=0, mode="constant")
    return t[m:x.shape[0] - m]


def _filt_adjoint(g: np.ndarray, taps: np.ndarray, height: int) -> np.ndarray:
    m = (taps.size - 1) // 2
    e = np.zeros((height, g.shape[1]))
    e[m:height - m] = g
    e = correlate1d(e, taps, axis=0, mode="constant")
    return correlate1d(e, taps, axis=1, mode="wrap")


def ssim_with_grad(a: np.ndarray, b: np.ndarray, win: int = SSIM_WIN,
                   want_grad: bool = False):
    """Mean SSIM of a against b, optionally with d(mean SSIM)/d(a).

    ``win`` must be odd and no larger than either image dimension.
    """
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if win % 2 == 0 or win < 1:
        raise ValueError("window size must be odd and positive")
    if min(h, w) < win:
        raise ValueError(f"image too small for a {win}x{win} window")
    taps = _gaussian_taps(win, SSIM_SIGMA)
    n_valid = (h - (win - 1)) * w * a.shape[2]
    total = 0.0
    grad = np.zeros_like(a) if want_grad else None
    for ch in range(a.shape[2]):
        x = a[..., ch]
        y = b[..., ch]
        mu_x = _filt(x, taps)
        mu_y = _filt(y, taps)
        mxx = _filt(x * x, taps)
        mxy = _filt(x * y, taps)
        myy = _filt(y * y, taps)
        var_x = mxx - mu_x**2
        var_y = myy - mu_y**2
        cov = mxy - mu_x * mu_y
        a1 = 2.0 * mu_x * mu_y + SSIM_C1
        a2 = 2.0 * cov + SSIM_C2
        b1 = mu_x**2 + mu_y**2 + SSIM_C1
        b2 = var_x + var_y + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.sum())
        if want_grad:
            ds_da1 = a2 / (b1 * b2)
            ds_da2 = a1 / (b1 * b2)
            ds_db1 = -s / b1
            ds_db2 = -s / b2
            g_mu = 2.0 * mu_y * (ds_da1 - ds_da2) + 2.0 * mu_x * (ds_db1 - ds_db2)
            g_mxx = ds_db2
            g_mxy = 2.0 * ds_da2
            grad[..., ch] = (
                _filt_adjoint(g_mu, taps, h)
                + _filt_adjoint(g_mxx, taps, h) * (2.0 * x)
                + _filt_adjoint(g_mxy, taps, h) * y
            )
    mean = total / n_valid
    if want_grad:
        return mean, grad / n_valid
    return mean, None


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM with the standard 11x11 window; needs min dimension >= 11."""
    value, _ = ssim_with_grad(a, b, SSIM_WIN)
    return value


_SEAM_MASK_CACHE: dict = {}


def _seam_mask(h: int, w: int) -> np.ndarray:
    """1-pixel bands on the cube-face boundary curves of an H x W ERP."""
    key = (h, w)
    hit = _SEAM_MASK_CACHE.get(key)
    if hit is not None:
        return hit
    mask = np.zeros((h, w), dtype=bool)
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    # Vertical seams between horizontal faces: the +-45 and +-135 meridians.
    for theta in (-3.0 * math.pi / 4.0, -math.pi / 4.0, math.pi / 4.0, 3.0 * math.pi / 4.0):
        u = (theta / (2.0 * math.pi) + 0.5) * w - 0.5
        mask[:, np.abs(cols - u) <= 0.5] = True
    # Horizontal seams against the up/down faces: |y| = max(|x|, |z|).
    theta_c = ((cols + 0.5) / w - 0.5) * 2.0 * math.pi
    phi_b = np.arctan(np.maximum(np.abs(np.sin(theta_c)), np.abs(np.cos(theta_c))))
    for sign in (1.0, -1.0):
        v = (-sign * phi_b / math.pi + 0.5) * h - 0.5
        mask |= np.abs(rows[:, None] - v[None, :]) <= 0.5
    _SEAM_MASK_CACHE[key] = mask
    return mask


def seam_score(e: np.ndarray) -> float:
    """Ratio of image-gradient magnitude on cube-boundary bands to the
    off-band magnitude; 1.0 means seams are statistically invisible.

    Uses central differences, wrapped horizontally and clamped vertically.
    A constant image yields the guard value 1.0.
    """
    e = _as_image(e)
    h, w = e.shape[:2]
    gh = 0.5 * np.abs(np.roll(e, -1, axis=1) - np.roll(e, 1, axis=1))
    ev = np.concatenate([e[:1], e, e[-1:]], axis=0)
    gv = 0.5 * np.abs(ev[2:] - ev[:-2])
    gmag = (gh + gv).mean(axis=2)
    mask = _seam_mask(h, w)
    on = float(gmag[mask].mean()) if mask.any() else 0.0
    off = float(gmag[~mask].mean()) if (~mask).any() else 0.0
    if off == 0.0:
        return 1.0 if on == 0.0 else math.inf
    return on / off
