"""Numba kernels for the tile-based splat rasterizer.

All kernels run in float64 and are single-threaded on purpose: pixel and
splat loops execute in a fixed order, so forward and backward results are
bit-identical across runs regardless of how splats were binned.

The compositing rule shared by forward, backward and the test oracles:
splats are visited front to back; a splat is skipped at a pixel when the
remaining transmittance is already below ``T_EPS`` or when its weight
alpha * G falls below ``W_FLOOR``; skipped splats leave the transmittance
unchanged.
"""

import numpy as np
from numba import njit

T_EPS = 1e-4
W_FLOOR = 1.0 / 255.0
TILE = 16


@njit(cache=True)
def build_tile_lists(means, radii, width, height, tile):
    """CSR tile lists: splat ids per tile, kept in the incoming depth order."""
    n = means.shape[0]
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    ntiles = ntx * nty
    counts = np.zeros(ntiles + 1, dtype=np.int64)
    rects = np.empty((n, 4), dtype=np.int64)
    for i in range(n):
        x0 = int(np.floor((means[i, 0] - radii[i]) / tile))
        x1 = int(np.floor((means[i, 0] + radii[i]) / tile))
        y0 = int(np.floor((means[i, 1] - radii[i]) / tile))
        y1 = int(np.floor((means[i, 1] + radii[i]) / tile))
        x0 = max(x0, 0)
        y0 = max(y0, 0)
        x1 = min(x1, ntx - 1)
        y1 = min(y1, nty - 1)
        rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3] = x0, x1, y0, y1
        if x1 < x0 or y1 < y0:
            continue
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    ids = np.empty(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for i in range(n):
        x0, x1, y0, y1 = rects[i, 0], rects[i, 1], rects[i, 2], rects[i, 3]
        if x1 < x0 or y1 < y0:
            continue
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                t = ty * ntx + tx
                ids[cursor[t]] = i
                cursor[t] += 1
    return offsets, ids, ntx, nty


@njit(cache=True)
def forward(means, conics, alphas, colors, bg, offsets, ids, ntx, nty,
            width, height, tile):
    image = np.empty((height, width, 3))
    trans = np.empty((height, width))
    ncontrib = np.zeros((height, width), dtype=np.int64)
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            lo, hi = offsets[t], offsets[t + 1]
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    T = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    cnt = 0
                    for k in range(lo, hi):
                        if T < T_EPS:
                            break
                        i = ids[k]
                        dx = px - means[i, 0]
                        dy = py - means[i, 1]
                        power = (-0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                                 - conics[i, 1] * dx * dy)
                        if power > 0.0:
                            power = 0.0
                        w = alphas[i] * np.exp(power)
                        if w < W_FLOOR:
                            continue
                        r += colors[i, 0] * w * T
                        g += colors[i, 1] * w * T
                        b += colors[i, 2] * w * T
                        T *= 1.0 - w
                        cnt += 1
                    image[py, px, 0] = r + bg[0] * T
                    image[py, px, 1] = g + bg[1] * T
                    image[py, px, 2] = b + bg[2] * T
                    trans[py, px] = T
                    ncontrib[py, px] = cnt
    return image, trans, ncontrib


@njit(cache=True)
def backward(means, conics, alphas, colors, bg, offsets, ids, ntx, nty,
             width, height, tile, grad_image):
    """Per-splat gradients of sum(grad_image * rendered_image).

    Replays the forward compositing per pixel, then walks the contributing
    splats back to front accumulating the suffix color term.
    """
    n = means.shape[0]
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_alpha = np.zeros(n)
    g_color = np.zeros((n, 3))
    max_list = 0
    for t in range(ntx * nty):
        span = offsets[t + 1] - offsets[t]
        if span > max_list:
            max_list = span
    hit_id = np.empty(max_list, dtype=np.int64)
    hit_w = np.empty(max_list)
    hit_T = np.empty(max_list)
    hit_dx = np.empty(max_list)
    hit_dy = np.empty(max_list)
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            lo, hi = offsets[t], offsets[t + 1]
            if lo == hi:
                continue
            y_end = min((ty + 1) * tile, height)
            x_end = min((tx + 1) * tile, width)
            for py in range(ty * tile, y_end):
                for px in range(tx * tile, x_end):
                    gr = grad_image[py, px, 0]
                    gg = grad_image[py, px, 1]
                    gb = grad_image[py, px, 2]
                    # forward replay
                    T = 1.0
                    cnt = 0
                    for k in range(lo, hi):
                        if T < T_EPS:
                            break
                        i = ids[k]
                        dx = px - means[i, 0]
                        dy = py - means[i, 1]
                        power = (-0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy)
                                 - conics[i, 1] * dx * dy)
                        if power > 0.0:
                            power = 0.0
                        w = alphas[i] * np.exp(power)
                        if w < W_FLOOR:
                            continue
                        hit_id[cnt] = i
                        hit_w[cnt] = w
                        hit_T[cnt] = T
                        hit_dx[cnt] = dx
                        hit_dy[cnt] = dy
                        T *= 1.0 - w
                        cnt += 1
                    if cnt == 0 and (gr == 0.0 and gg == 0.0 and gb == 0.0):
                        continue
                    T_fin = T
                    # suffix accumulators of sum_k c_k w_k T_k beyond splat j
                    sr = 0.0
                    sg = 0.0
                    sb = 0.0
                    for j in range(cnt - 1, -1, -1):
                        i = hit_id[j]
                        w = hit_w[j]
                        Tj = hit_T[j]
                        one_minus = 1.0 - w
                        g_color[i, 0] += w * Tj * gr
                        g_color[i, 1] += w * Tj * gg
                        g_color[i, 2] += w * Tj * gb
                        dLdw = (gr * (colors[i, 0] * Tj - (sr + bg[0] * T_fin) / one_minus)
                                + gg * (colors[i, 1] * Tj - (sg + bg[1] * T_fin) / one_minus)
                                + gb * (colors[i, 2] * Tj - (sb + bg[2] * T_fin) / one_minus))
                        sr += colors[i, 0] * w * Tj
                        sg += colors[i, 1] * w * Tj
                        sb += colors[i, 2] * w * Tj
                        g_alpha[i] += (w / alphas[i]) * dLdw
                        dpow = w * dLdw
                        dx = hit_dx[j]
                        dy = hit_dy[j]
                        g_conic[i, 0] += dpow * (-0.5 * dx * dx)
                        g_conic[i, 1] += dpow * (-dx * dy)
                        g_conic[i, 2] += dpow * (-0.5 * dy * dy)
                        g_mean[i, 0] += dpow * (conics[i, 0] * dx + conics[i, 1] * dy)
                        g_mean[i, 1] += dpow * (conics[i, 2] * dy + conics[i, 1] * dx)
    return g_mean, g_conic, g_alpha, g_color
