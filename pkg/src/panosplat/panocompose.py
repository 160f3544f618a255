"""Assemble rendered perspective views into equirectangular panoramas.

``stitch_views`` inverts the *renderer's* pixel mapping (pinhole with the
padded field of view), which differs slightly from the sampling-grid
mapping that ``sphergeo.cubemap_to_erp`` inverts: a rendered face covers
the tangent range +-tan(fov'/2) through its focal length, while a
resampled ground-truth face spans the padded plane range corner to
corner. Faces rendered with ``padded_fov`` must therefore be stitched
here and not through the grid inverse.

Stitching is a fixed linear map of the face pixels (the view directions
do not depend on the scene), so the exact adjoint used during inter-face
optimization is the transpose of the forward sampling matrix, realized
as a scatter-add over the same bilinear corners.
"""

from __future__ import annotations

import math

import numpy as np

from .sphergeo import (
    CubeFace,
    _face_blend_weights,
    _face_plane_coords,
    erp_pixel_dirs,
    padded_fov,
)

__all__ = [
    "require_erp",
    "stitch_views",
    "stitch_backward",
    "stitch_weight_totals",
    "rotate_erp_yaw",
    "compose_er",
]


def require_erp(e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3 or e.shape[2] != 3:
        raise ValueError("ERP image must have shape (H, W, 3)")
    if e.shape[1] != 2 * e.shape[0]:
        raise ValueError(f"ERP width must be twice its height, got {e.shape[1]}x{e.shape[0]}")
    return e


_STITCH_CACHE: dict = {}


def _stitch_maps(erp_h: int, n_px: int, p: int):
    """Per-face gather tables: ERP pixel indices, bilinear corner indices
    into the flattened face, corner weights folded with the blend weight."""
    key = (erp_h, n_px, p)
    hit = _STITCH_CACHE.get(key)
    if hit is not None:
        return hit
    erp_w = 2 * erp_h
    dirs = erp_pixel_dirs(erp_h, erp_w)
    a, b, za = _face_plane_coords(dirs)
    weights = _face_blend_weights(a, b, za, p, erp_h)
    fr = (n_px / 2.0) / math.tan(padded_fov(p, erp_h) / 2.0)
    center = (n_px - 1) / 2.0
    maps = []
    for face in CubeFace:
        w = weights[face]
        mask = w > 0.0
        px = np.nonzero(mask.ravel())[0]
        # tangent = plane coordinate / 0.5
        uf = np.clip(fr * 2.0 * a[face][mask] + center, -0.5, n_px - 0.5)
        vf = np.clip(fr * 2.0 * b[face][mask] + center, -0.5, n_px - 0.5)
        u0 = np.floor(uf).astype(np.int64)
        v0 = np.floor(vf).astype(np.int64)
        fu = uf - u0
        fv = vf - v0
        u1 = np.clip(u0 + 1, 0, n_px - 1)
        v1 = np.clip(v0 + 1, 0, n_px - 1)
        u0 = np.clip(u0, 0, n_px - 1)
        v0 = np.clip(v0, 0, n_px - 1)
        corner_idx = np.stack([
            v0 * n_px + u0,
            v0 * n_px + u1,
            v1 * n_px + u0,
            v1 * n_px + u1,
        ])
        wf = w[mask]
        corner_w = np.stack([
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        ]) * wf[None, :]
        maps.append((px, corner_idx, corner_w))
    _STITCH_CACHE[key] = maps
    return maps


def _check_faces(faces) -> int:
    if len(faces) != 6:
        raise ValueError("expected 6 faces")
    n_px = faces[0].shape[0]
    for f in faces:
        if f.ndim != 3 or f.shape != (n_px, n_px, 3):
            raise ValueError("faces must be square, equally sized, 3-channel")
    return n_px


def stitch_views(faces: list, p: int, erp_h: int) -> np.ndarray:
    """Stitch 6 rendered faces (base or transition set) into an ERP image.

    Faces must have been rendered with fov = padded_fov(p, erp_h). In the
    padded overlap bands contributions blend with weights that fall
    linearly from the unpadded 90 degree boundary to the padded edge,
    normalized to sum to one; with p = 0 this degenerates to hard face
    assignment.
    """
    n_px = _check_faces(faces)
    erp_w = 2 * erp_h
    out = np.zeros((erp_h, erp_w, 3))
    flat = out.reshape(-1, 3)
    for face, (px, corner_idx, corner_w) in zip(CubeFace, _stitch_maps(erp_h, n_px, p)):
        if px.size == 0:
            continue
        face_flat = np.asarray(faces[face], dtype=np.float64).reshape(-1, 3)
        acc = np.zeros((px.size, 3))
        for c in range(4):
            acc += face_flat[corner_idx[c]] * corner_w[c][:, None]
        flat[px] += acc
    return out


def stitch_backward(grad_erp: np.ndarray, p: int, erp_h: int, n_px: int) -> list:
    """Exact adjoint of stitch_views: ERP gradient -> 6 face gradients."""
    grad_erp = require_erp(grad_erp)
    if grad_erp.shape[0] != erp_h:
        raise ValueError("gradient height does not match erp_h")
    flat = grad_erp.reshape(-1, 3)
    grads = []
    for face, (px, corner_idx, corner_w) in zip(CubeFace, _stitch_maps(erp_h, n_px, p)):
        g = np.zeros((n_px * n_px, 3))
        if px.size:
            gp = flat[px]
            for c in range(4):
                np.add.at(g, corner_idx[c], gp * corner_w[c][:, None])
        grads.append(g.reshape(n_px, n_px, 3))
    return grads


def stitch_weight_totals(p: int, erp_h: int, n_px: int) -> np.ndarray:
    """Total stitch weight arriving at every ERP pixel (audit map)."""
    totals = np.zeros(erp_h * 2 * erp_h)
    for _, (px, _, corner_w) in zip(CubeFace, _stitch_maps(erp_h, n_px, p)):
        if px.size:
            np.add.at(totals, px, corner_w.sum(axis=0))
    return totals.reshape(erp_h, 2 * erp_h)


def rotate_erp_yaw(e: np.ndarray, psi: float) -> np.ndarray:
    """Yaw the panorama: output longitude theta shows input theta + psi.

    A horizontal circular shift of psi / (2 pi) * width pixels; bilinear
    between the two neighboring integer shifts when fractional. Latitude
    rows are untouched.
    """
    e = np.asarray(e, dtype=np.float64)
    w = e.shape[1]
    shift = psi / (2.0 * math.pi) * w
    k = math.floor(shift)
    frac = shift - k
    base = np.roll(e, -k, axis=1)
    if frac == 0.0:
        return base
    return (1.0 - frac) * base + frac * np.roll(e, -(k + 1), axis=1)


def compose_er(e_c: np.ndarray, e_t: np.ndarray) -> np.ndarray:
    """Average the base panorama with the de-rotated transition panorama."""
    e_c = np.asarray(e_c, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    if e_c.shape != e_t.shape:
        raise ValueError(f"shape mismatch: {e_c.shape} vs {e_t.shape}")
    return (rotate_erp_yaw(e_t, -math.pi / 4.0) + e_c) / 2.0
