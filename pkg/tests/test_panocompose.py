"""Panorama composition: stitching, yaw rotation, composite average."""

import math

import numpy as np
import pytest

from panosplat.panocompose import (
    compose_er,
    require_erp,
    rotate_erp_yaw,
    stitch_backward,
    stitch_views,
    stitch_weight_totals,
)
from panosplat.quality import psnr, seam_score
from panosplat.sphergeo import cubemap_to_erp, erp_to_cubemap, erp_pixel_dirs, padded_fov

from conftest import smooth_erp


def analytic_faces(n_px, fov, fn):
    """Six synthetic 'rendered' faces whose pixel values are a function of
    the viewing direction, following the renderer's pixel mapping."""
    from panosplat.sphergeo import FACE_AXES, FACE_COL_DIRS, FACE_ROW_DIRS, CubeFace

    f = (n_px / 2.0) / math.tan(fov / 2.0)
    c = (n_px - 1) / 2.0
    ts = (np.arange(n_px) - c) / f
    tc, tr = np.meshgrid(ts, ts, indexing="xy")
    faces = []
    for face in CubeFace:
        d = (FACE_AXES[face] + tc[..., None] * FACE_COL_DIRS[face]
             + tr[..., None] * FACE_ROW_DIRS[face])
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        faces.append(fn(d))
    return faces


class TestStitch:
    def test_constant_faces_any_padding(self):
        for p in (0, 4):
            faces = [np.full((72, 72, 3), 0.42) for _ in range(6)]
            erp = stitch_views(faces, p, 64)
            assert np.allclose(erp, 0.42, atol=1e-12)

    def test_direction_field_reproduced(self):
        """Stitching analytic direction-encoded faces recovers the ERP
        direction field for both unpadded and padded view sets."""
        h = 64
        fn = lambda d: 0.5 + 0.4 * d
        expected = 0.5 + 0.4 * erp_pixel_dirs(h, 2 * h)
        for p, n_px in ((0, 64), (4, 80)):
            faces = analytic_faces(n_px, padded_fov(p, h), fn)
            erp = stitch_views(faces, p, h)
            assert psnr(erp, expected) >= 40.0

    def test_grid_faces_round_trip(self):
        """Faces cut by the sampling grid, stitched at p=0, reproduce a
        smooth panorama within resampling error."""
        erp = smooth_erp(64, 1)
        faces = erp_to_cubemap(erp, 64, 0)
        back = stitch_views(faces, 0, 64)
        assert psnr(np.clip(back, 0, 1), erp) >= 40.0

    def test_padding_never_hurts_seams(self):
        """Cut-and-restitch of the same panorama: padded spherical sampling
        does not worsen the boundary statistic relative to hard seams.

        Coarse faces make the p=0 boundary clamp artifacts visible; the
        padded overlap removes them.
        """
        import math
        from panosplat.sphergeo import erp_pixel_dirs

        h = 64
        d = erp_pixel_dirs(h, 2 * h)
        content = np.stack([
            0.5 + 0.45 * np.sin(6 * math.pi * d[..., 0]) * d[..., 1],
            0.5 + 0.45 * np.cos(5 * math.pi * d[..., 2]),
            0.5 + 0.9 * d[..., 0] * d[..., 1] * d[..., 2],
        ], -1).clip(0, 1)
        scores = {}
        for p in (0, 2, 4):
            faces = erp_to_cubemap(content, 16, p)
            back = cubemap_to_erp(faces, h, 2 * h, p)
            scores[p] = seam_score(np.clip(back, 0, 1))
        assert scores[2] <= scores[0] + 1e-9
        assert scores[4] <= scores[0] + 1e-9

    def test_every_pixel_fully_weighted(self):
        for p, n_px in ((0, 64), (6, 88)):
            totals = stitch_weight_totals(p, 64, n_px)
            assert np.abs(totals - 1.0).max() < 1e-12

    def test_no_nan_on_random_faces(self, rng):
        faces = [rng.random((80, 80, 3)) for _ in range(6)]
        erp = stitch_views(faces, 4, 64)
        assert np.isfinite(erp).all()

    def test_inconsistent_sizes_rejected(self):
        faces = [np.zeros((64, 64, 3))] * 5 + [np.zeros((66, 66, 3))]
        with pytest.raises(ValueError):
            stitch_views(faces, 0, 64)

    def test_backward_is_exact_adjoint(self, rng):
        """<stitch(F), G> == <F, stitch_backward(G)> for random inputs."""
        p, erp_h, n_px = 4, 32, 40
        faces = [rng.random((n_px, n_px, 3)) for _ in range(6)]
        g = rng.random((erp_h, 2 * erp_h, 3))
        lhs = float(np.sum(stitch_views(faces, p, erp_h) * g))
        grads = stitch_backward(g, p, erp_h, n_px)
        rhs = float(sum(np.sum(f * gf) for f, gf in zip(faces, grads)))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestRotateYaw:
    def test_full_turn_identity(self, rng):
        e = rng.random((16, 32, 3))
        assert np.array_equal(rotate_erp_yaw(e, 2 * math.pi), e)

    def test_45_deg_is_128_columns(self, rng):
        e = rng.random((8, 1024, 3))
        out = rotate_erp_yaw(e, math.pi / 4)
        assert np.array_equal(out, np.roll(e, -128, axis=1))

    def test_inverse_pair_bit_exact_when_divisible(self, rng):
        e = rng.random((8, 16, 3))  # width divisible by 8
        back = rotate_erp_yaw(rotate_erp_yaw(e, math.pi / 4), -math.pi / 4)
        assert np.array_equal(back, e)

    def test_inverse_pair_bilinear_tolerance(self):
        e = smooth_erp(32, 0)
        psi = 0.123
        back = rotate_erp_yaw(rotate_erp_yaw(e, psi), -psi)
        assert np.abs(back - e).max() < 5e-3

    def test_row_means_preserved_integer_shift(self, rng):
        e = rng.random((8, 32, 3))
        out = rotate_erp_yaw(e, 2 * math.pi * 5 / 32)
        assert np.allclose(out.mean(axis=1), e.mean(axis=1), atol=0.0)

    def test_fractional_adjoint(self, rng):
        """rotate(psi) and rotate(-psi) are adjoint, also for fractional
        shifts (the stage-2 chain relies on this)."""
        a = rng.random((8, 32, 3))
        g = rng.random((8, 32, 3))
        psi = 0.7131
        lhs = float(np.sum(rotate_erp_yaw(a, psi) * g))
        rhs = float(np.sum(a * rotate_erp_yaw(g, -psi)))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestComposeEr:
    def test_rotation_cancels(self, rng):
        e_c = rng.random((8, 16, 3))
        e_t = rotate_erp_yaw(e_c, math.pi / 4)
        assert np.abs(compose_er(e_c, e_t) - e_c).max() <= 1e-12

    def test_constant_average(self):
        e_c = np.full((8, 16, 3), 0.2)
        e_t = np.full((8, 16, 3), 0.4)
        assert np.allclose(compose_er(e_c, e_t), 0.3, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            compose_er(np.zeros((8, 16, 3)), np.zeros((8, 18, 3)))

    def test_swap_symmetry(self, rng):
        """Swapping the branches with compensating rotations leaves the
        composite unchanged up to bilinear tolerance (exact for multiples
        of the column pitch)."""
        e_c = smooth_erp(16, 2)
        e_t = smooth_erp(16, 3)
        a = compose_er(e_c, e_t)
        b = compose_er(rotate_erp_yaw(e_t, -math.pi / 4),
                       rotate_erp_yaw(e_c, math.pi / 4))
        assert np.abs(a - b).max() < 1e-12

    def test_composite_matches_oracle_quality(self):
        """E_r from the 12 rendered views stays within 1 dB of E_c's own
        agreement with the spherical oracle render."""
        from panosplat import dataio
        from panosplat.optim import TrainConfig
        from panosplat.panocompose import stitch_views as sv
        from panosplat.sphergeo import base_view_poses, transition_view_poses
        from panosplat.optim import render_intrinsics
        from panosplat.raster import rasterize

        gt, ds = dataio.make_synthetic(16, 2, 64, seed=3)
        erp_gt, pose = ds.frames[0]
        oracle = dataio.oracle_render_erp(gt, pose, 64)
        cfg = TrainConfig(face_res=32, padding_p=2)
        intr = render_intrinsics(cfg, 64)
        base = [rasterize(gt, vp, intr).image for vp in base_view_poses(pose)]
        trans = [rasterize(gt, vp, intr).image for vp in transition_view_poses(pose)]
        e_c = sv(base, 2, 64)
        e_t = sv(trans, 2, 64)
        e_r = compose_er(e_c, e_t)
        p_c = psnr(np.clip(e_c, 0, 1), np.clip(oracle, 0, 1))
        p_r = psnr(np.clip(e_r, 0, 1), np.clip(oracle, 0, 1))
        assert p_r >= p_c - 1.0


class TestRequireErp:
    def test_aspect_enforced(self):
        with pytest.raises(ValueError):
            require_erp(np.zeros((16, 24, 3)))

    def test_valid_passes(self):
        out = require_erp(np.zeros((16, 32, 3)))
        assert out.shape == (16, 32, 3)
