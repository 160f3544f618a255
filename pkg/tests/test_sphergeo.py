"""Spherical/cubemap geometry: conversions, grids, poses, resampling."""

import math

import numpy as np
import pytest

from panosplat.quality import psnr
from panosplat.sphergeo import (
    CameraPose,
    CubeFace,
    FACE_AXES,
    SphericalCoord,
    base_view_poses,
    cubemap_to_erp,
    cut_perspective_faces,
    dir_to_spherical,
    erp_to_cubemap,
    face_grid,
    face_pad,
    padded_fov,
    rot_x,
    rot_y,
    sample_erp_bilinear,
    spherical_to_erp_pixel,
    transition_view_poses,
    view_set,
)

from conftest import random_pose, smooth_erp


class TestSphericalConversions:
    def test_front_axis(self):
        c = dir_to_spherical(0.0, 0.0, 1.0)
        assert c.theta == 0.0 and c.phi == 0.0

    def test_right_axis(self):
        c = dir_to_spherical(1.0, 0.0, 0.0)
        assert c.theta == pytest.approx(math.pi / 2, abs=1e-15)
        assert c.phi == 0.0

    def test_north_pole(self):
        """atan2(0, 0) = 0 convention at the poles."""
        c = dir_to_spherical(0.0, 1.0, 0.0)
        assert c.theta == 0.0
        assert c.phi == pytest.approx(math.pi / 2, abs=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            dir_to_spherical(0.0, 0.0, 0.0)

    def test_theta_range_half_open(self):
        """atan2 can emit -pi; it must be normalized to +pi."""
        c = dir_to_spherical(-1e-300, 0.0, -1.0)
        assert -math.pi < c.theta <= math.pi

    def test_erp_pixel_center(self):
        px = spherical_to_erp_pixel(SphericalCoord(0.0, 0.0), 512, 1024)
        assert (px.u, px.v) == (511.5, 255.5)

    def test_erp_pixel_seam(self):
        px = spherical_to_erp_pixel(SphericalCoord(math.pi, 0.0), 512, 1024)
        assert (px.u, px.v) == (1023.5, 255.5)

    def test_erp_pixel_top_edge(self):
        px = spherical_to_erp_pixel(SphericalCoord(0.0, math.pi / 2), 512, 1024)
        assert (px.u, px.v) == (511.5, -0.5)

    def test_erp_dims_validated(self):
        with pytest.raises(ValueError):
            spherical_to_erp_pixel(SphericalCoord(0.0, 0.0), 1, 1024)


class TestHighPrecisionOracle:
    """Compare against mpmath evaluation at 40 digits on random inputs."""

    N = 10_000

    def test_conversion_chain(self, rng):
        import mpmath as mp

        mp.mp.dps = 40
        dirs = rng.normal(size=(self.N, 3))
        h, w = 512, 1024
        for k in range(self.N):
            x, y, z = dirs[k]
            c = dir_to_spherical(x, y, z)
            px = spherical_to_erp_pixel(c, h, w)
            theta = mp.atan2(mp.mpf(x), mp.mpf(z))
            if theta <= -mp.pi:
                theta += 2 * mp.pi
            phi = mp.atan2(mp.mpf(y), mp.sqrt(mp.mpf(x) ** 2 + mp.mpf(z) ** 2))
            u = (theta / (2 * mp.pi) + mp.mpf("0.5")) * w - mp.mpf("0.5")
            v = (-phi / mp.pi + mp.mpf("0.5")) * h - mp.mpf("0.5")
            assert abs(c.theta - float(theta)) < 1e-9
            assert abs(c.phi - float(phi)) < 1e-9
            assert abs(px.u - float(u)) < 1e-9
            assert abs(px.v - float(v)) < 1e-9

    def test_padded_ranges_and_fov(self, rng):
        import mpmath as mp

        mp.mp.dps = 40
        for _ in range(200):
            h = int(rng.integers(64, 2048))
            p = int(rng.integers(0, max(1, h // 5)))
            fov = padded_fov(p, h)
            fov_mp = 2 * mp.pi * p / h + mp.pi / 2
            assert abs(fov - float(fov_mp)) < 1e-9
            ax = np.linspace(-0.5 - 2.0 * p / h, 0.5 + 2.0 * p / h, 8)
            lo = mp.mpf("-0.5") - 2 * mp.mpf(p) / h
            hi = mp.mpf("0.5") + 2 * mp.mpf(p) / h
            assert abs(ax[0] - float(lo)) < 1e-12
            assert abs(ax[-1] - float(hi)) < 1e-12


class TestRotations:
    def test_rot_y_quarter_turn(self):
        v = rot_y(math.pi / 2) @ np.array([0.0, 0.0, 1.0])
        assert np.allclose(v, [1.0, 0.0, 0.0], atol=1e-15)

    def test_rot_x_zero_is_identity(self):
        assert np.array_equal(rot_x(0.0), np.eye(3))

    def test_rot_y_composition(self):
        a = rot_y(math.pi / 4) @ rot_y(math.pi / 4)
        assert np.abs(a - rot_y(math.pi / 2)).max() < 1e-12

    def test_orthonormal_random_angles(self, rng):
        for psi in rng.uniform(-10, 10, 50):
            for r in (rot_x(psi), rot_y(psi)):
                assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
                assert abs(np.linalg.det(r) - 1.0) < 1e-12


class TestViewPoses:
    def test_identity_front_is_identity(self):
        pose = CameraPose(r_wc=np.eye(3), t=np.zeros(3))
        front = base_view_poses(pose)[CubeFace.FRONT]
        assert np.array_equal(front.r_wc, np.eye(3))
        assert np.array_equal(front.t, np.zeros(3))

    def test_face_axis_closure_identity(self):
        """The 6 base rotations map the forward direction onto the face axes."""
        pose = CameraPose(r_wc=np.eye(3), t=np.zeros(3))
        for face, vp in zip(CubeFace, base_view_poses(pose)):
            axis = vp.r_wc.T @ np.array([0.0, 0.0, 1.0])
            assert np.abs(axis - FACE_AXES[face]).max() < 1e-12, face

    def test_face_axis_closure_random_poses(self, rng):
        """Optical axes, expressed in the pose's camera frame, are exactly
        the +-x, +-y, +-z multiset for any valid pose."""
        for _ in range(20):
            pose = random_pose(rng)
            axes = []
            for vp in base_view_poses(pose):
                axes.append(pose.r_wc @ vp.r_wc.T @ np.array([0.0, 0.0, 1.0]))
            targets = np.concatenate([np.eye(3), -np.eye(3)])
            used = set()
            for a in axes:
                hits = [i for i, tgt in enumerate(targets)
                        if np.abs(a - tgt).max() < 1e-12]
                assert len(hits) == 1
                used.add(hits[0])
            assert used == set(range(6))

    def test_pose_invariants_and_shared_center(self, rng):
        for _ in range(10):
            pose = random_pose(rng)
            for vp in base_view_poses(pose) + transition_view_poses(pose):
                vp.validate(tol=1e-12)
                assert np.abs(vp.camera_center() - pose.camera_center()).max() < 1e-12

    def test_transition_front_bisects(self):
        pose = CameraPose(r_wc=np.eye(3), t=np.zeros(3))
        tf = transition_view_poses(pose)[CubeFace.FRONT]
        axis = tf.r_wc.T @ np.array([0.0, 0.0, 1.0])
        assert np.abs(axis - [math.sqrt(2) / 2, 0.0, math.sqrt(2) / 2]).max() < 1e-12

    def test_transition_bisection_random_poses(self, rng):
        """Each horizontal transition axis is the normalized sum of two
        adjacent base axes, for any pose."""
        for _ in range(10):
            pose = random_pose(rng)
            base = base_view_poses(pose)
            trans = transition_view_poses(pose)
            ring = [CubeFace.FRONT, CubeFace.RIGHT, CubeFace.BACK, CubeFace.LEFT]
            fwd = np.array([0.0, 0.0, 1.0])
            for i, face in enumerate(ring):
                a = base[face].r_wc.T @ fwd
                b = base[ring[(i + 1) % 4]].r_wc.T @ fwd
                target = (a + b) / np.linalg.norm(a + b)
                taxis = trans[face].r_wc.T @ fwd
                assert np.abs(taxis - target).max() < 1e-12

    def test_transition_equals_prerotated_base(self, rng):
        pose = random_pose(rng)
        pre = CameraPose(r_wc=rot_y(math.pi / 4).T @ pose.r_wc,
                         t=rot_y(math.pi / 4).T @ pose.t)
        expected = base_view_poses(pre)
        actual = transition_view_poses(pose)
        for e, a in zip(expected, actual):
            assert np.abs(e.r_wc - a.r_wc).max() == 0.0
            assert np.abs(e.t - a.t).max() == 0.0

    def test_non_orthonormal_rejected(self):
        pose = CameraPose(r_wc=np.eye(3) * 1.001, t=np.zeros(3))
        with pytest.raises(ValueError):
            base_view_poses(pose)

    def test_view_set_fov(self):
        vs = view_set(CameraPose(r_wc=np.eye(3), t=np.zeros(3)), 16, 512)
        assert vs.fov == pytest.approx(math.pi / 16 + math.pi / 2, abs=1e-15)
        assert len(vs.base) == 6 and len(vs.transition) == 6


class TestPaddedFov:
    def test_unpadded_is_quarter_turn(self):
        assert padded_fov(0, 512) == pytest.approx(math.pi / 2, abs=0.0)

    def test_known_value(self):
        assert padded_fov(16, 512) == pytest.approx(1.7671458676442586, abs=1e-12)

    def test_degenerate_wide_rejected_by_intrinsics(self):
        from panosplat.raster import PerspectiveIntrinsics

        fov = padded_fov(128, 512)
        assert fov == pytest.approx(math.pi, abs=1e-12)
        with pytest.raises(ValueError):
            PerspectiveIntrinsics(fov=fov, width=32, height=32)


class TestFaceGrid:
    def test_unpadded_corners_hit_cube_corners(self):
        grid = face_grid(CubeFace.FRONT, 2, 0, 512, 1024)
        # Corner (x, y) = (-0.5, -0.5) on the z=0.5 plane.
        c = dir_to_spherical(-0.5, -0.5, 0.5)
        px = spherical_to_erp_pixel(c, 512, 1024)
        assert np.allclose(grid.coords[0, 0], [px.u, px.v], atol=1e-12)

    def test_padded_axis_range(self):
        import numpy as np

        ax = np.linspace(-0.5625, 0.5625, 512 + 2 * face_pad(512, 16, 512))
        grid = face_grid(CubeFace.FRONT, 512, 16, 512, 1024)
        assert grid.n_px == ax.size

    def test_center_sample(self):
        grid = face_grid(CubeFace.FRONT, 65, 0, 512, 1024)
        assert np.allclose(grid.coords[32, 32], [511.5, 255.5], atol=1e-12)

    def test_padding_monotone_and_unpadded_exact(self):
        from panosplat.sphergeo import _grid_axis

        ranges = []
        for p in (0, 4, 8, 16):
            ax = _grid_axis(64, p, 512)
            ranges.append(ax[-1])
        assert all(b > a for a, b in zip(ranges, ranges[1:]))
        assert np.array_equal(_grid_axis(64, 0, 512), np.linspace(-0.5, 0.5, 64))

    def test_padding_limit(self):
        with pytest.raises(ValueError):
            face_grid(CubeFace.FRONT, 64, 128, 512, 1024)


class TestResampling:
    def test_constant_erp_constant_faces(self):
        erp = np.full((64, 128, 3), 0.37)
        for face in erp_to_cubemap(erp, 32, 0):
            assert np.allclose(face, 0.37, atol=1e-12)

    def test_single_white_pixel_hits_front_only(self):
        erp = np.zeros((512, 1024, 3))
        erp[255, 511] = 1.0
        # Dense sampling (face_res = erp_h) so the texel cannot fall
        # between face sample points.
        faces = erp_to_cubemap(erp, 512, 0)
        assert faces[CubeFace.FRONT].max() > 0
        for face in CubeFace:
            if face != CubeFace.FRONT:
                assert faces[face].max() == 0.0

    def test_round_trip_smooth(self):
        """ERP -> cubemap -> ERP at face_res = erp_h recovers smooth images."""
        for kind in range(3):
            erp = smooth_erp(64, kind)
            for p in (0, 4):
                faces = erp_to_cubemap(erp, 64, p)
                back = cubemap_to_erp(faces, 64, 128, p)
                assert psnr(np.clip(back, 0, 1), erp) >= 40.0

    def test_constant_faces_constant_erp(self):
        faces = [np.full((32, 32, 3), 0.6) for _ in range(6)]
        erp = cubemap_to_erp(faces, 32, 64, 0)
        assert np.allclose(erp, 0.6, atol=1e-12)

    def test_forward_axis_samples_front_center(self):
        faces = [np.full((33, 33, 3), float(i)) for i in range(6)]
        erp = cubemap_to_erp(faces, 64, 128, 0)
        # The pixel closest to the forward axis lies in the front region.
        assert erp[32, 64, 0] == 0.0

    def test_mismatched_faces_rejected(self):
        faces = [np.zeros((32, 32, 3))] * 5 + [np.zeros((16, 16, 3))]
        with pytest.raises(ValueError):
            cubemap_to_erp(faces, 32, 64, 0)

    def test_face_assignment_matches_grid_generator(self, rng):
        """Directions clearly inside a face resolve to that face."""
        from panosplat.sphergeo import _face_plane_coords

        dirs = rng.normal(size=(500, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        a, b, za = _face_plane_coords(dirs)
        m = np.where(za > 0, np.maximum(np.abs(a), np.abs(b)), np.inf)
        owner = np.argmin(m, axis=0)
        best = np.argmax(za, axis=0)
        margin = np.abs(np.sort(za, axis=0)[-1] - np.sort(za, axis=0)[-2])
        ok = margin > 1e-6
        assert np.array_equal(owner[ok], best[ok])

    def test_erp_bilinear_wraps_horizontally(self):
        erp = np.zeros((4, 8, 3))
        erp[:, 0] = 1.0
        # Sampling half a pixel left of column 0 mixes columns 7 and 0.
        val = sample_erp_bilinear(erp, np.array([-0.5]), np.array([1.0]))
        assert val[0, 0] == pytest.approx(0.5)

    def test_cut_perspective_faces_matches_render_mapping(self):
        """The pinhole cutter at fov 90 agrees with the grid mapping at the
        face center and spans the same 90 degree cone."""
        erp = smooth_erp(64, 0)
        faces = cut_perspective_faces(erp, 65, math.pi / 2)
        grid_faces = erp_to_cubemap(erp, 65, 0)
        # Centers coincide exactly; edges differ by the half-pixel scale.
        assert np.abs(faces[0][32, 32] - grid_faces[0][32, 32]).max() < 1e-12
