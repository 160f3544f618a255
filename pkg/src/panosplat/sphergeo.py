"""Spherical / cubemap geometry for equirectangular panoramas.

Coordinate conventions used throughout the package:

- World and camera frames are right-handed with +y up and +z forward
  (the optical axis of the front view).
- Longitude theta = atan2(x, z) in (-pi, pi], latitude
  phi = atan2(y, sqrt(x^2 + z^2)) in [-pi/2, pi/2].
- An H x W equirectangular (ERP) image maps a direction to continuous
  pixel coordinates
      u = (theta / 2pi + 0.5) * W - 0.5
      v = (-phi / pi + 0.5) * H - 0.5,
  so integer coordinate k.0 is the center of texel k, row 0 is the top
  of the panorama (phi near +pi/2), u wraps modulo W and v clamps at
  the poles.
- The unit cube is centered at the origin with faces at +-0.5 on each
  axis: Front z=+0.5, Back z=-0.5, Left x=-0.5, Right x=+0.5,
  Up y=+0.5, Down y=-0.5.
- Face images are stored with the column index increasing along the
  face's column direction and the row index increasing along its row
  direction (see ``FACE_COL_DIRS`` / ``FACE_ROW_DIRS``); this matches
  the rasterizer's pixel mapping, whose row coordinate grows with the
  camera-frame +y of the face view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "CubeFace",
    "SphericalCoord",
    "ErpPixel",
    "CameraPose",
    "ViewSet",
    "SamplingGrid",
    "dir_to_spherical",
    "spherical_to_erp_pixel",
    "rot_x",
    "rot_y",
    "base_view_poses",
    "transition_view_poses",
    "view_set",
    "padded_fov",
    "face_pad",
    "face_grid",
    "erp_to_cubemap",
    "cubemap_to_erp",
    "sample_erp_bilinear",
    "sample_face_bilinear",
]

TRANSITION_YAW = math.pi / 4.0


class CubeFace(IntEnum):
    """Cube faces in the fixed tie-break order used everywhere."""

    FRONT = 0
    RIGHT = 1
    BACK = 2
    LEFT = 3
    UP = 4
    DOWN = 5


# Outward axis, column direction and row direction of every face, rows
# indexed by CubeFace. Columns of the face view rotation, i.e. the world
# directions that map to camera x (columns), camera y (rows) and camera z
# (optical axis) of the face view at identity pose.
FACE_AXES = np.array(
    [
        [0.0, 0.0, 1.0],   # Front
        [1.0, 0.0, 0.0],   # Right
        [0.0, 0.0, -1.0],  # Back
        [-1.0, 0.0, 0.0],  # Left
        [0.0, 1.0, 0.0],   # Up
        [0.0, -1.0, 0.0],  # Down
    ]
)
FACE_COL_DIRS = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
    ]
)
FACE_ROW_DIRS = np.array(
    [
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
    ]
)

# (rotation kind, angle) generating each face view, in CubeFace order.
_FACE_ROTATIONS = (
    ("y", 0.0),
    ("y", math.pi / 2.0),
    ("y", math.pi),
    ("y", 3.0 * math.pi / 2.0),
    ("x", -math.pi / 2.0),
    ("x", math.pi / 2.0),
)


@dataclass(frozen=True)
class SphericalCoord:
    """Longitude/latitude pair with theta in (-pi, pi], phi in [-pi/2, pi/2]."""

    theta: float
    phi: float


@dataclass(frozen=True)
class ErpPixel:
    """Continuous ERP pixel coordinate (column u, row v)."""

    u: float
    v: float


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera transform: x_cam = r_wc @ x_world + t."""

    r_wc: np.ndarray
    t: np.ndarray

    def validate(self, tol: float = 1e-12) -> None:
        r = np.asarray(self.r_wc, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"rotation not orthonormal: |R^T R - I|_max = {err:.3e}")
        det = np.linalg.det(r)
        if abs(det - 1.0) > max(tol, 1e-9):
            raise ValueError(f"rotation determinant {det} != 1")

    def camera_center(self) -> np.ndarray:
        return -self.r_wc.T @ self.t


@dataclass(frozen=True)
class ViewSet:
    """The 6 base cube-face poses plus the 6 transition poses of one camera."""

    base: tuple
    transition: tuple
    fov: float


@dataclass(frozen=True)
class SamplingGrid:
    """Dense map from (padded) face pixels to continuous ERP coordinates.

    ``coords[i, j]`` holds (u, v) for face pixel row i, column j. The grid
    has ``face_res + 2 * face_pad`` samples per axis, equally spaced over
    the padded plane range [-0.5 - 2p/H, 0.5 + 2p/H].
    """

    face: CubeFace
    face_res: int
    padding_p: int
    erp_h: int
    erp_w: int
    coords: np.ndarray

    @property
    def n_px(self) -> int:
        return self.coords.shape[0]


def dir_to_spherical(x: float, y: float, z: float) -> SphericalCoord:
    """Convert a 3D direction to (theta, phi); raises on the zero vector."""
    if x == 0.0 and y == 0.0 and z == 0.0:
        raise ValueError("direction must be non-zero")
    theta = math.atan2(x, z)
    if theta <= -math.pi:
        theta += 2.0 * math.pi
    phi = math.atan2(y, math.hypot(x, z))
    return SphericalCoord(theta, phi)


def spherical_to_erp_pixel(c: SphericalCoord, erp_h: int, erp_w: int) -> ErpPixel:
    """Map spherical coordinates to raw continuous ERP pixel coordinates."""
    if erp_h < 2 or erp_w < 2:
        raise ValueError("ERP dimensions must be at least 2")
    u = (c.theta / (2.0 * math.pi) + 0.5) * erp_w - 0.5
    v = (-c.phi / math.pi + 0.5) * erp_h - 0.5
    return ErpPixel(u, v)


def rot_x(psi: float) -> np.ndarray:
    """Rotation by psi around the x axis."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(psi: float) -> np.ndarray:
    """Rotation by psi around the y axis."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _face_rotation(face: CubeFace) -> np.ndarray:
    kind, psi = _FACE_ROTATIONS[face]
    return rot_y(psi) if kind == "y" else rot_x(psi)


def _compose_camera_rotation(q: np.ndarray, pose: CameraPose) -> CameraPose:
    # Pose followed by a pure rotation q of the camera about its own
    # center: x_view = q^T (r_wc x + t). Keeps the optical center fixed.
    return CameraPose(q.T @ pose.r_wc, q.T @ pose.t)


def base_view_poses(pose: CameraPose) -> list:
    """The six cube-face poses of a camera, in CubeFace order.

    Face views rotate the camera in its own frame, so the view set tiles
    the sphere around the pose's optical center for any input pose. The
    front view is the input pose itself.
    """
    pose.validate(tol=1e-9)
    return [_compose_camera_rotation(_face_rotation(f), pose) for f in CubeFace]


def transition_view_poses(pose: CameraPose) -> list:
    """The six transition-plane poses: base views of the 45deg-yawed camera."""
    pose.validate(tol=1e-9)
    pre = _compose_camera_rotation(rot_y(TRANSITION_YAW), pose)
    return [_compose_camera_rotation(_face_rotation(f), pre) for f in CubeFace]


def view_set(pose: CameraPose, p: int, erp_h: int) -> ViewSet:
    """All 12 view poses plus the padded field of view for rendering them."""
    return ViewSet(
        base=tuple(base_view_poses(pose)),
        transition=tuple(transition_view_poses(pose)),
        fov=padded_fov(p, erp_h),
    )


def padded_fov(p: int, erp_h: int) -> float:
    """Field of view of a cube face padded by p ERP pixels per side."""
    if p < 0:
        raise ValueError("padding must be non-negative")
    if erp_h < 2:
        raise ValueError("erp_h must be at least 2")
    return 2.0 * math.pi * p / erp_h + math.pi / 2.0


def face_pad(face_res: int, p: int, erp_h: int) -> int:
    """Padding in face pixels equivalent to p ERP pixels per side."""
    return int(round(face_res * 2.0 * p / erp_h))


def _check_padding(p: int, erp_h: int) -> None:
    if p < 0:
        raise ValueError("padding must be non-negative")
    if 2.0 * p / erp_h >= 0.5:
        raise ValueError(
            "padding too large: 2*p/erp_h must stay below 0.5 so the padded "
            "grid does not reach the opposite face's center"
        )


def _grid_axis(face_res: int, p: int, erp_h: int) -> np.ndarray:
    # Equally spaced over the padded plane range, endpoints included; at
    # p = 0 this reduces bit-exactly to linspace(-0.5, 0.5, face_res).
    half = 0.5 + 2.0 * p / erp_h
    return np.linspace(-half, half, face_res + 2 * face_pad(face_res, p, erp_h))


def face_grid(face: CubeFace, face_res: int, p: int, erp_h: int, erp_w: int) -> SamplingGrid:
    """Sampling grid of one cube face, padded by p ERP pixels per side."""
    if face_res < 2:
        raise ValueError("face_res must be at least 2")
    _check_padding(p, erp_h)
    ax = _grid_axis(face_res, p, erp_h)
    along_col, along_row = np.meshgrid(ax, ax, indexing="xy")
    pts = (
        0.5 * FACE_AXES[face]
        + along_col[..., None] * FACE_COL_DIRS[face]
        + along_row[..., None] * FACE_ROW_DIRS[face]
    )
    u, v = _dirs_to_erp(pts, erp_h, erp_w)
    return SamplingGrid(
        face=face,
        face_res=face_res,
        padding_p=p,
        erp_h=erp_h,
        erp_w=erp_w,
        coords=np.stack([u, v], axis=-1),
    )


def _dirs_to_erp(dirs: np.ndarray, erp_h: int, erp_w: int):
    """Vectorized direction -> raw ERP pixel coordinates."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    theta = np.arctan2(x, z)
    theta = np.where(theta <= -math.pi, theta + 2.0 * math.pi, theta)
    phi = np.arctan2(y, np.hypot(x, z))
    u = (theta / (2.0 * math.pi) + 0.5) * erp_w - 0.5
    v = (-phi / math.pi + 0.5) * erp_h - 0.5
    return u, v


def erp_pixel_dirs(erp_h: int, erp_w: int) -> np.ndarray:
    """Unit direction of every ERP pixel center, shape (H, W, 3)."""
    u = np.arange(erp_w, dtype=np.float64)
    v = np.arange(erp_h, dtype=np.float64)
    theta = ((u + 0.5) / erp_w - 0.5) * 2.0 * math.pi
    phi = (0.5 - (v + 0.5) / erp_h) * math.pi
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    out = np.empty((erp_h, erp_w, 3))
    out[..., 0] = cp[:, None] * st[None, :]
    out[..., 1] = np.broadcast_to(sp[:, None], (erp_h, erp_w))
    out[..., 2] = cp[:, None] * ct[None, :]
    return out


def sample_erp_bilinear(erp: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear ERP lookup with horizontal wrap and vertical clamp."""
    h, w = erp.shape[:2]
    u = np.mod(np.asarray(u, dtype=np.float64), w)
    v = np.clip(np.asarray(v, dtype=np.float64), -0.5, h - 0.5)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    u1 = np.mod(u0 + 1, w)
    u0 = np.mod(u0, w)
    v1 = np.clip(v0 + 1, 0, h - 1)
    v0 = np.clip(v0, 0, h - 1)
    fu = fu[..., None]
    fv = fv[..., None]
    return (
        erp[v0, u0] * (1.0 - fu) * (1.0 - fv)
        + erp[v0, u1] * fu * (1.0 - fv)
        + erp[v1, u0] * (1.0 - fu) * fv
        + erp[v1, u1] * fu * fv
    )


def sample_face_bilinear(face: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear face lookup, clamped on both axes."""
    h, w = face.shape[:2]
    u = np.clip(np.asarray(u, dtype=np.float64), -0.5, w - 0.5)
    v = np.clip(np.asarray(v, dtype=np.float64), -0.5, h - 0.5)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    u1 = np.clip(u0 + 1, 0, w - 1)
    v1 = np.clip(v0 + 1, 0, h - 1)
    u0 = np.clip(u0, 0, w - 1)
    v0 = np.clip(v0, 0, h - 1)
    return (
        face[v0, u0] * (1.0 - fu) * (1.0 - fv)
        + face[v0, u1] * fu * (1.0 - fv)
        + face[v1, u0] * (1.0 - fu) * fv
        + face[v1, u1] * fu * fv
    )


def cut_perspective_faces(erp: np.ndarray, n_px: int, fov: float) -> list:
    """Resample an ERP image into 6 pinhole views along the cube-face axes.

    Unlike :func:`erp_to_cubemap`, the face pixels follow the renderer's
    own pinhole mapping (focal (n/2)/tan(fov/2), principal point at the
    image center), so the result is pixel-aligned with rasterized views
    of the same fov. This is the ground-truth cutter for per-view
    supervision; padded views just use the padded fov.
    """
    erp = np.asarray(erp, dtype=np.float64)
    h, w = erp.shape[:2]
    f = (n_px / 2.0) / math.tan(fov / 2.0)
    c = (n_px - 1) / 2.0
    js = (np.arange(n_px) - c) / f
    tan_col, tan_row = np.meshgrid(js, js, indexing="xy")
    faces = []
    for face in CubeFace:
        dirs = (
            FACE_AXES[face]
            + tan_col[..., None] * FACE_COL_DIRS[face]
            + tan_row[..., None] * FACE_ROW_DIRS[face]
        )
        u, v = _dirs_to_erp(dirs, h, w)
        faces.append(sample_erp_bilinear(erp, u, v))
    return faces


def erp_to_cubemap(erp: np.ndarray, face_res: int, p: int) -> list:
    """Resample an ERP image into 6 (padded) cube faces, CubeFace order."""
    erp = np.asarray(erp, dtype=np.float64)
    if erp.ndim != 3 or erp.shape[2] != 3:
        raise ValueError("ERP image must have shape (H, W, 3)")
    h, w = erp.shape[:2]
    faces = []
    for face in CubeFace:
        grid = face_grid(face, face_res, p, h, w)
        faces.append(sample_erp_bilinear(erp, grid.coords[..., 0], grid.coords[..., 1]))
    return faces


def _face_plane_coords(dirs: np.ndarray):
    """Per-face plane coordinates (a, b) and forward depth of directions.

    Returns arrays of shape (6,) + dirs.shape[:-1]: the column coordinate a,
    the row coordinate b (both on the z=0.5 plane of the face) and the
    component of the direction along the face axis.
    """
    za = np.einsum("fk,...k->f...", FACE_AXES, dirs)
    ca = np.einsum("fk,...k->f...", FACE_COL_DIRS, dirs)
    ra = np.einsum("fk,...k->f...", FACE_ROW_DIRS, dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = 0.5 * ca / za
        b = 0.5 * ra / za
    return a, b, za


def _face_blend_weights(a: np.ndarray, b: np.ndarray, za: np.ndarray, p: int, erp_h: int) -> np.ndarray:
    """Per-face stitching weights for every direction, normalized to sum 1.

    With p = 0 this is a hard assignment to the face with the largest
    |axis component| (ties broken by CubeFace order). With p > 0 a face's
    weight is 1 inside its unpadded 90 degree frustum and falls linearly
    to 0 across the padding band.
    """
    if p == 0:
        best = np.argmax(za, axis=0)
        weights = np.zeros(za.shape)
        np.put_along_axis(weights, best[None], 1.0, axis=0)
        return weights
    limit = 0.5 + 2.0 * p / erp_h
    m = np.maximum(np.abs(a), np.abs(b))
    w = np.clip((limit - m) / (limit - 0.5), 0.0, 1.0)
    w = np.where(za > 0.0, w, 0.0)
    total = w.sum(axis=0)
    return w / total


def cubemap_to_erp(faces: list, erp_h: int, erp_w: int, p: int = 0) -> np.ndarray:
    """Reassemble an ERP image from 6 cube faces produced by erp_to_cubemap.

    Inverts the sampling-grid pixel mapping, so this is the exact inverse
    resampling of :func:`erp_to_cubemap` up to bilinear error. Overlapping
    padded regions are blended with the linear-ramp weights.
    """
    if len(faces) != 6:
        raise ValueError("expected 6 faces")
    n_px = faces[0].shape[0]
    for f in faces:
        if f.shape != faces[0].shape or f.shape[0] != f.shape[1]:
            raise ValueError("faces must be square and equally sized")
    _check_padding(p, erp_h)
    _pad_from_npx(n_px, p, erp_h)  # raises if faces and padding disagree
    half = 0.5 + 2.0 * p / erp_h
    # Inverse of the grid mapping: plane coordinate -half -> pixel 0,
    # +half -> pixel n_px - 1.
    scale = (n_px - 1) / (2.0 * half)
    dirs = erp_pixel_dirs(erp_h, erp_w)
    a, b, za = _face_plane_coords(dirs)
    weights = _face_blend_weights(a, b, za, p, erp_h)
    out = np.zeros((erp_h, erp_w, 3))
    for face in CubeFace:
        w = weights[face]
        mask = w > 0.0
        if not mask.any():
            continue
        u = (a[face][mask] + half) * scale
        v = (b[face][mask] + half) * scale
        out[mask] += w[mask, None] * sample_face_bilinear(faces[face], u, v)
    return out


def _pad_from_npx(n_px: int, p: int, erp_h: int) -> int:
    """Recover the face padding in pixels from a padded face size."""
    if p == 0:
        return 0
    for face_res in range(n_px, max(n_px // 2, 1) - 1, -1):
        pad = face_pad(face_res, p, erp_h)
        if face_res + 2 * pad == n_px:
            return pad
    raise ValueError(
        f"face size {n_px} inconsistent with padding {p} at erp_h {erp_h}"
    )
