"""3D Gaussian scene model: parameters, covariance, init and persistence.

A scene is stored struct-of-arrays for speed; ``Gaussian3D`` is the
single-splat record view. Scales live in log domain and opacity as a
logit so unconstrained gradient steps keep the parameters valid;
quaternions are renormalized after every optimizer step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Gaussian3D",
    "GaussianScene",
    "SceneFormatError",
    "quat_to_rot",
    "covariance3d",
    "init_random",
    "save_scene",
    "load_scene",
    "export_ply",
]

SCENE_MAGIC = b"TPGS"
SCENE_VERSION = 1

MIN_LOG_SCALE = np.log(1e-7)
MAX_LOG_SCALE = np.log(1e3)


class SceneFormatError(ValueError):
    """Raised when a scene file is malformed; carries the bad record index."""

    def __init__(self, message: str, record: int | None = None):
        if record is not None:
            message = f"{message} (record {record})"
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class Gaussian3D:
    """One splat: position, unit quaternion (w, x, y, z), log scales,
    opacity logit and RGB color."""

    mu: np.ndarray
    rot_q: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)


@dataclass
class GaussianScene:
    """Growable collection of Gaussians plus background color and bounds."""

    mu: np.ndarray
    rot_q: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bounds: np.ndarray = field(default_factory=lambda: np.array([[-1.0] * 3, [1.0] * 3]))

    def __len__(self) -> int:
        return self.mu.shape[0]

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mu=self.mu[i].copy(),
            rot_q=self.rot_q[i].copy(),
            log_scale=self.log_scale[i].copy(),
            opacity_logit=float(self.opacity_logit[i]),
            color=self.color[i].copy(),
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            mu=self.mu.copy(),
            rot_q=self.rot_q.copy(),
            log_scale=self.log_scale.copy(),
            opacity_logit=self.opacity_logit.copy(),
            color=self.color.copy(),
            background=self.background.copy(),
            bounds=self.bounds.copy(),
        )

    def opacity(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))

    def validate_finite(self) -> None:
        for name in ("mu", "rot_q", "log_scale", "opacity_logit", "color"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in scene field '{name}'")

    def clamp_parameters(self) -> None:
        """Renormalize quaternions and clamp scales; call after each step."""
        norms = np.linalg.norm(self.rot_q, axis=1, keepdims=True)
        np.divide(self.rot_q, norms, out=self.rot_q, where=norms > 0)
        self.rot_q[norms[:, 0] == 0] = np.array([1.0, 0.0, 0.0, 0.0])
        np.clip(self.log_scale, MIN_LOG_SCALE, MAX_LOG_SCALE, out=self.log_scale)


def empty_scene(background=(0.0, 0.0, 0.0)) -> GaussianScene:
    return GaussianScene(
        mu=np.zeros((0, 3)),
        rot_q=np.zeros((0, 4)),
        log_scale=np.zeros((0, 3)),
        opacity_logit=np.zeros(0),
        color=np.zeros((0, 3)),
        background=np.asarray(background, dtype=np.float64),
    )


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices of (w, x, y, z) quaternions; normalizes first.

    Accepts shape (..., 4), returns (..., 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def covariance3d(g: Gaussian3D) -> np.ndarray:
    """Covariance R diag(s^2) R^T of one Gaussian; symmetric positive definite."""
    r = quat_to_rot(g.rot_q)
    s2 = np.exp(g.log_scale) ** 2
    return (r * s2[None, :]) @ r.T


def scene_covariances(scene: GaussianScene) -> np.ndarray:
    """Covariances of all Gaussians, shape (N, 3, 3)."""
    r = quat_to_rot(scene.rot_q)
    s2 = np.exp(scene.log_scale) ** 2
    return np.einsum("nij,nj,nkj->nik", r, s2, r)


def _mean_nn_distance(points: np.ndarray) -> float:
    # Brute-force over a subsample; fine for the <= 1000 points used here.
    n = points.shape[0]
    if n < 2:
        return 0.0
    sub = points[: min(n, 1000)]
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min(axis=1)).mean())


def init_random(n: int, bounds: np.ndarray, seed: int) -> GaussianScene:
    """Scene of n random Gaussians uniform in an axis-aligned box.

    Isotropic scale is half the mean nearest-neighbor distance (estimated
    on a 1000-point subsample), opacity starts at 0.1 and colors are
    uniform in [0, 1]. Deterministic in the seed.
    """
    if n < 1:
        raise ValueError("need at least one Gaussian")
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    extent = bounds[1] - bounds[0]
    if not (extent > 0).all():
        raise ValueError("bounds must be a non-degenerate box")
    rng = np.random.default_rng(seed)
    mu = bounds[0] + rng.random((n, 3)) * extent
    color = rng.random((n, 3))
    nn = _mean_nn_distance(mu) if n > 1 else float(extent.mean()) / 2.0
    scale = max(nn / 2.0, 1e-6)
    scene = GaussianScene(
        mu=mu,
        rot_q=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        log_scale=np.full((n, 3), np.log(scale)),
        opacity_logit=np.full(n, float(np.log(0.1 / 0.9))),
        color=color,
        bounds=bounds.copy(),
    )
    scene.clamp_parameters()
    return scene


_RECORD = struct.Struct("<14f")
_HEADER = struct.Struct("<4sIQ")


def save_scene(scene: GaussianScene, path) -> None:
    """Write the binary scene file (little-endian, f32 records)."""
    n = len(scene)
    rec = np.empty((n, 14), dtype="<f4")
    rec[:, 0:3] = scene.mu
    rec[:, 3:7] = scene.rot_q
    rec[:, 7:10] = scene.log_scale
    rec[:, 10] = scene.opacity_logit
    rec[:, 11:14] = scene.color
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SCENE_MAGIC, SCENE_VERSION, n))
        fh.write(rec.tobytes())


def load_scene(path) -> GaussianScene:
    """Read a binary scene file; validates header and per-record finiteness."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SceneFormatError("truncated header")
        magic, version, count = _HEADER.unpack(head)
        if magic != SCENE_MAGIC:
            raise SceneFormatError(f"bad magic {magic!r}")
        if version != SCENE_VERSION:
            raise SceneFormatError(f"unsupported version {version}")
        payload = fh.read()
    expected = count * _RECORD.size
    if len(payload) != expected:
        raise SceneFormatError(
            f"expected {expected} payload bytes for {count} records, got {len(payload)}"
        )
    rec = np.frombuffer(payload, dtype="<f4").reshape(count, 14)
    bad = ~np.isfinite(rec).all(axis=1)
    if bad.any():
        raise SceneFormatError("non-finite parameter", record=int(np.argmax(bad)))
    rec = rec.astype(np.float64)
    return GaussianScene(
        mu=rec[:, 0:3].copy(),
        rot_q=rec[:, 3:7].copy(),
        log_scale=rec[:, 7:10].copy(),
        opacity_logit=rec[:, 10].copy(),
        color=rec[:, 11:14].copy(),
    )


def export_ply(scene: GaussianScene, path) -> None:
    """Plain-text PLY with positions and 8-bit colors, for external viewers."""
    n = len(scene)
    rgb = np.clip(np.round(scene.color * 255.0), 0, 255).astype(np.uint8)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(n):
            x, y, z = scene.mu[i]
            r, g, b = rgb[i]
            fh.write(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n")
