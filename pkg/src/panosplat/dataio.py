"""Dataset I/O, synthetic scene generation and the spherical oracle renderer.

Disk layout of a dataset directory:

    000000.png, 000001.png, ...   8-bit sRGB equirectangular frames
    poses.txt                     one line per frame: 12 floats, the
                                  row-major world-to-camera [R | T]
    split.txt (optional)          integer indices of the test frames

PNG values are decoded to linear-light floats through the standard sRGB
transfer function on load and encoded back on save; every loss and metric
in this package operates on the decoded linear values. Face images are
written flipped vertically so they view naturally; the loader undoes the
flip, keeping the in-memory row convention of :mod:`panosplat.sphergeo`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import LAMBDA_LP, W_FLOOR, T_EPS
from .scene import GaussianScene, init_random, quat_to_rot
from .sphergeo import CameraPose, erp_pixel_dirs, rot_y

__all__ = [
    "PanoDataset",
    "srgb_to_linear",
    "linear_to_srgb",
    "quantize_srgb",
    "load_erp_png",
    "save_erp_png",
    "load_face_png",
    "save_face_png",
    "load_dataset",
    "save_dataset",
    "make_synthetic",
    "oracle_render_erp",
]

_FRAME_RE = re.compile(r"^(\d{6})\.png$")


@dataclass
class PanoDataset:
    """Ordered ERP frames with poses and a train/test split."""

    frames: list  # of (image, CameraPose)
    train_idx: list
    test_idx: list
    metadata: dict = field(default_factory=dict)

    @property
    def erp_h(self) -> int:
        return self.frames[0][0].shape[0]

    @property
    def erp_w(self) -> int:
        return self.frames[0][0].shape[1]

    def __len__(self) -> int:
        return len(self.frames)


def srgb_to_linear(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return np.where(s <= 0.04045, s / 12.92, ((s + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(lin: np.ndarray) -> np.ndarray:
    lin = np.clip(np.asarray(lin, dtype=np.float64), 0.0, 1.0)
    return np.where(lin <= 0.0031308, lin * 12.92, 1.055 * lin ** (1.0 / 2.4) - 0.055)


def quantize_srgb(lin: np.ndarray) -> np.ndarray:
    """Linear image as it would round-trip through an 8-bit sRGB PNG."""
    u8 = np.round(linear_to_srgb(lin) * 255.0).astype(np.uint8)
    return srgb_to_linear(u8 / 255.0)


def load_erp_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(img)


def save_erp_png(img: np.ndarray, path) -> None:
    u8 = np.round(linear_to_srgb(img) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path)


def load_face_png(path) -> np.ndarray:
    return np.flipud(load_erp_png(path)).copy()


def save_face_png(img: np.ndarray, path) -> None:
    save_erp_png(np.flipud(img), path)


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def read_poses(path) -> list:
    poses = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 12:
                raise ValueError(f"poses line {lineno}: expected 12 floats, got {len(vals)}")
            m = np.array(vals).reshape(3, 4)
            poses.append(CameraPose(r_wc=m[:, :3].copy(), t=m[:, 3].copy()))
    return poses


def write_poses(poses, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for pose in poses:
            m = np.concatenate([pose.r_wc, pose.t[:, None]], axis=1)
            fh.write(" ".join(f"{x:.17g}" for x in m.ravel()) + "\n")


def load_dataset(dir_path, split_spec: int | str = 8) -> PanoDataset:
    """Load a dataset directory; ``split_spec`` is the every-Nth-frame test
    stride (overridden by split.txt when present)."""
    root = Path(dir_path)
    frame_files = {}
    for f in root.iterdir():
        m = _FRAME_RE.match(f.name)
        if m:
            frame_files[int(m.group(1))] = f
    if not frame_files:
        raise ValueError(f"no frames found in {root}")
    indices = sorted(frame_files)
    poses = read_poses(root / "poses.txt")
    if len(poses) < len(indices):
        raise ValueError(
            f"poses.txt has {len(poses)} lines but {len(indices)} frames exist"
        )
    frames = []
    shape = None
    for k, idx in enumerate(indices):
        img = load_erp_png(frame_files[idx])
        if img.shape[1] != 2 * img.shape[0]:
            raise ValueError(f"frame {idx}: ERP width must be twice the height")
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(f"frame {idx}: resolution {img.shape} != {shape}")
        pose = poses[k]
        err = np.abs(pose.r_wc @ pose.r_wc.T - np.eye(3)).max()
        if err > 1e-3:
            raise ValueError(f"frame {idx}: rotation not orthonormal (|R R^T - I| = {err:.2e})")
        if err > 1e-12:
            pose = CameraPose(r_wc=_nearest_rotation(pose.r_wc), t=pose.t)
        frames.append((img, pose))
    split_file = root / "split.txt"
    if split_file.exists():
        test = sorted(int(tok) for tok in split_file.read_text().split())
        bad = [i for i in test if not 0 <= i < len(frames)]
        if bad:
            raise ValueError(f"split.txt indices out of range: {bad}")
    else:
        stride = int(split_spec)
        test = list(range(stride - 1, len(frames), stride)) if stride > 0 else []
    train = [i for i in range(len(frames)) if i not in set(test)]
    return PanoDataset(
        frames=frames,
        train_idx=train,
        test_idx=test,
        metadata={"source": str(root), "erp_h": shape[0], "erp_w": shape[1]},
    )


def save_dataset(ds: PanoDataset, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for i, (img, _) in enumerate(ds.frames):
        save_erp_png(img, root / f"{i:06d}.png")
    write_poses([pose for _, pose in ds.frames], root / "poses.txt")
    with open(root / "split.txt", "w", encoding="ascii") as fh:
        fh.write("\n".join(str(i) for i in ds.test_idx) + "\n")


def make_synthetic(n_gaussians: int, n_poses: int, erp_res: int, seed: int,
                   split_spec: int = 8):
    """Random scene plus an orbiting camera rig with oracle-rendered frames.

    Starts from a uniform random scene and then conditions it for clean
    splatting: Gaussians too close to the camera orbit are pushed radially
    outward and every splat is sized to a small fraction of its nearest
    camera distance, keeping the first-order perspective projection a
    faithful approximation from all viewpoints. Frames pass through 8-bit
    sRGB quantization so the dataset is identical to what a save/load round
    trip would produce. Deterministic in seed.
    """
    if n_gaussians < 1 or n_poses < 1:
        raise ValueError("need at least one Gaussian and one pose")
    bounds = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    gt = init_random(n_gaussians, bounds, seed)
    rng = np.random.default_rng(seed + 1)
    center = bounds.mean(axis=0)
    half = 0.5 * (bounds[1] - bounds[0])
    orbit_r = 0.2 * float(half.min())
    cams = []
    poses = []
    for k in range(n_poses):
        ang = 2.0 * math.pi * k / n_poses
        cam = center + orbit_r * np.array([math.cos(ang), 0.0, math.sin(ang)])
        r_wc = rot_y(ang).T
        cams.append(cam)
        poses.append(CameraPose(r_wc=r_wc, t=-r_wc @ cam))
    # Redistribute positions isotropically around the rig center, outside
    # the orbit. Uniform-in-box positions would cluster along the box
    # diagonals, which line up with the cube-face corner seams and bias
    # seam statistics.
    min_r = 0.55 * float(half.min())
    dirs = rng.normal(size=(n_gaussians, 3))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    r_box = np.min(half[None, :] / np.maximum(np.abs(dirs), 1e-9), axis=1)
    radius = min_r + rng.random(n_gaussians) * np.maximum(r_box - min_r, 0.0)
    gt.mu = center + dirs * radius[:, None]
    # Size and opacity tuned for crisp, well-approximated splats.
    dmin = np.min(
        np.linalg.norm(gt.mu[:, None, :] - np.asarray(cams)[None, :, :], axis=2), axis=1
    )
    ratio = rng.uniform(0.08, 0.12, n_gaussians)
    gt.log_scale[:] = np.log(ratio * dmin)[:, None]
    gt.opacity_logit[:] = np.log(0.8 / 0.2) + rng.normal(0.0, 0.25, n_gaussians)
    gt.clamp_parameters()
    frames = []
    for pose in poses:
        img = quantize_srgb(oracle_render_erp(gt, pose, erp_res))
        frames.append((img, pose))
    stride = int(split_spec)
    test = list(range(stride - 1, n_poses, stride)) if stride > 0 else []
    train = [i for i in range(n_poses) if i not in set(test)]
    ds = PanoDataset(
        frames=frames,
        train_idx=train,
        test_idx=test,
        metadata={"source": f"synthetic(seed={seed})", "erp_h": erp_res, "erp_w": 2 * erp_res},
    )
    return gt, ds


ORACLE_T_EPS = T_EPS
ORACLE_W_FLOOR = W_FLOOR


def oracle_render_erp(scene: GaussianScene, pose: CameraPose, erp_h: int) -> np.ndarray:
    """Brute-force ERP render: per-pixel exact perspective along each ray.

    For every ERP pixel the scene is projected onto the pinhole tangent
    frame whose optical axis is that pixel's ray (so the projection
    Jacobian is evaluated on-axis), depth-sorted along the ray and
    composited with the same gated front-to-back rule as the rasterizer.
    O(pixels x gaussians); intended for small verification renders only.
    The tangent-frame focal is erp_h / pi pixels, the panorama's own
    vertical pixels-per-radian scale.
    """
    erp_w = 2 * erp_h
    if len(scene) == 0:
        return np.broadcast_to(scene.background, (erp_h, erp_w, 3)).copy()
    scene.validate_finite()
    dirs = erp_pixel_dirs(erp_h, erp_w).reshape(-1, 3)
    npx = dirs.shape[0]

    # Orthonormal frame per ray: rows (e1, e2, d).
    up = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(np.broadcast_to(up, dirs.shape), dirs)
    n1 = np.linalg.norm(e1, axis=1, keepdims=True)
    degenerate = n1[:, 0] < 1e-9
    if degenerate.any():
        alt = np.cross(np.broadcast_to(np.array([0.0, 0.0, 1.0]), dirs.shape), dirs)
        e1[degenerate] = alt[degenerate]
        n1 = np.linalg.norm(e1, axis=1, keepdims=True)
    e1 /= n1
    e2 = np.cross(dirs, e1)

    r = np.asarray(pose.r_wc, dtype=np.float64)
    tvec = np.asarray(pose.t, dtype=np.float64)
    cam = scene.mu @ r.T + tvec  # camera-frame centers, (N, 3)
    n = cam.shape[0]
    rot = quat_to_rot(scene.rot_q)
    s2 = np.exp(scene.log_scale) ** 2
    sigma_cam = np.einsum("ij,njk,nk,nlk,ml->nim", r, rot, s2, rot, r)
    alpha = 1.0 / (1.0 + np.exp(-scene.opacity_logit))
    focal = erp_h / math.pi

    # Per (pixel, gaussian): ray-frame coordinates.
    t1 = e1 @ cam.T   # (npx, n)
    t2 = e2 @ cam.T
    tz = dirs @ cam.T
    # Ray-frame 2x2 covariance entries of each gaussian: rows of the frame
    # against the camera-frame covariance.
    c11 = np.einsum("pi,nij,pj->pn", e1, sigma_cam, e1)
    c12 = np.einsum("pi,nij,pj->pn", e1, sigma_cam, e2)
    c22 = np.einsum("pi,nij,pj->pn", e2, sigma_cam, e2)
    with np.errstate(divide="ignore", invalid="ignore"):
        jz = focal / tz
        u = jz * t1
        v = jz * t2
        a = jz**2 * c11 + LAMBDA_LP
        b = jz**2 * c12
        c = jz**2 * c22 + LAMBDA_LP
        det = a * c - b * b
        power = -0.5 * (c * u * u + a * v * v - 2.0 * b * u * v) / det
    power = np.minimum(power, 0.0)
    w = alpha[None, :] * np.exp(power)
    valid = (tz > 0.01) & (tz < 100.0) & (det > 0.0)
    w = np.where(valid, w, 0.0)

    order = np.argsort(np.where(valid, tz, np.inf), axis=1, kind="stable")
    w_sorted = np.take_along_axis(w, order, axis=1)
    colors_sorted = scene.color[order]  # (npx, n, 3)

    out = np.zeros((npx, 3))
    trans = np.ones(npx)
    for k in range(n):
        wk = w_sorted[:, k]
        gate = (wk >= ORACLE_W_FLOOR) & (trans >= ORACLE_T_EPS)
        wk = np.where(gate, wk, 0.0)
        out += colors_sorted[:, k, :] * (wk * trans)[:, None]
        trans *= 1.0 - wk
    out += trans[:, None] * scene.background[None, :]
    return out.reshape(erp_h, erp_w, 3)
