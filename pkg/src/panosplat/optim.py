"""Two-stage training: per-view photometric fitting, then panoramic fine-tune.

Stage 1 optimizes the Gaussians against the individual (padded) cube-face
and transition views of every training pose, with periodic split/prune
control. Stage 2 renders all views of a pose, stitches them into the
composite panorama and optimizes the same photometric objective in the
stitched ERP domain, chaining the gradient back through the average, the
-45 degree yaw and the stitch resampling weights into the per-view
renders. Densification only runs in stage 1; stage 2 fine-tunes a frozen
topology.

Everything is deterministic given the config seed: the view schedule is
round-robin and the optimizer state depends only on the gradient history.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from . import panocompose, quality
from .dataio import PanoDataset, quantize_srgb
from .raster import ParamGradients, PerspectiveIntrinsics, rasterize, rasterize_backward
from .scene import GaussianScene, init_random, quat_to_rot
from .sphergeo import (
    CameraPose,
    base_view_poses,
    cut_perspective_faces,
    padded_fov,
    transition_view_poses,
)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "load_config",
    "d_ssim",
    "photometric_loss",
    "train",
    "train_intra",
    "train_inter",
    "render_pano",
    "evaluate_heldout",
]

PARAM_GROUPS = ("mu", "rot_q", "log_scale", "opacity_logit", "color")


@dataclass
class TrainConfig:
    lambda1: float = 0.8
    lambda2: float = 0.2
    stage1_iters: int = 700
    stage2_iters: int = 300
    lr_position: float = 1.6e-4
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_position_decay: float = 0.01  # final/initial ratio over the run
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    prune_opacity_threshold: float = 0.02
    max_gaussians: int = 256
    padding_p: int = 8
    face_res: int = 64
    seed: int = 0
    init_count: int = 64
    bounds: tuple = (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)
    near: float = 0.01
    far: float = 100.0
    background: tuple = (0.0, 0.0, 0.0)
    use_tp: bool = True
    use_op: bool = True
    use_cp: bool = True

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        for name in ("lr_position", "lr_rotation", "lr_scale", "lr_opacity", "lr_color"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.padding_p < 0:
            raise ValueError("padding_p must be non-negative")

    @property
    def effective_padding(self) -> int:
        return self.padding_p if self.use_cp else 0

    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)


_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def load_config(path) -> tuple:
    """Parse a flat key=value config file with # comments.

    Returns (TrainConfig, extras) where extras holds keys that are not
    hyperparameters (e.g. dataset paths), resolved relative to the config
    file's directory.
    """
    path = Path(path)
    known = {f.name: f for f in dc_fields(TrainConfig)}
    values: dict = {}
    extras: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in ("dataset", "out_scene", "report"):
            extras[key] = str((path.parent / val).resolve())
            continue
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        ftype = known[key].type
        try:
            if ftype == "bool":
                values[key] = _BOOL_STRINGS[val.lower()]
            elif ftype == "int":
                values[key] = int(val)
            elif ftype == "float":
                values[key] = float(val)
            elif ftype == "tuple":
                values[key] = tuple(float(tok) for tok in val.replace(",", " ").split())
            else:
                values[key] = val
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return TrainConfig(**values), extras


@dataclass
class TrainReport:
    """Per-iteration series plus final held-out metrics."""

    rows: list = field(default_factory=list)  # (iteration, stage, loss, count)
    wall_clock: dict = field(default_factory=dict)
    final_metrics: dict = field(default_factory=dict)

    def to_csv_text(self) -> str:
        lines = ["iteration,stage,loss,count"]
        for it, stage, loss, count in self.rows:
            lines.append(f"{it},{stage},{loss:.17g},{count}")
        return "\n".join(lines) + "\n"

    def summary_dict(self) -> dict:
        return {
            "iterations": len(self.rows),
            "final_loss": self.rows[-1][2] if self.rows else None,
            "wall_clock_sec": self.wall_clock,
            "final_metrics": self.final_metrics,
        }

    def write(self, csv_path, summary_path=None) -> None:
        Path(csv_path).write_text(self.to_csv_text())
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(self.summary_dict(), indent=2) + "\n")


def _adaptive_win(h: int, w: int) -> int:
    win = min(quality.SSIM_WIN, h, w)
    return win if win % 2 == 1 else win - 1


def d_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural dissimilarity (1 - SSIM) / 2 in [0, 1].

    Shrinks the SSIM window for images smaller than 11 pixels so the loss
    stays defined on tiny views.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    win = _adaptive_win(a.shape[0], a.shape[1])
    value, _ = quality.ssim_with_grad(a, b, win)
    return (1.0 - value) / 2.0


def photometric_loss(render: np.ndarray, gt: np.ndarray, cfg: TrainConfig):
    """lambda1 * L1 + lambda2 * D-SSIM with the analytic gradient in render."""
    render = np.asarray(render, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if render.shape != gt.shape:
        raise ValueError(f"shape mismatch: {render.shape} vs {gt.shape}")
    diff = render - gt
    l1 = float(np.abs(diff).mean())
    win = _adaptive_win(render.shape[0], render.shape[1])
    ssim_val, ssim_grad = quality.ssim_with_grad(render, gt, win, want_grad=True)
    loss = cfg.lambda1 * l1 + cfg.lambda2 * (1.0 - ssim_val) / 2.0
    grad = cfg.lambda1 * np.sign(diff) / diff.size - cfg.lambda2 * 0.5 * ssim_grad
    return loss, grad


class Adam:
    """Per-group adaptive-moment optimizer over the scene arrays."""

    def __init__(self, scene: GaussianScene, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}
        self.v = {g: np.zeros_like(getattr(scene, g)) for g in PARAM_GROUPS}

    def step(self, scene: GaussianScene, grads: ParamGradients, lrs: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for g in PARAM_GROUPS:
            grad = getattr(grads, g)
            self.m[g] = self.beta1 * self.m[g] + (1.0 - self.beta1) * grad
            self.v[g] = self.beta2 * self.v[g] + (1.0 - self.beta2) * grad**2
            m_hat = self.m[g] / bc1
            v_hat = self.v[g] / bc2
            getattr(scene, g)[...] -= lrs[g] * m_hat / (np.sqrt(v_hat) + self.eps)

    def keep(self, mask: np.ndarray) -> None:
        for g in PARAM_GROUPS:
            self.m[g] = self.m[g][mask]
            self.v[g] = self.v[g][mask]

    def extend(self, n_new: int) -> None:
        for g in PARAM_GROUPS:
            pad = np.zeros((n_new,) + self.m[g].shape[1:])
            self.m[g] = np.concatenate([self.m[g], pad])
            self.v[g] = np.concatenate([self.v[g], pad])


@dataclass
class _PoseBundle:
    pose: CameraPose
    gt_erp: np.ndarray
    view_poses: list       # 6 base [+ 6 transition]
    gt_faces: list         # aligned with view_poses
    intr: PerspectiveIntrinsics


def render_intrinsics(cfg: TrainConfig, erp_h: int) -> PerspectiveIntrinsics:
    """Intrinsics of the (padded) face renders.

    The image is sized so the central 90 degree core keeps the configured
    face resolution regardless of padding: n = face_res * tan(fov/2).
    With padding disabled this is exactly face_res.
    """
    p = cfg.effective_padding
    fov = padded_fov(p, erp_h)
    n_px = int(round(cfg.face_res * math.tan(fov / 2.0)))
    return PerspectiveIntrinsics(
        fov=fov, width=n_px, height=n_px, near=cfg.near, far=cfg.far
    )


def _build_bundles(dataset: PanoDataset, cfg: TrainConfig) -> list:
    p = cfg.effective_padding
    intr = render_intrinsics(cfg, dataset.erp_h)
    n_px = intr.width
    bundles = []
    for i in dataset.train_idx:
        gt_erp, pose = dataset.frames[i]
        poses = list(base_view_poses(pose))
        # Targets are cut with the renderer's pinhole mapping so every
        # view is pixel-aligned with its rasterization at the padded fov.
        faces = cut_perspective_faces(gt_erp, n_px, intr.fov)
        if cfg.use_tp:
            poses += list(transition_view_poses(pose))
            rotated = panocompose.rotate_erp_yaw(gt_erp, math.pi / 4.0)
            faces += cut_perspective_faces(rotated, n_px, intr.fov)
        bundles.append(_PoseBundle(pose, gt_erp, poses, faces, intr))
    return bundles


def _lrs_at(cfg: TrainConfig, it: int, total: int) -> dict:
    frac = it / max(total, 1)
    return {
        "mu": cfg.lr_position * cfg.lr_position_decay**frac,
        "rot_q": cfg.lr_rotation,
        "log_scale": cfg.lr_scale,
        "opacity_logit": cfg.lr_opacity,
        "color": cfg.lr_color,
    }


def _split_and_prune(scene: GaussianScene, adam: Adam, accum: np.ndarray,
                     count: np.ndarray, cfg: TrainConfig):
    """Split high-gradient Gaussians and prune transparent ones."""
    n = len(scene)
    avg = accum / np.maximum(count, 1)
    split = (avg > cfg.densify_grad_threshold) & (count > 0)
    room = max(cfg.max_gaussians - n, 0)
    if split.sum() > room:
        ranked = np.argsort(-avg)
        allowed = np.zeros(n, dtype=bool)
        allowed[ranked[:room]] = True
        split &= allowed
    idx = np.nonzero(split)[0]
    if idx.size:
        # Two children per split, offset along the major axis, scaled down.
        rot = quat_to_rot(scene.rot_q[idx])
        s = np.exp(scene.log_scale[idx])
        major = np.argmax(s, axis=1)
        axis = rot[np.arange(idx.size), :, major]
        offset = 0.5 * s[np.arange(idx.size), major][:, None] * axis
        parent_mu = scene.mu[idx].copy()
        scene.mu[idx] = parent_mu + offset
        scene.log_scale[idx] -= math.log(1.6)
        scene.mu = np.concatenate([scene.mu, parent_mu - offset])
        scene.rot_q = np.concatenate([scene.rot_q, scene.rot_q[idx]])
        scene.log_scale = np.concatenate([scene.log_scale, scene.log_scale[idx]])
        scene.opacity_logit = np.concatenate([scene.opacity_logit, scene.opacity_logit[idx]])
        scene.color = np.concatenate([scene.color, scene.color[idx]])
        adam.extend(idx.size)
    keep = scene.opacity() >= cfg.prune_opacity_threshold
    pruned = int((~keep).sum())
    if pruned:
        for g in PARAM_GROUPS:
            setattr(scene, g, getattr(scene, g)[keep])
        adam.keep(keep)
    return len(scene)


def train_intra(scene: GaussianScene, dataset: PanoDataset, cfg: TrainConfig,
                adam: Adam | None = None, iters: int | None = None,
                start_iter: int = 0, total_iters: int | None = None,
                densify: bool = True):
    """Stage 1: per-view photometric optimization with split/prune control."""
    if not dataset.train_idx:
        raise ValueError("dataset has no training frames")
    iters = cfg.stage1_iters if iters is None else iters
    total = total_iters if total_iters is not None else iters
    report = TrainReport()
    if iters == 0:
        return scene, report, adam
    bundles = _build_bundles(dataset, cfg)
    n_views = len(bundles[0].view_poses)
    adam = adam or Adam(scene)
    accum = np.zeros(len(scene))
    count = np.zeros(len(scene))
    t0 = time.perf_counter()
    for it in range(iters):
        bundle = bundles[(it // n_views) % len(bundles)]
        view = it % n_views
        pose = bundle.view_poses[view]
        gt = bundle.gt_faces[view]
        out = rasterize(scene, pose, bundle.intr)
        loss, grad_img = photometric_loss(out.image, gt, cfg)
        grads = rasterize_backward(scene, pose, bundle.intr, grad_img)
        adam.step(scene, grads, _lrs_at(cfg, start_iter + it, total))
        scene.clamp_parameters()
        # Screen-space gradient norms in units of a 64 px view so the
        # densify threshold is independent of the render resolution.
        norms = np.linalg.norm(grads.mean2d, axis=1) * (64.0 / bundle.intr.width)
        count += grads.visible
        if (densify and cfg.densify_interval > 0 and it > 0
                and it % cfg.densify_interval == 0):
            _split_and_prune(scene, adam, accum, count, cfg)
            accum = np.zeros(len(scene))
            count = np.zeros(len(scene))
        report.rows.append((start_iter + it, 1, loss, len(scene)))
    report.wall_clock["stage1"] = time.perf_counter() - t0
    return scene, report, adam


def render_pano(scene: GaussianScene, pose: CameraPose, erp_h: int, cfg: TrainConfig):
    """Render the composite panorama via the 6+6 view pipeline.

    Returns (panorama, base renders, transition renders); the transition
    list is empty when transition views are disabled, in which case the
    panorama is the stitched base faces alone.
    """
    p = cfg.effective_padding
    intr = render_intrinsics(cfg, erp_h)
    base = [rasterize(scene, vp, intr).image for vp in base_view_poses(pose)]
    e_c = panocompose.stitch_views(base, p, erp_h)
    if not cfg.use_tp:
        return e_c, base, []
    trans = [rasterize(scene, vp, intr).image for vp in transition_view_poses(pose)]
    e_t = panocompose.stitch_views(trans, p, erp_h)
    return panocompose.compose_er(e_c, e_t), base, trans


def erp_loss(scene: GaussianScene, dataset: PanoDataset, cfg: TrainConfig,
             indices=None) -> float:
    """Mean stitched-panorama photometric loss over the given frames."""
    indices = dataset.train_idx if indices is None else indices
    losses = []
    for i in indices:
        gt_erp, pose = dataset.frames[i]
        e_r, _, _ = render_pano(scene, pose, dataset.erp_h, cfg)
        loss, _ = photometric_loss(e_r, gt_erp, cfg)
        losses.append(loss)
    return float(np.mean(losses))


def train_inter(scene: GaussianScene, dataset: PanoDataset, cfg: TrainConfig,
                adam: Adam | None = None, iters: int | None = None,
                start_iter: int = 0, total_iters: int | None = None):
    """Stage 2: optimize the stitched composite panorama against the gt ERP."""
    if not dataset.train_idx:
        raise ValueError("dataset has no training frames")
    iters = cfg.stage2_iters if iters is None else iters
    report = TrainReport()
    if iters == 0:
        return scene, report, adam
    p = cfg.effective_padding
    erp_h = dataset.erp_h
    intr = render_intrinsics(cfg, erp_h)
    n_px = intr.width
    bundles = []
    for i in dataset.train_idx:
        gt_erp, pose = dataset.frames[i]
        bundles.append((gt_erp, list(base_view_poses(pose)),
                        list(transition_view_poses(pose)) if cfg.use_tp else []))
    adam = adam or Adam(scene)
    t0 = time.perf_counter()
    for it in range(iters):
        gt_erp, base_poses, trans_poses = bundles[it % len(bundles)]
        base = [rasterize(scene, vp, intr).image for vp in base_poses]
        e_c = panocompose.stitch_views(base, p, erp_h)
        if cfg.use_tp:
            trans = [rasterize(scene, vp, intr).image for vp in trans_poses]
            e_t = panocompose.stitch_views(trans, p, erp_h)
            e_r = panocompose.compose_er(e_c, e_t)
        else:
            e_r = e_c
        loss, grad_erp = photometric_loss(e_r, gt_erp, cfg)
        # Chain back through the average, the -45 degree yaw and the stitch.
        if cfg.use_tp:
            g_ec = 0.5 * grad_erp
            g_et = 0.5 * panocompose.rotate_erp_yaw(grad_erp, math.pi / 4.0)
        else:
            g_ec = grad_erp
            g_et = None
        total_grads = _zero_grads(scene)
        for g_face, vp in zip(panocompose.stitch_backward(g_ec, p, erp_h, n_px), base_poses):
            _accumulate(total_grads, rasterize_backward(scene, vp, intr, g_face))
        if g_et is not None:
            for g_face, vp in zip(panocompose.stitch_backward(g_et, p, erp_h, n_px), trans_poses):
                _accumulate(total_grads, rasterize_backward(scene, vp, intr, g_face))
        adam.step(scene, total_grads, _lrs_at(cfg, start_iter + it, total_iters or iters))
        scene.clamp_parameters()
        report.rows.append((start_iter + it, 2, loss, len(scene)))
    report.wall_clock["stage2"] = time.perf_counter() - t0
    return scene, report, adam


def _zero_grads(scene: GaussianScene) -> ParamGradients:
    n = len(scene)
    return ParamGradients(
        mu=np.zeros((n, 3)),
        rot_q=np.zeros((n, 4)),
        log_scale=np.zeros((n, 3)),
        opacity_logit=np.zeros(n),
        color=np.zeros((n, 3)),
        mean2d=np.zeros((n, 2)),
        visible=np.zeros(n, dtype=bool),
    )


def _accumulate(total: ParamGradients, part: ParamGradients) -> None:
    for g in PARAM_GROUPS + ("mean2d",):
        getattr(total, g)[...] += getattr(part, g)
    total.visible |= part.visible


def evaluate_heldout(scene: GaussianScene, dataset: PanoDataset, cfg: TrainConfig) -> dict:
    """PSNR / SSIM / seam score of the composite panorama on the test split.

    Renders pass through 8-bit sRGB quantization first so the numbers match
    what an eval over saved PNGs reproduces.
    """
    indices = dataset.test_idx or dataset.train_idx
    ps, ss, se = [], [], []
    for i in indices:
        gt_erp, pose = dataset.frames[i]
        e_r, _, _ = render_pano(scene, pose, dataset.erp_h, cfg)
        e_r = quantize_srgb(e_r)
        ps.append(quality.psnr(e_r, gt_erp))
        ss.append(quality.ssim(e_r, gt_erp))
        se.append(quality.seam_score(e_r))
    return {
        "psnr": float(np.mean(ps)),
        "ssim": float(np.mean(ss)),
        "seam": float(np.mean(se)),
    }


def train(dataset: PanoDataset, cfg: TrainConfig, scene: GaussianScene | None = None):
    """Run the full schedule per config flags; returns (scene, report).

    With the two-stage strategy disabled the whole budget goes to stage 1.
    """
    if scene is None:
        scene = init_random(cfg.init_count, cfg.bounds_array(), cfg.seed)
        scene.background = np.asarray(cfg.background, dtype=np.float64)
    total = cfg.stage1_iters + cfg.stage2_iters
    if cfg.use_op:
        s1, s2 = cfg.stage1_iters, cfg.stage2_iters
    else:
        s1, s2 = total, 0
    scene, rep1, adam = train_intra(
        scene, dataset, cfg, iters=s1, start_iter=0, total_iters=total
    )
    report = rep1
    if s2 > 0:
        scene, rep2, adam = train_inter(
            scene, dataset, cfg, adam=adam, iters=s2, start_iter=s1, total_iters=total
        )
        report.rows += rep2.rows
        report.wall_clock.update(rep2.wall_clock)
    report.final_metrics = evaluate_heldout(scene, dataset, cfg)
    report.final_metrics["erp_loss"] = erp_loss(scene, dataset, cfg)
    return scene, report
