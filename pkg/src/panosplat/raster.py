"""Tile-based perspective rasterizer for 3D Gaussians.

Projection follows the first-order (EWA) approximation: a Gaussian with
world covariance S seen by a camera [R|T] lands on the image as a 2D
Gaussian with covariance J R S R^T J^T + lp * I, where J is the
perspective Jacobian at the camera-frame mean and lp is a small isotropic
low-pass term that keeps sub-pixel splats well conditioned.

Pixel mapping: u = f * tx / tz + (W-1)/2, v = f * ty / tz + (H-1)/2 with
f = (W/2) / tan(fov/2); the row coordinate grows with camera +y, matching
the face-image convention in :mod:`panosplat.sphergeo`.

The backward pass is analytic and exact for the implemented forward
formula, including the parameterization (log scales, opacity logit,
quaternion normalization). It does not differentiate through the depth
sort or the contribution gates, which are piecewise constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .scene import GaussianScene, Gaussian3D, quat_to_rot
from .sphergeo import CameraPose

__all__ = [
    "PerspectiveIntrinsics",
    "SplatPrimitive2D",
    "RenderOutput",
    "ParamGradients",
    "project_gaussian",
    "rasterize",
    "rasterize_backward",
    "LAMBDA_LP",
]

LAMBDA_LP = 0.3  # px^2, low-pass dilation of the 2D covariance diagonal
W_FLOOR = _kernels.W_FLOOR
T_EPS = _kernels.T_EPS


@dataclass(frozen=True)
class PerspectiveIntrinsics:
    """Pinhole intrinsics: square pixels, principal point at image center."""

    fov: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.fov < math.pi):
            raise ValueError("fov must lie in (0, pi)")
        if not (0.0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(self.fov / 2.0)


@dataclass(frozen=True)
class SplatPrimitive2D:
    """A projected Gaussian: screen mean, 2D covariance/conic, depth,
    opacity and color."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: float
    alpha: float
    color: np.ndarray


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray
    alpha_map: np.ndarray
    contrib_count: np.ndarray


@dataclass
class ParamGradients:
    """Per-Gaussian loss gradients, aligned with the scene arrays.

    ``mean2d`` holds the accumulated screen-space positional gradient,
    which the densification heuristic consumes.
    """

    mu: np.ndarray
    rot_q: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    mean2d: np.ndarray
    visible: np.ndarray


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _project_arrays(scene: GaussianScene, pose: CameraPose, intr: PerspectiveIntrinsics):
    """Project all Gaussians; returns the per-splat arrays of the survivors
    sorted front to back, plus their original indices."""
    r = np.asarray(pose.r_wc, dtype=np.float64)
    tvec = np.asarray(pose.t, dtype=np.float64)
    f = intr.focal
    cx = (intr.width - 1) / 2.0
    cy = (intr.height - 1) / 2.0

    t = scene.mu @ r.T + tvec
    tz = t[:, 2]
    alpha = _sigmoid(scene.opacity_logit)
    keep = (tz > intr.near) & (tz < intr.far) & (alpha > W_FLOOR)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return None

    t = t[idx]
    tz = t[:, 2]
    alpha = alpha[idx]

    # Angular frustum cull. A splat far outside the view cone cannot reach
    # the contribution floor at any in-image pixel, but its planar EWA
    # projection degenerates (tz -> 0 blows up the Jacobian) and would
    # smear a ghost across the image; drop it before projecting.
    dist = np.linalg.norm(t, axis=1)
    ang = np.arccos(np.clip(tz / dist, -1.0, 1.0))
    half_diag = math.atan(math.sqrt(2.0) * math.tan(intr.fov / 2.0))
    beta = np.minimum(np.maximum(ang - half_diag, 0.0), math.pi / 2.0)
    d_perp = dist * np.sin(beta)
    sigma_max = np.exp(scene.log_scale[idx].max(axis=1))
    sigma_eff = np.sqrt(sigma_max**2 + LAMBDA_LP * (tz / f) ** 2)
    in_cone = d_perp <= sigma_eff * np.sqrt(2.0 * np.log(255.0 * alpha))
    idx = idx[in_cone]
    if idx.size == 0:
        return None
    t, tz, alpha = t[in_cone], tz[in_cone], alpha[in_cone]
    dist, ang = dist[in_cone], ang[in_cone]

    u = f * t[:, 0] / tz + cx
    v = f * t[:, 1] / tz + cy

    # The Jacobian is evaluated at the camera-frame position clamped into
    # the view cone (preserving distance). Inside the frustum this is the
    # position itself; for splats beyond the cone, whose linearization at
    # the true position degenerates as tz -> 0, it yields the bounded
    # ellipse the splat would show where it enters the image corner. Their
    # true means stay far outside the image, so the in-image response dies
    # out instead of smearing.
    clamped = ang > half_diag
    t_eval = t.copy()
    if clamped.any():
        perp = t[clamped].copy()
        perp[:, 2] = 0.0
        norm = np.linalg.norm(perp, axis=1, keepdims=True)
        perp_hat = np.where(norm > 1e-12, perp / np.maximum(norm, 1e-12),
                            np.array([1.0, 0.0, 0.0]))
        cone_dir = perp_hat * math.sin(half_diag)
        cone_dir[:, 2] = math.cos(half_diag)
        t_eval[clamped] = dist[clamped, None] * cone_dir
    tz_eval = t_eval[:, 2]

    rot = quat_to_rot(scene.rot_q[idx])
    s2 = np.exp(scene.log_scale[idx]) ** 2
    sigma = np.einsum("nij,nj,nkj->nik", rot, s2, rot)

    jac = np.zeros((idx.size, 2, 3))
    jac[:, 0, 0] = f / tz_eval
    jac[:, 1, 1] = f / tz_eval
    jac[:, 0, 2] = -f * t_eval[:, 0] / tz_eval**2
    jac[:, 1, 2] = -f * t_eval[:, 1] / tz_eval**2
    m = jac @ r
    cov2d = np.einsum("nij,njk,nlk->nil", m, sigma, m)
    cov2d[:, 0, 0] += LAMBDA_LP
    cov2d[:, 1, 1] += LAMBDA_LP

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    # Cutoff radius at which alpha * G is guaranteed below the contribution
    # floor; at least the conventional 3 sigma.
    r_cut = np.sqrt(2.0 * lam_max * np.log(255.0 * alpha)) + 1e-6
    r_cut = np.maximum(r_cut, 3.0 * np.sqrt(lam_max))

    on_screen = (
        (u + r_cut >= -0.5)
        & (u - r_cut <= intr.width - 0.5)
        & (v + r_cut >= -0.5)
        & (v - r_cut <= intr.height - 0.5)
        & (det > 0.0)
    )
    idx = idx[on_screen]
    if idx.size == 0:
        return None
    sel = on_screen
    t, tz, alpha, u, v = t[sel], tz[sel], alpha[sel], u[sel], v[sel]
    t_eval, clamped = t_eval[sel], clamped[sel]
    rot, s2, sigma, jac, m, cov2d = (
        rot[sel], s2[sel], sigma[sel], jac[sel], m[sel], cov2d[sel],
    )
    a, b, c, det, r_cut = a[sel], b[sel], c[sel], det[sel], r_cut[sel]

    conic = np.stack([c / det, -b / det, a / det], axis=1)
    order = np.argsort(tz, kind="stable")
    return {
        "index": idx[order],
        "t": t[order],
        "t_eval": t_eval[order],
        "clamped": clamped[order],
        "half_diag": half_diag,
        "alpha": alpha[order],
        "mean2d": np.stack([u, v], axis=1)[order],
        "conic": conic[order],
        "cov2d": cov2d[order],
        "rot": rot[order],
        "s2": s2[order],
        "sigma": sigma[order],
        "m": m[order],
        "radius": r_cut[order],
        "color": scene.color[idx][order],
        "r_wc": r,
        "focal": f,
    }


def project_gaussian(g: Gaussian3D, pose: CameraPose, intr: PerspectiveIntrinsics):
    """Project a single Gaussian; returns None when it is culled."""
    scene = GaussianScene(
        mu=g.mu[None, :],
        rot_q=g.rot_q[None, :],
        log_scale=g.log_scale[None, :],
        opacity_logit=np.array([g.opacity_logit]),
        color=g.color[None, :],
    )
    proj = _project_arrays(scene, pose, intr)
    if proj is None:
        return None
    return SplatPrimitive2D(
        mean2d=proj["mean2d"][0],
        cov2d=proj["cov2d"][0],
        conic=proj["conic"][0],
        depth=float(proj["t"][0, 2]),
        alpha=float(proj["alpha"][0]),
        color=proj["color"][0],
    )


def _background_output(scene, intr) -> RenderOutput:
    img = np.broadcast_to(scene.background, (intr.height, intr.width, 3)).copy()
    return RenderOutput(
        image=img,
        alpha_map=np.zeros((intr.height, intr.width)),
        contrib_count=np.zeros((intr.height, intr.width), dtype=np.int64),
    )


def rasterize(scene: GaussianScene, pose: CameraPose, intr: PerspectiveIntrinsics) -> RenderOutput:
    """Render the scene with depth-sorted front-to-back alpha compositing."""
    scene.validate_finite()
    if len(scene) == 0:
        return _background_output(scene, intr)
    proj = _project_arrays(scene, pose, intr)
    if proj is None:
        return _background_output(scene, intr)
    offsets, ids, ntx, nty = _kernels.build_tile_lists(
        proj["mean2d"], proj["radius"], intr.width, intr.height, _kernels.TILE
    )
    image, trans, ncontrib = _kernels.forward(
        proj["mean2d"], proj["conic"], proj["alpha"], proj["color"],
        np.asarray(scene.background, dtype=np.float64),
        offsets, ids, ntx, nty, intr.width, intr.height, _kernels.TILE,
    )
    return RenderOutput(image=image, alpha_map=1.0 - trans, contrib_count=ncontrib)


# Entrywise derivatives of the rotation matrix w.r.t. a unit quaternion
# (w, x, y, z); rows follow the matrix layout in scene.quat_to_rot.
def _rot_grad_q(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack([
        zero, -2 * z, 2 * y,
        2 * z, zero, -2 * x,
        -2 * y, 2 * x, zero,
    ], axis=1).reshape(-1, 3, 3)
    dx = np.stack([
        zero, 2 * y, 2 * z,
        2 * y, -4 * x, -2 * w,
        2 * z, 2 * w, -4 * x,
    ], axis=1).reshape(-1, 3, 3)
    dy = np.stack([
        -4 * y, 2 * x, 2 * w,
        2 * x, zero, 2 * z,
        -2 * w, 2 * z, -4 * y,
    ], axis=1).reshape(-1, 3, 3)
    dz = np.stack([
        -4 * z, -2 * w, 2 * x,
        2 * w, -4 * z, 2 * y,
        2 * x, 2 * y, zero,
    ], axis=1).reshape(-1, 3, 3)
    return dw, dx, dy, dz


def rasterize_backward(scene: GaussianScene, pose: CameraPose,
                       intr: PerspectiveIntrinsics, grad_image: np.ndarray) -> ParamGradients:
    """Gradients of sum(grad_image * rendered_image) w.r.t. all parameters.

    Recomputes the projection and replays the compositing, so the result
    always matches the scene as passed in.
    """
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (intr.height, intr.width, 3):
        raise ValueError("grad_image shape does not match the intrinsics")
    if not np.isfinite(grad_image).all():
        raise ValueError("grad_image must be finite")
    scene.validate_finite()

    n = len(scene)
    grads = ParamGradients(
        mu=np.zeros((n, 3)),
        rot_q=np.zeros((n, 4)),
        log_scale=np.zeros((n, 3)),
        opacity_logit=np.zeros(n),
        color=np.zeros((n, 3)),
        mean2d=np.zeros((n, 2)),
        visible=np.zeros(n, dtype=bool),
    )
    if n == 0:
        return grads
    proj = _project_arrays(scene, pose, intr)
    if proj is None:
        return grads

    offsets, ids, ntx, nty = _kernels.build_tile_lists(
        proj["mean2d"], proj["radius"], intr.width, intr.height, _kernels.TILE
    )
    g_mean, g_conic, g_alpha, g_color = _kernels.backward(
        proj["mean2d"], proj["conic"], proj["alpha"], proj["color"],
        np.asarray(scene.background, dtype=np.float64),
        offsets, ids, ntx, nty, intr.width, intr.height, _kernels.TILE,
        grad_image,
    )

    t = proj["t"]
    tz = t[:, 2]
    alpha = proj["alpha"]
    m = proj["m"]
    sigma = proj["sigma"]
    rot = proj["rot"]
    s2 = proj["s2"]
    r_wc = proj["r_wc"]
    f = proj["focal"]
    cov2d = proj["cov2d"]

    # conic -> 2D covariance: conic = inv(cov2d)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    q_mat = np.empty_like(cov2d)
    q_mat[:, 0, 0] = cov2d[:, 1, 1] / det
    q_mat[:, 1, 1] = cov2d[:, 0, 0] / det
    q_mat[:, 0, 1] = q_mat[:, 1, 0] = -cov2d[:, 0, 1] / det
    gq = np.empty_like(cov2d)
    gq[:, 0, 0] = g_conic[:, 0]
    gq[:, 1, 1] = g_conic[:, 2]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * g_conic[:, 1]
    d_cov2d = -np.einsum("nij,njk,nkl->nil", q_mat, gq, q_mat)

    # cov2d = M Sigma M^T + lp I
    d_sigma = np.einsum("nki,nkl,nlj->nij", m, d_cov2d, m)
    d_m = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov2d, m, sigma)
    d_jac = np.einsum("nij,kj->nik", d_m, r_wc)

    # Screen mean and Jacobian entries -> camera-frame position. The mean
    # path uses the true position; the Jacobian path goes through the
    # cone-clamped evaluation point, whose derivative is the cone
    # projection for clamped splats.
    gu = g_mean[:, 0]
    gv = g_mean[:, 1]
    t_ev = proj["t_eval"]
    tz_ev = t_ev[:, 2]
    g_e = np.empty_like(t)
    g_e[:, 0] = d_jac[:, 0, 2] * (-f / tz_ev**2)
    g_e[:, 1] = d_jac[:, 1, 2] * (-f / tz_ev**2)
    g_e[:, 2] = (
        (d_jac[:, 0, 0] + d_jac[:, 1, 1]) * (-f / tz_ev**2)
        + d_jac[:, 0, 2] * (2.0 * f * t_ev[:, 0] / tz_ev**3)
        + d_jac[:, 1, 2] * (2.0 * f * t_ev[:, 1] / tz_ev**3)
    )
    d_t = np.zeros_like(t)
    d_t[:, 0] = gu * f / tz
    d_t[:, 1] = gv * f / tz
    d_t[:, 2] = -gu * f * t[:, 0] / tz**2 - gv * f * t[:, 1] / tz**2
    cl = proj["clamped"]
    d_t[~cl] += g_e[~cl]
    if cl.any():
        # t_eval = |t| * c(t_hat) with c on the cone surface: route the
        # gradient through the radial and tangential parts of the map.
        tc = t[cl]
        dist = np.linalg.norm(tc, axis=1)
        c_dir = t_ev[cl] / dist[:, None]
        radial = np.einsum("ni,ni->n", g_e[cl], c_dir)
        d_t[cl] += radial[:, None] * tc / dist[:, None]
        perp = tc[:, :2]
        pn = np.linalg.norm(perp, axis=1)
        p_hat = perp / np.maximum(pn, 1e-12)[:, None]
        gxy = g_e[cl][:, :2]
        tang = (gxy - p_hat * np.einsum("ni,ni->n", p_hat, gxy)[:, None])
        scale = dist * math.sin(proj["half_diag"]) / np.maximum(pn, 1e-12)
        add = np.zeros_like(tc)
        add[:, :2] = tang * scale[:, None]
        d_t[cl] += add
    d_mu = d_t @ r_wc

    # Sigma = R diag(s^2) R^T
    d_rot = 2.0 * np.einsum("nij,njk,nk->nik", d_sigma, rot, s2)
    d_s2 = np.einsum("nji,njk,nki->ni", rot, d_sigma, rot)
    d_log_scale = 2.0 * s2 * d_s2  # ds2/dls = 2 s^2

    q = scene.rot_q[proj["index"]]
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    q_hat = q / qn
    dw, dx, dy, dz = _rot_grad_q(q_hat)
    d_qhat = np.stack([
        np.einsum("nij,nij->n", d_rot, dw),
        np.einsum("nij,nij->n", d_rot, dx),
        np.einsum("nij,nij->n", d_rot, dy),
        np.einsum("nij,nij->n", d_rot, dz),
    ], axis=1)
    d_q = (d_qhat - q_hat * np.sum(q_hat * d_qhat, axis=1, keepdims=True)) / qn

    d_logit = alpha * (1.0 - alpha) * g_alpha

    sel = proj["index"]
    grads.mu[sel] = d_mu
    grads.rot_q[sel] = d_q
    grads.log_scale[sel] = d_log_scale
    grads.opacity_logit[sel] = d_logit
    grads.color[sel] = g_color
    grads.mean2d[sel] = g_mean
    grads.visible[sel] = True
    return grads
