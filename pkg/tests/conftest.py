import math

import numpy as np
import pytest

from panosplat.scene import GaussianScene
from panosplat.sphergeo import CameraPose, erp_pixel_dirs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng) -> CameraPose:
    r = random_rotation(rng)
    return CameraPose(r_wc=r, t=rng.normal(scale=0.3, size=3))


def random_scene(rng, n, depth_range=(1.2, 2.5), sigma=(0.05, 0.15),
                 background=(0.0, 0.0, 0.0)) -> GaussianScene:
    """Random well-conditioned scene in front of the identity camera."""
    z = rng.uniform(*depth_range, n)
    xy = rng.uniform(-0.5, 0.5, (n, 2)) * z[:, None]
    mu = np.concatenate([xy, z[:, None]], axis=1)
    return GaussianScene(
        mu=mu,
        rot_q=rng.normal(size=(n, 4)),
        log_scale=np.log(rng.uniform(*sigma, (n, 3))),
        opacity_logit=rng.uniform(-1.0, 2.0, n),
        color=rng.random((n, 3)),
        background=np.asarray(background, dtype=np.float64),
    )


def smooth_erp(h: int, kind: int = 0) -> np.ndarray:
    """Smooth-on-the-sphere test panoramas (periodic in longitude)."""
    d = erp_pixel_dirs(h, 2 * h)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    if kind == 0:
        img = np.stack([0.5 + 0.4 * x, 0.5 + 0.4 * y, 0.5 + 0.4 * z], -1)
    elif kind == 1:
        img = np.stack([0.5 + 0.3 * x * y, 0.5 + 0.3 * np.sin(math.pi * z),
                        0.5 + 0.4 * y], -1)
    elif kind == 2:
        img = np.stack([0.5 + 0.25 * (x * x - y * y), 0.5 + 0.4 * z * y,
                        0.5 + 0.3 * x * z], -1)
    elif kind == 3:
        img = np.stack([0.4 + 0.3 * np.cos(2 * math.pi * x) * y,
                        0.5 + 0.2 * z, 0.6 - 0.3 * y * y], -1)
    else:
        img = np.stack([0.5 + 0.2 * np.sin(3 * y), 0.5 + 0.3 * x * z,
                        0.5 + 0.25 * (z * z - x * x)], -1)
    return np.clip(img, 0.0, 1.0)
