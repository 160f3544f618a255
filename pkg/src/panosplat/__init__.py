"""Panoramic 3D Gaussian splatting with perspective cube-face rendering.

The pipeline renders a scene of 3D Gaussians into the six cube faces of a
panorama plus six 45-degree transition views, stitches them back into an
equirectangular image through padded spherical sampling, and optimizes the
Gaussians in two stages: per-view first, then on the stitched panorama.
"""

from .dataio import PanoDataset, load_dataset, make_synthetic, oracle_render_erp
from .optim import TrainConfig, TrainReport, photometric_loss, train
from .panocompose import compose_er, rotate_erp_yaw, stitch_views
from .quality import psnr, seam_score, ssim
from .raster import PerspectiveIntrinsics, project_gaussian, rasterize, rasterize_backward
from .scene import Gaussian3D, GaussianScene, covariance3d, init_random, load_scene, save_scene
from .sphergeo import (
    CameraPose,
    CubeFace,
    base_view_poses,
    cubemap_to_erp,
    dir_to_spherical,
    erp_to_cubemap,
    face_grid,
    padded_fov,
    spherical_to_erp_pixel,
    transition_view_poses,
)

__version__ = "0.1.0"

__all__ = [
    "CameraPose", "CubeFace", "Gaussian3D", "GaussianScene", "PanoDataset",
    "PerspectiveIntrinsics", "TrainConfig", "TrainReport",
    "base_view_poses", "compose_er", "covariance3d", "cubemap_to_erp",
    "dir_to_spherical", "erp_to_cubemap", "face_grid", "init_random",
    "load_dataset", "load_scene", "make_synthetic", "oracle_render_erp",
    "padded_fov", "photometric_loss", "project_gaussian", "psnr",
    "rasterize", "rasterize_backward", "rotate_erp_yaw", "save_scene",
    "seam_score", "spherical_to_erp_pixel", "ssim", "stitch_views", "train",
    "transition_view_poses",
]
