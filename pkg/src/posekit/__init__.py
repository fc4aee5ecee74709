"""Monocular spacecraft pose estimation toolkit.

Geometry and EPnP pose recovery, heatmap keypoint targets and decoding,
RoI cropping, augmentation, a numpy ViTPose-style network, synthetic
close/far-range scenarios and the pose error metrics.
"""

from .errors import PoseKitError
from .geometry import (CameraModel, KeypointModel, Pose, Quaternion, camera_from_fov, project,
                       quat_rotate, speed_camera)
from .heatmap import HeatmapStack, decode, ensemble, mse_loss, render_targets
from .metrics import HIL_THRESHOLDS, NO_THRESHOLDS, PoseError, Thresholds, aggregate, pose_error
from .pnp import Correspondences, PnpSolution, refine_gauss_newton, reprojection_rms, solve_epnp
from .roi import CropTransform, RoiBox, crop_resize, enlarge, jitter, map_to_crop, map_to_original, squarify

__version__ = "0.1.0"
