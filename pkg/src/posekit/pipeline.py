"""End-to-end evaluation: RoI crop -> heatmaps -> decode -> EPnP -> pose error.

No network is in the loop: heatmaps are rendered from the dataset's noisy
keypoints, which isolates the geometric part of the pipeline (crop
geometry, heatmap quantization, decoding, PnP) from learned detection.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import heatmap, roi
from .errors import DataError, NoValidSolution
from .geometry import CameraModel, KeypointModel, Pose
from .metrics import NO_THRESHOLDS, PoseError, Thresholds, pose_error
from .pnp import Correspondences, solve_pnp
from .simdata import Dataset, Sample, perturb_keypoints, sample_rng

RESOLUTIONS = (224, 288, 384, 448)


@dataclass(frozen=True)
class RunConfig:
    input_resolution: int = 224
    heatmap_sigma: float = 1.0
    ensemble_size: int = 1
    refine: bool = True          # Gauss-Newton polish after EPnP
    subpixel: bool = True        # Taylor refinement in heatmap decoding
    bypass_heatmap: bool = False
    stride: int = 4
    seed: int = 0
    enlargement: float = roi.TEST_ENLARGEMENT
    thresholds: Thresholds = NO_THRESHOLDS

    def __post_init__(self):
        if self.input_resolution % 16 or self.input_resolution % self.stride:
            raise DataError(f"input resolution {self.input_resolution} must be divisible by 16")
        if self.ensemble_size < 1:
            raise DataError("ensemble_size must be >= 1")


@dataclass(frozen=True)
class SampleResult:
    id: str
    pose: Pose
    error: PoseError
    reprojection_rms: float


def detect_keypoints(sample: Sample, cfg: RunConfig, noise: tuple[float, float, float],
                     index: int) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints in original-image pixels as recovered from (ensembled) heatmaps, plus weights."""
    box = roi.test_time_box(sample.roi, cfg.enlargement)
    t = roi.CropTransform(box, cfg.input_resolution)
    size = (cfg.input_resolution, cfg.input_resolution)
    sigma, rate, mag = noise
    members = [sample.keypoints2d_noisy]
    for m in range(1, cfg.ensemble_size):
        rng = sample_rng(cfg.seed, index, m)
        members.append(perturb_keypoints(sample.keypoints2d_true, rng, sigma, rate, mag))
    # crop frame is edge-based; heatmap coords put pixel centers on integers
    stacks = [heatmap.render_targets(roi.map_to_crop(t, kp) - 0.5, size, cfg.stride,
                                     cfg.heatmap_sigma) for kp in members]
    dec = heatmap.decode(heatmap.ensemble(stacks), refine=cfg.subpixel)
    kp = roi.map_to_original(t, dec.coords + 0.5)
    return kp, (dec.confidences > 0).astype(float)


def evaluate_sample(sample: Sample, index: int, camera: CameraModel, model: KeypointModel,
                    cfg: RunConfig, noise=(0.0, 0.0, 0.0)) -> SampleResult:
    if cfg.bypass_heatmap:
        kp = np.asarray(sample.keypoints2d_noisy, dtype=float)
        w = np.ones(len(kp))
    else:
        kp, w = detect_keypoints(sample, cfg, noise, index)
    if np.count_nonzero(w) < 4:
        raise NoValidSolution(f"sample {sample.id}: fewer than 4 keypoints inside the crop")
    sol = solve_pnp(Correspondences(model.points, kp, w), camera, refine=cfg.refine)
    return SampleResult(sample.id, sol.pose, pose_error(sol.pose, sample.pose, cfg.thresholds),
                        sol.reprojection_rms)


def _eval_chunk(args):
    samples, indices, camera, model, cfg, noise = args
    return [evaluate_sample(s, i, camera, model, cfg, noise) for s, i in zip(samples, indices)]


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get("POSEKIT_WORKERS", "1") or 1)
    return max(1, workers)


def evaluate(dataset: Dataset, cfg: RunConfig, camera: Optional[CameraModel] = None,
             model: Optional[KeypointModel] = None, workers: Optional[int] = None) -> list[SampleResult]:
    """Results in sample order; identical for any worker count."""
    camera = camera or dataset.camera
    model = model or dataset.model
    if camera is None or model is None:
        raise DataError("dataset carries no camera/model; supply them explicitly")
    spec = dataset.spec
    noise = ((spec.keypoint_noise_sigma, spec.outlier_rate, spec.outlier_magnitude)
             if spec else (0.0, 0.0, 0.0))
    samples = dataset.samples
    workers = resolve_workers(workers)
    if workers == 1 or len(samples) < 2:
        return [evaluate_sample(s, i, camera, model, cfg, noise) for i, s in enumerate(samples)]
    idx = list(range(len(samples)))
    chunks = [idx[k::workers] for k in range(workers)]
    jobs = [([samples[i] for i in c], c, camera, model, cfg, noise) for c in chunks]
    out = [None] * len(samples)
    with ProcessPoolExecutor(workers) as ex:
        for c, part in zip(chunks, ex.map(_eval_chunk, jobs)):
            for i, r in zip(c, part):
                out[i] = r
    return out


def _median_time(fn, reps: int, warmup: int) -> dict:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    return {"median_s": float(np.median(times)), "mean_s": float(times.mean()),
            "min_s": float(times.min()), "reps": reps}


def benchmark(vit_cfg, reps: int = 30, warmup: int = 5, seed: int = 0) -> dict:
    """Local wall-clock timings of the network forward pass, decoding and EPnP."""
    from . import vitpose
    from .geometry import project, speed_camera
    from .simdata import ScenarioSpec, default_model, sample_pose

    reps = max(reps, 30)
    rng = np.random.default_rng(seed)
    w = vitpose.init_weights(vit_cfg, rng)
    imgs = {r: rng.random((r, r)).astype(np.float32) for r in (224, 448)}
    stages = {
        "forward_224": _median_time(lambda: vitpose.forward(vit_cfg, w, imgs[224]), reps, warmup),
        "forward_448": _median_time(lambda: vitpose.forward(vit_cfg, w, imgs[448]), reps, warmup),
    }
    model = default_model()
    cam = speed_camera()
    pose = sample_pose(ScenarioSpec("close", n_samples=1, seed=seed), rng, cam, model)
    uv = project(cam, pose, model)
    stack = heatmap.render_targets(rng.uniform(8, 216, (len(model), 2)), (224, 224))
    stages["decode"] = _median_time(lambda: heatmap.decode(stack, refine=True), reps, warmup)
    corr = Correspondences(model.points, uv)
    stages["epnp"] = _median_time(lambda: solve_pnp(corr, cam, refine=False), reps, warmup)
    return {
        "backbone": {"dim": vit_cfg.dim, "depth": vit_cfg.depth, "heads": vit_cfg.heads,
                     "patch": vit_cfg.patch},
        "stages": stages,
        "forward_ratio_448_224": stages["forward_448"]["median_s"] / stages["forward_224"]["median_s"],
    }
