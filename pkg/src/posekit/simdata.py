"""Synthetic close-/far-range scenario generation and dataset files.

A dataset file is JSON lines: one header object (schema, version, scenario,
camera, keypoint model and its hash, sample count) followed by one object
per sample.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, DatasetIOError, ModelTooSmall, PointBehindCamera, SchemaVersionMismatch
from .geometry import CameraModel, KeypointModel, Pose, Quaternion, project, speed_camera
from .roi import RoiBox, squarify

SCHEMA = "posekit.dataset"
SCHEMA_VERSION = 1
REGIME_RANGES = {"close": (3.0, 52.0), "far": (52.0, 197.0)}
MIN_ROI_PX = 2.0
MAX_ATTEMPTS = 1000


def default_model() -> KeypointModel:
    """11 keypoints: corners of a 0.8 x 0.75 x 0.32 m bus plus three antenna tips."""
    hx, hy, hz = 0.4, 0.375, 0.16
    corners = [(sx * hx, sy * hy, sz * hz) for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)]
    antennas = [(-0.30, 0.375, 0.32), (0.30, 0.375, 0.32), (0.0, -0.375, 0.36)]
    names = [f"corner{i}" for i in range(8)] + ["antenna0", "antenna1", "antenna2"]
    return KeypointModel(np.array(corners + antennas), tuple(names))


def model_hash(model: KeypointModel) -> str:
    blob = json.dumps(model.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ScenarioSpec:
    regime: str = "close"
    distance_range: tuple = None
    n_samples: int = 100
    seed: int = 0
    keypoint_noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 20.0

    def __post_init__(self):
        if self.regime not in ("close", "far", "custom"):
            raise DataError(f"unknown regime {self.regime!r}")
        rng = self.distance_range
        if rng is None:
            if self.regime == "custom":
                raise DataError("custom regime needs a distance_range")
            rng = REGIME_RANGES[self.regime]
        rng = (float(rng[0]), float(rng[1]))
        if self.regime in REGIME_RANGES and rng != REGIME_RANGES[self.regime]:
            raise DataError(f"{self.regime} regime is fixed to {REGIME_RANGES[self.regime]} m")
        if not 0 < rng[0] <= rng[1]:
            raise DataError(f"bad distance range {rng}")
        if self.n_samples < 0 or self.keypoint_noise_sigma < 0 or not 0 <= self.outlier_rate <= 1:
            raise DataError("n_samples, noise sigma and outlier rate must be non-negative")
        object.__setattr__(self, "distance_range", rng)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distance_range"] = list(self.distance_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**{**d, "distance_range": tuple(d["distance_range"])})


@dataclass(frozen=True)
class Sample:
    id: str
    pose: Pose
    roi: RoiBox
    keypoints2d_true: np.ndarray
    keypoints2d_noisy: np.ndarray
    roi_fraction: float = 0.0
    image_path: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "q_target2cam": self.pose.rotation.as_array().tolist(),
            "t_cam": self.pose.translation.tolist(),
            "roi": self.roi.to_dict(),
            "roi_fraction": self.roi_fraction,
            "keypoints2d_true": np.asarray(self.keypoints2d_true).tolist(),
            "keypoints2d_noisy": np.asarray(self.keypoints2d_noisy).tolist(),
            "image_path": self.image_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        return cls(
            id=str(d["id"]),
            pose=Pose(Quaternion.from_array(d["q_target2cam"]), np.asarray(d["t_cam"], dtype=float)),
            roi=RoiBox.from_dict(d["roi"]),
            keypoints2d_true=np.asarray(d["keypoints2d_true"], dtype=float),
            keypoints2d_noisy=np.asarray(d["keypoints2d_noisy"], dtype=float),
            roi_fraction=float(d.get("roi_fraction", 0.0)),
            image_path=d.get("image_path"),
        )

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def sample_rng(seed: int, index: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), index, *extra]))


def _square_roi(camera, pose, model):
    uv = project(camera, pose, model)
    return uv, squarify(RoiBox.bounding(uv))


def sample_pose(spec: ScenarioSpec, rng: np.random.Generator, camera: Optional[CameraModel] = None,
                model: Optional[KeypointModel] = None) -> Pose:
    """Uniform attitude, uniform range, image position uniform over placements keeping the RoI in frame.

    The range is drawn once; attitude and placement are redrawn until the
    squared RoI fits inside the image.
    """
    camera = camera or speed_camera()
    model = model or default_model()
    W, H = camera.width, camera.height
    dist = rng.uniform(*spec.distance_range)
    for _ in range(MAX_ATTEMPTS):
        q = Quaternion.random(rng)
        try:
            _, roi = _square_roi(camera, Pose(q, [0.0, 0.0, dist]), model)
        except PointBehindCamera:
            continue
        side = roi.side
        if side >= min(W, H):
            continue
        # offset of the RoI center from the projected body origin
        off = roi.center - np.array([camera.cx, camera.cy])
        for _ in range(20):
            c = np.array([rng.uniform(side / 2, W - side / 2), rng.uniform(side / 2, H - side / 2)])
            u, v = c - off
            ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
            pose = Pose(q, dist * ray / np.linalg.norm(ray))
            try:
                _, roi = _square_roi(camera, pose, model)
            except PointBehindCamera:
                continue
            if roi.inside_image(W, H):
                return pose
    raise ModelTooSmall(f"could not place the target in frame at {dist:.2f} m")


def perturb_keypoints(uv: np.ndarray, rng: np.random.Generator, sigma: float,
                      outlier_rate: float, outlier_magnitude: float) -> np.ndarray:
    """Gaussian pixel noise; a fraction of points instead get a fixed-length random offset."""
    uv = np.asarray(uv, dtype=float)
    if sigma == 0 and outlier_rate == 0:
        return uv.copy()
    out = uv + rng.normal(0.0, sigma, uv.shape) if sigma > 0 else uv.copy()
    if outlier_rate > 0:
        hit = rng.random(len(uv)) < outlier_rate
        ang = rng.uniform(0.0, 2 * np.pi, len(uv))
        offs = outlier_magnitude * np.column_stack((np.cos(ang), np.sin(ang)))
        out[hit] = uv[hit] + offs[hit]
    return out


def generate_one(spec: ScenarioSpec, camera: CameraModel, model: KeypointModel, index: int) -> Sample:
    rng = sample_rng(spec.seed, index)
    pose = sample_pose(spec, rng, camera, model)
    uv = project(camera, pose, model)
    tight = RoiBox.bounding(uv)
    if tight.side < MIN_ROI_PX:
        raise ModelTooSmall(f"sample {index}: RoI side {tight.side:.2f} px below {MIN_ROI_PX} px")
    roi = squarify(tight)
    noisy = perturb_keypoints(uv, rng, spec.keypoint_noise_sigma, spec.outlier_rate,
                              spec.outlier_magnitude)
    return Sample(f"{index:06d}", pose, roi, uv, noisy, roi.side / camera.width)


def _generate_chunk(args):
    spec, camera, model, indices = args
    return [generate_one(spec, camera, model, i) for i in indices]


def generate(spec: ScenarioSpec, camera: Optional[CameraModel] = None,
             model: Optional[KeypointModel] = None, workers: int = 1) -> list[Sample]:
    """Samples in index order; the result does not depend on ``workers``."""
    camera = camera or speed_camera()
    model = model or default_model()
    if len(model) < 4:
        raise ModelTooSmall("keypoint model needs at least 4 points")
    idx = list(range(spec.n_samples))
    if workers <= 1 or spec.n_samples < 2:
        return [generate_one(spec, camera, model, i) for i in idx]
    chunks = [idx[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_generate_chunk, [(spec, camera, model, c) for c in chunks]))
    out = [None] * spec.n_samples
    for c, part in zip(chunks, parts):
        for i, s in zip(c, part):
            out[i] = s
    return out


@dataclass
class Dataset:
    samples: list
    spec: Optional[ScenarioSpec] = None
    camera: Optional[CameraModel] = None
    model: Optional[KeypointModel] = None
    header: dict = field(default_factory=dict)


def write_dataset(samples, path, spec: Optional[ScenarioSpec] = None,
                  camera: Optional[CameraModel] = None, model: Optional[KeypointModel] = None) -> None:
    header = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "n_samples": len(samples),
        "spec": spec.to_dict() if spec else None,
        "camera": camera.to_dict() if camera else None,
        "model": model.to_dict() if model else None,
        "model_hash": model_hash(model) if model else None,
    }
    lines = [json.dumps(header)] + [json.dumps(s.to_dict()) for s in samples]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise SchemaVersionMismatch(f"{path}: empty file, no header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: unreadable header") from exc
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise SchemaVersionMismatch(f"{path}: not a {SCHEMA} file")
    if header.get("version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: version {header.get('version')}, "
                                    f"expected {SCHEMA_VERSION}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != header.get("n_samples"):
        raise DatasetIOError(f"{path}: header announces {header.get('n_samples')} samples, "
                             f"found {len(body)}")
    try:
        samples = [Sample.from_dict(json.loads(ln)) for ln in body]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetIOError(f"{path}: corrupt sample record: {exc}") from exc
    spec = ScenarioSpec.from_dict(header["spec"]) if header.get("spec") else None
    camera = CameraModel.from_dict(header["camera"]) if header.get("camera") else None
    model = KeypointModel.from_dict(header["model"]) if header.get("model") else None
    if model is not None and header.get("model_hash") != model_hash(model):
        raise SchemaVersionMismatch(f"{path}: keypoint model hash mismatch")
    return Dataset(samples, spec, camera, model, header)


def read_dataset(path) -> list[Sample]:
    return load_dataset(path).samples
