"""Quaternions, rigid poses and the pinhole camera.

Conventions: scalar-first unit quaternions, right-handed frames, camera
looking down +z with x to the right and y down. Image coordinates are
continuous and edge-based: pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InvalidFov, ModelTooSmall, PointBehindCamera

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion ``w + xi + yj + zk`` (scalar first)."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not np.isfinite(n) or n == 0.0:
            raise DataError("quaternion has zero or non-finite norm")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Quaternion":
        w, x, y, z = (float(c) for c in a)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), *(s * axis))

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "Quaternion":
        return cls.from_array(matrix_to_quat(R))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Quaternion":
        """Uniformly distributed rotation (normalized 4D Gaussian)."""
        while True:
            a = rng.standard_normal(4)
            n = np.linalg.norm(a)
            if n > 1e-8:
                return cls.from_array(a / n)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product; ``(a * b)`` rotates by ``b`` first, then ``a``."""
        return Quaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion with ``w >= 0`` (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * math.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula."""
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return (np.eye(3) + math.sin(theta) / theta * W
            + (1.0 - math.cos(theta)) / theta**2 * W @ W)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def quat_rotate(q: Quaternion, v: Sequence[float]) -> np.ndarray:
    """Rotate vector(s) ``v`` (shape ``(3,)`` or ``(N, 3)``) by ``q``."""
    v = np.asarray(v, dtype=float)
    u = np.array([q.x, q.y, q.z])
    # v' = v + 2w(u x v) + 2u x (u x v); exactly even in q
    uv = np.cross(u, v)
    return v + 2.0 * q.w * uv + 2.0 * np.cross(u, uv)


@dataclass(frozen=True)
class Pose:
    """Target body frame expressed in the camera frame."""

    rotation: Quaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_rt(cls, R: np.ndarray, t: Sequence[float]) -> "Pose":
        return cls(Quaternion.from_matrix(R), np.asarray(t, dtype=float))

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Body-frame points ``(N, 3)`` to camera frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.translation

    def inverse(self) -> "Pose":
        qi = self.rotation.conjugate()
        return Pose(qi, -quat_rotate(qi, self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation * other.rotation,
                    quat_rotate(self.rotation, other.translation) + self.translation)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (self.rotation == other.rotation
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError("principal point outside image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad camera description: {exc}") from exc


@dataclass(frozen=True)
class KeypointModel:
    """``K`` named body-frame points in meters."""

    points: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError("keypoint model points must have shape (K, 3)")
        if pts.shape[0] < 4:
            raise ModelTooSmall("keypoint model needs at least 4 points")
        if np.ptp(pts, axis=0).max() <= 0.0:
            raise DataError("keypoint model points are coincident")
        pts.setflags(write=False)
        names = tuple(self.names) or tuple(f"kp{i}" for i in range(len(pts)))
        if len(names) != len(pts):
            raise DataError("names and points differ in length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointModel":
        try:
            return cls(np.asarray(d["points"], dtype=float), tuple(d.get("names", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad keypoint model description: {exc}") from exc


def project_points(camera: CameraModel, points_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points ``(N, 3)`` to pixels ``(N, 2)``."""
    P = np.asarray(points_cam, dtype=float)
    if np.any(P[:, 2] <= MIN_DEPTH):
        raise PointBehindCamera("point at or behind the camera plane")
    return np.column_stack((camera.fx * P[:, 0] / P[:, 2] + camera.cx,
                            camera.fy * P[:, 1] / P[:, 2] + camera.cy))


def project(camera: CameraModel, pose: Pose, model: KeypointModel) -> np.ndarray:
    return project_points(camera, pose.transform(model.points))


def backproject(camera: CameraModel, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of :func:`project_points` given the camera-frame depth."""
    uv = np.atleast_2d(uv)
    depth = np.asarray(depth, dtype=float).reshape(-1)
    x = (uv[:, 0] - camera.cx) / camera.fx
    y = (uv[:, 1] - camera.cy) / camera.fy
    return np.column_stack((x * depth, y * depth, depth))


def camera_from_fov(width: int, height: int, hfov: float) -> CameraModel:
    """Square-pixel camera with principal point at the image center; ``hfov`` in degrees."""
    if not 0.0 < hfov < 180.0:
        raise InvalidFov(f"horizontal FOV must be in (0, 180) degrees, got {hfov}")
    fx = (width / 2.0) / math.tan(math.radians(hfov) / 2.0)
    return CameraModel(fx, fx, width / 2.0, height / 2.0, int(width), int(height))


def speed_camera() -> CameraModel:
    """1920x1200 camera with a 35.6 degree horizontal FOV."""
    return camera_from_fov(1920, 1200, 35.6)


def load_camera(path) -> CameraModel:
    return CameraModel.from_dict(json.loads(Path(path).read_text()))


def save_camera(camera: CameraModel, path) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=2))


def load_model(path) -> KeypointModel:
    return KeypointModel.from_dict(json.loads(Path(path).read_text()))


def save_model(model: KeypointModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))
