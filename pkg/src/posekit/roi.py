"""Region-of-interest handling and the crop/resize coordinate map.

Both the original image and the crop use continuous edge-based pixel
coordinates: ``(x_min, y_min)`` of the source box maps to ``(0, 0)`` of
the crop and ``(x_max, y_max)`` to ``(out_size, out_size)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

JITTER_MAX_SCALE = 0.2
JITTER_MAX_SHIFT = 0.1
TEST_ENLARGEMENT = 0.2


@dataclass(frozen=True)
class RoiBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DataError(f"degenerate RoI {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0])

    @property
    def side(self) -> float:
        """Longer side."""
        return max(self.width, self.height)

    @classmethod
    def from_center(cls, center, side: float) -> "RoiBox":
        cx, cy = center
        h = side / 2.0
        return cls(cx - h, cy - h, cx + h, cy + h)

    @classmethod
    def bounding(cls, points: np.ndarray) -> "RoiBox":
        p = np.asarray(points, dtype=float)
        return cls(*p.min(axis=0), *p.max(axis=0))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> bool:
        p = np.atleast_2d(points)
        return bool(np.all((p[:, 0] >= self.x_min - tol) & (p[:, 0] <= self.x_max + tol)
                           & (p[:, 1] >= self.y_min - tol) & (p[:, 1] <= self.y_max + tol)))

    def inside_image(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> "RoiBox":
        return cls(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))


def squarify(box: RoiBox) -> RoiBox:
    """Square box of side ``max(h, w)`` with the same center."""
    if abs(box.width - box.height) <= 1e-12 * box.side:
        return box
    return RoiBox.from_center(box.center, box.side)


def enlarge(box: RoiBox, factor: float) -> RoiBox:
    """Scale both sides by ``1 + factor`` about the center."""
    if not factor > -1.0:
        raise ValueError("enlargement factor must exceed -1")
    if factor == 0.0:
        return box
    c = box.center
    hw = box.width * (1.0 + factor) / 2.0
    hh = box.height * (1.0 + factor) / 2.0
    return RoiBox(c[0] - hw, c[1] - hh, c[0] + hw, c[1] + hh)


def jitter(box: RoiBox, rng: np.random.Generator, max_scale: float = JITTER_MAX_SCALE,
           max_shift: float = JITTER_MAX_SHIFT) -> RoiBox:
    """Training-time random enlargement (never shrinking) and shift."""
    scale = 1.0 + rng.uniform(0.0, max_scale)
    shift = rng.uniform(-max_shift, max_shift, size=2)
    if scale == 1.0 and not shift.any():
        return box
    side = box.side
    return RoiBox.from_center(box.center + shift * side, side * scale)


def test_time_box(box: RoiBox, factor: float = TEST_ENLARGEMENT) -> RoiBox:
    """Square then enlarge by a fixed factor (20% by default)."""
    return enlarge(squarify(box), factor)


test_time_box.__test__ = False  # not a pytest test despite the name


@dataclass(frozen=True)
class CropTransform:
    source_box: RoiBox
    out_size: int

    def __post_init__(self):
        if abs(self.source_box.width - self.source_box.height) > 1e-9:
            raise DataError("crop source box must be square")
        if self.out_size <= 0:
            raise DataError("out_size must be positive")

    @property
    def scale(self) -> float:
        """Crop pixels per original pixel."""
        return self.out_size / self.source_box.width


def map_to_crop(t: CropTransform, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    origin = np.array([t.source_box.x_min, t.source_box.y_min])
    return (p - origin) * t.scale


def map_to_original(t: CropTransform, p_crop) -> np.ndarray:
    p_crop = np.asarray(p_crop, dtype=float)
    origin = np.array([t.source_box.x_min, t.source_box.y_min])
    return p_crop / t.scale + origin


def crop_resize(image: np.ndarray, t: CropTransform) -> np.ndarray:
    """Bilinear resample of ``image`` inside ``t.source_box``; outside reads zero."""
    n = t.out_size
    centers = np.arange(n, dtype=float) + 0.5
    xs = map_to_original(t, np.column_stack((centers, centers)))
    # edge-based coordinate -> array index of pixel centers
    col = xs[:, 0] - 0.5
    row = xs[:, 1] - 0.5
    rr, cc = np.meshgrid(row, col, indexing="ij")
    img = np.asarray(image, dtype=float)
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="constant", cval=0.0)
