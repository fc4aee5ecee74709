"""Gaussian heatmap targets, peak decoding, ensembling and the MSE loss.

Coordinates passed to :func:`render_targets` and returned by :func:`decode`
are network-input pixels with pixel centers at integer positions.  The
heatmap grid is related to the input grid by the unbiased transform
``x_h = (x_in + 0.5) / stride - 0.5``, which keeps pixel centers of the two
grids aligned instead of shifting everything by half a stride.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadStride, DatasetIOError, SchemaVersionMismatch, ShapeMismatch

MAGIC = b"HMS1"
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class HeatmapStack:
    maps: np.ndarray  # (K, Hh, Wh)
    stride: int = 4

    def __post_init__(self):
        maps = np.asarray(self.maps)
        if maps.ndim != 3:
            raise ShapeMismatch(f"heatmap stack must be (K, Hh, Wh), got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise ValueError("heatmap stack contains non-finite values")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def shape(self):
        return self.maps.shape

    @property
    def num_keypoints(self) -> int:
        return self.maps.shape[0]

    @property
    def input_size(self) -> tuple[int, int]:
        return self.maps.shape[1] * self.stride, self.maps.shape[2] * self.stride


@dataclass(frozen=True)
class DecodedKeypoints:
    coords: np.ndarray       # (K, 2) input px, (x, y)
    confidences: np.ndarray  # (K,)
    spread: np.ndarray       # (K,) heatmap px


def to_heatmap_coords(xy, stride: int) -> np.ndarray:
    return (np.asarray(xy, dtype=float) + 0.5) / stride - 0.5


def to_input_coords(xy_h, stride: int) -> np.ndarray:
    return (np.asarray(xy_h, dtype=float) + 0.5) * stride - 0.5


def render_targets(keypoints2d: Sequence, input_size: tuple[int, int], stride: int = 4,
                   sigma: float = 1.0) -> HeatmapStack:
    """One peak-normalized Gaussian per keypoint; out-of-frame keypoints give zero maps.

    ``sigma`` is in heatmap pixels.
    """
    H, W = input_size
    if stride < 1 or H % stride or W % stride:
        raise BadStride(f"stride {stride} must divide input size {H}x{W}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    kp = np.asarray(keypoints2d, dtype=float).reshape(-1, 2)
    Hh, Wh = H // stride, W // stride
    mu = to_heatmap_coords(kp, stride)
    xs = np.arange(Wh, dtype=float)
    ys = np.arange(Hh, dtype=float)
    gx = np.exp(-(xs[None, :] - mu[:, :1]) ** 2 / (2.0 * sigma**2))  # (K, Wh)
    gy = np.exp(-(ys[None, :] - mu[:, 1:]) ** 2 / (2.0 * sigma**2))  # (K, Hh)
    maps = gy[:, :, None] * gx[:, None, :]
    inside = ((mu[:, 0] >= -0.5) & (mu[:, 0] <= Wh - 0.5)
              & (mu[:, 1] >= -0.5) & (mu[:, 1] <= Hh - 0.5))
    maps[~inside] = 0.0
    return HeatmapStack(maps, stride)


_DX, _DY = np.meshgrid(np.arange(3.0), np.arange(3.0))


def _refine_peak(hm: np.ndarray, px: int, py: int) -> tuple[float, float]:
    """Sub-pixel offset of the peak from a quadratic fit to log-intensity.

    The 3x3 window is shifted inward at the map border, so peaks on the
    last row/column are still fitted (one-sided) rather than skipped.
    """
    h, w = hm.shape
    if h >= 3 and w >= 3:
        r0 = min(max(py - 1, 0), h - 3)
        c0 = min(max(px - 1, 0), w - 3)
        patch = hm[r0:r0 + 3, c0:c0 + 3]
        if np.all(patch > 0):
            dx = (_DX + c0 - px).ravel()
            dy = (_DY + r0 - py).ravel()
            A = np.column_stack((np.ones(9), dx, dy, dx * dx, dx * dy, dy * dy))
            b, *_ = np.linalg.lstsq(A, np.log(patch).ravel(), rcond=None)
            gx, gy = b[1], b[2]
            hxx, hxy, hyy = 2.0 * b[3], b[4], 2.0 * b[5]
            det = hxx * hyy - hxy * hxy
            if hxx < 0 and det > 0:
                ox = -(hyy * gx - hxy * gy) / det
                oy = -(hxx * gy - hxy * gx) / det
                return float(np.clip(ox, -0.5, 0.5)), float(np.clip(oy, -0.5, 0.5))
    # quarter-pixel shift toward the larger neighbour
    ox = oy = 0.0
    if 0 < px < w - 1:
        ox = 0.25 * np.sign(hm[py, px + 1] - hm[py, px - 1])
    if 0 < py < h - 1:
        oy = 0.25 * np.sign(hm[py + 1, px] - hm[py - 1, px])
    return float(ox), float(oy)


def _spread(hm: np.ndarray, px: int, py: int, x: float, y: float, half: int = 3) -> float:
    h, w = hm.shape
    y0, y1 = max(py - half, 0), min(py + half + 1, h)
    x0, x1 = max(px - half, 0), min(px + half + 1, w)
    wgt = np.maximum(hm[y0:y1, x0:x1], 0.0)
    total = wgt.sum()
    if total <= 0:
        return 0.0
    yy, xx = np.mgrid[y0:y1, x0:x1]
    r2 = (xx - x) ** 2 + (yy - y) ** 2
    return float(np.sqrt(np.sum(wgt * r2) / total))


def decode(stack: HeatmapStack, refine: bool = True) -> DecodedKeypoints:
    """Argmax per map, optionally refined by a log-intensity Taylor fit."""
    K, Hh, Wh = stack.maps.shape
    coords = np.empty((K, 2))
    conf = np.empty(K)
    spread = np.empty(K)
    for k in range(K):
        hm = np.asarray(stack.maps[k], dtype=float)
        flat = int(np.argmax(hm))
        py, px = divmod(flat, Wh)
        peak = hm[py, px]
        if peak <= 0.0:
            coords[k] = ((Wh - 1) / 2.0, (Hh - 1) / 2.0)
            conf[k] = 0.0
            spread[k] = 0.0
            continue
        ox, oy = _refine_peak(hm, px, py) if refine else (0.0, 0.0)
        coords[k] = (px + ox, py + oy)
        conf[k] = min(float(peak), 1.0)
        spread[k] = _spread(hm, px, py, px + ox, py + oy)
    return DecodedKeypoints(to_input_coords(coords, stack.stride), conf, spread)


def ensemble(stacks: Sequence[HeatmapStack]) -> HeatmapStack:
    """Element-wise mean of identically shaped stacks."""
    if not stacks:
        raise ShapeMismatch("nothing to ensemble")
    ref = stacks[0]
    for s in stacks[1:]:
        if s.shape != ref.shape or s.stride != ref.stride:
            raise ShapeMismatch(f"cannot ensemble {s.shape}/{s.stride} with {ref.shape}/{ref.stride}")
    acc = np.zeros(ref.shape, dtype=np.result_type(*(s.maps.dtype for s in stacks), np.float32))
    for s in stacks:
        acc += s.maps
    return HeatmapStack(acc / len(stacks), ref.stride)


def mse_loss(pred: HeatmapStack, target: HeatmapStack) -> tuple[float, np.ndarray]:
    """Mean over maps of the squared Frobenius error, and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    K = pred.shape[0]
    diff = np.asarray(pred.maps, dtype=float) - np.asarray(target.maps, dtype=float)
    return float(np.sum(diff * diff) / K), (2.0 / K) * diff


def write_stack(stack: HeatmapStack, path) -> None:
    K, Hh, Wh = stack.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, K, Hh, Wh, stack.stride))
        fh.write(np.ascontiguousarray(stack.maps, dtype="<f4").tobytes())


def read_stack(path) -> HeatmapStack:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetIOError(f"{path}: truncated heatmap file")
    magic, K, Hh, Wh, stride = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SchemaVersionMismatch(f"{path}: bad magic {magic!r}")
    n = K * Hh * Wh
    body = data[_HEADER.size:]
    if len(body) != 4 * n:
        raise DatasetIOError(f"{path}: expected {4 * n} payload bytes, found {len(body)}")
    maps = np.frombuffer(body, dtype="<f4").reshape(K, Hh, Wh).astype(np.float32)
    return HeatmapStack(maps, stride)
