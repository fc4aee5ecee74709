"""Pose error metrics with testbed-calibration thresholds, and aggregate reports.

``e_q`` is reported in degrees but enters the combined ``e_pose`` score in
radians, so ``e_pose`` is dimensionless.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import EmptyInput, ZeroTruthTranslation
from .geometry import Pose


@dataclass(frozen=True)
class Thresholds:
    theta_q: float = 0.169       # degrees
    theta_t: float = 2.173e-3    # normalized translation

    def __post_init__(self):
        if self.theta_q < 0 or self.theta_t < 0:
            raise ValueError("thresholds must be non-negative")


HIL_THRESHOLDS = Thresholds()
NO_THRESHOLDS = Thresholds(0.0, 0.0)


@dataclass(frozen=True)
class PoseError:
    e_t: float
    e_t_norm: float
    e_q: float          # degrees
    e_pose: float
    e_t_norm_star: float
    e_q_star: float     # degrees
    e_pose_star: float


FIELDS = tuple(f.name for f in fields(PoseError))


def rotation_error_deg(q_pred: np.ndarray, q_true: np.ndarray) -> float:
    """``2 acos(|<q_pred, q_true>|)`` in degrees.

    Evaluated as ``2 atan2(|v|, |w|)`` of the relative quaternion, which is the
    same angle but keeps full precision near zero where ``acos`` does not.
    """
    a = np.asarray(q_pred, dtype=float)
    b = np.asarray(q_true, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    w = a[0] * b[0] + a[1:] @ b[1:]
    v = a[0] * b[1:] - b[0] * a[1:] - np.cross(a[1:], b[1:])
    return math.degrees(2.0 * math.atan2(float(np.linalg.norm(v)), abs(float(w))))


def pose_error(pred: Pose, truth: Pose, thresholds: Thresholds = HIL_THRESHOLDS) -> PoseError:
    t_norm = float(np.linalg.norm(truth.translation))
    if t_norm == 0.0:
        raise ZeroTruthTranslation("ground-truth translation has zero norm")
    e_t = float(np.linalg.norm(pred.translation - truth.translation))
    e_t_norm = e_t / t_norm
    e_q = rotation_error_deg(pred.rotation.as_array(), truth.rotation.as_array())
    e_t_norm_star = 0.0 if e_t_norm < thresholds.theta_t else e_t_norm
    e_q_star = 0.0 if e_q < thresholds.theta_q else e_q
    return PoseError(
        e_t=e_t,
        e_t_norm=e_t_norm,
        e_q=e_q,
        e_pose=math.radians(e_q) + e_t_norm,
        e_t_norm_star=e_t_norm_star,
        e_q_star=e_q_star,
        e_pose_star=math.radians(e_q_star) + e_t_norm_star,
    )


def _stats(values: np.ndarray) -> dict:
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((values - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    p25, median, p75 = np.percentile(values, [25, 50, 75])
    return {"mean": mean, "std": std, "median": float(median), "p25": float(p25),
            "p75": float(p75), "min": float(values.min()), "max": float(values.max())}


def aggregate(errors) -> dict:
    """Per-field mean, unbiased std, median and quartiles."""
    errors = list(errors)
    if not errors:
        raise EmptyInput("cannot aggregate an empty error list")
    report = {"count": len(errors)}
    for name in FIELDS:
        report[name] = _stats(np.array([getattr(e, name) for e in errors], dtype=float))
    return report


CSV_COLUMNS = ("id", "e_t", "e_t_norm", "e_q_deg", "e_pose",
               "e_t_norm_star", "e_q_star_deg", "e_pose_star")
STAT_ROWS = ("mean", "std", "median", "p25", "p75", "min", "max")


def report_csv(ids, errors, summary: dict) -> str:
    """Per-sample rows, a blank line, then a summary block keyed by statistic."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for sid, e in zip(ids, errors):
        w.writerow([sid] + [repr(float(getattr(e, f))) for f in FIELDS])
    w.writerow([])
    w.writerow(("statistic",) + CSV_COLUMNS[1:])
    for stat in STAT_ROWS:
        w.writerow([stat] + [repr(summary[f][stat]) for f in FIELDS])
    w.writerow(["count", summary["count"]])
    return buf.getvalue()


def report_json(ids, errors, summary: dict, extra: dict | None = None) -> str:
    doc = {"summary": summary, "samples": [{"id": i, **asdict(e)} for i, e in zip(ids, errors)]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)


def write_report(path, ids, errors, extra: dict | None = None) -> dict:
    """Write ``path`` (CSV) and its ``.json`` sibling; returns the summary."""
    from pathlib import Path

    summary = aggregate(errors)
    path = Path(path)
    path.write_text(report_csv(ids, errors, summary))
    path.with_suffix(".json").write_text(report_json(ids, errors, summary, extra))
    return summary
