"""Angular error metrics, their aggregate statistics, and the training loss.

Reported numbers are degrees; the differentiable loss is radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import InvalidArgumentError

STATS_COLUMNS = ("camera_id", "n", "mean", "median", "best25", "worst25", "metric")


def _unit64(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise InvalidArgumentError(f"{what} must be a 3-vector, got shape {v.shape}")
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise InvalidArgumentError(f"{what} must be a finite nonzero vector")
    return v / n


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    # arccos of the normalized dot product, evaluated through the chord
    # lengths so identical directions give exactly 0 and opposite ones pi
    ang = 2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v))
    return math.degrees(ang)


def recovery_angular_error(gt, estimate) -> float:
    """Angle in degrees between the ground-truth and estimated illuminants."""
    return _angle_deg(_unit64(gt, "gt"), _unit64(estimate, "estimate"))


def reproduction_angular_error(gt, estimate) -> float:
    """Angle in degrees between gt/estimate (componentwise) and the white axis.

    Measures the residual cast left on a neutral surface after balancing
    with the estimate; a perfect estimate gives exactly 0.
    """
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if gt.shape != (3,) or est.shape != (3,):
        raise InvalidArgumentError("reproduction error needs two 3-vectors")
    if np.any(est == 0):
        raise InvalidArgumentError("estimate has a zero component")
    ratio = gt / est
    white = np.full(3, 1.0 / math.sqrt(3.0))
    return _angle_deg(_unit64(ratio, "ratio"), white)


@dataclass(frozen=True)
class ErrorStats:
    count: int
    mean: float
    median: float
    best25: float
    worst25: float


def aggregate(errors) -> ErrorStats:
    """Summary statistics over a list of per-image errors.

    Median is the lower middle element for even counts; the best/worst
    quartiles average the ceil(n/4) smallest/largest values.
    """
    vals = np.asarray(list(errors), dtype=np.float64)
    if vals.size == 0:
        raise InvalidArgumentError("aggregate of an empty error list")
    vals = np.sort(vals)
    n = vals.size
    q = math.ceil(n / 4)
    return ErrorStats(
        count=n,
        mean=float(vals.mean()),
        median=float(vals[(n - 1) // 2]),
        best25=float(vals[:q].mean()),
        worst25=float(vals[-q:].mean()),
    )


def stats_csv_header() -> str:
    return ",".join(STATS_COLUMNS)


def stats_csv_row(camera_id: str, stats: ErrorStats, metric: str) -> str:
    """One stats CSV line; floats keep full round-trip precision."""
    return ",".join(
        [
            camera_id,
            str(stats.count),
            repr(stats.mean),
            repr(stats.median),
            repr(stats.best25),
            repr(stats.worst25),
            metric,
        ]
    )


def angular_loss(gt, prediction: Tensor) -> Tensor:
    """Differentiable recovery angle (radians) between gt and a predicted
    illuminant tensor; the arccos input is clamped so the gradient stays
    finite at zero error."""
    gt_t = Tensor(np.asarray(gt, dtype=prediction.dtype))
    cos = ad.dot(gt_t, prediction) / (ad.norm(gt_t) * ad.norm(prediction))
    return ad.arccos(cos)
