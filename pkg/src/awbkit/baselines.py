"""Classical statistics-based illuminant estimators.

All estimators reduce the unmasked pixels of a linear raw-RGB image to one
3-vector and return it at unit Euclidean norm. Masked pixels never touch the
statistics: for the edge-based methods they are overwritten with the unmasked
channel mean before filtering, so their stored values cannot leak through the
smoothing window either.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import InvalidArgumentError

METHODS = ("gray_world", "white_patch", "shades_of_gray", "gray_edge_1", "gray_edge_2")

DEFAULT_MINKOWSKI_P = {"shades_of_gray": 4.0, "gray_edge_1": 5.0, "gray_edge_2": 5.0}
DEFAULT_SIGMA = 2.0


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    minkowski_p: float | None = None
    smoothing_sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(
                f"unknown method {self.method!r}, valid: {', '.join(METHODS)}"
            )
        if self.minkowski_p is None:
            object.__setattr__(
                self, "minkowski_p", DEFAULT_MINKOWSKI_P.get(self.method, 1.0)
            )
        p = self.minkowski_p
        if not (p >= 1.0):  # rejects NaN too; math.inf is the white-patch limit
            raise InvalidArgumentError(f"minkowski_p must be >= 1, got {p}")
        if not (self.smoothing_sigma >= 0.0):
            raise InvalidArgumentError(
                f"smoothing_sigma must be >= 0, got {self.smoothing_sigma}"
            )


def _normalize(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n <= 0.0:
        raise InvalidArgumentError(f"{what} produced a degenerate estimate {v}")
    return v / n


def _minkowski_mean(values: np.ndarray, p: float) -> float:
    """(mean |x|^p)^(1/p), computed as max * mean-of-ratios for stability."""
    values = np.abs(values)
    if p == 1.0:  # keep the arithmetic-mean identity bit-exact
        return float(values.mean())
    if math.isinf(p):
        return float(values.max())
    peak = float(values.max())
    if peak == 0.0:
        return 0.0
    return peak * float(np.mean((values / peak) ** p)) ** (1.0 / p)


def _unmasked(image) -> np.ndarray:
    px = image.unmasked_pixels() if hasattr(image, "unmasked_pixels") else image.pixels
    if px.shape[1] == 0:
        raise InvalidArgumentError("image has no unmasked pixels")
    return px


def _filled_planes(image) -> tuple:
    """(h, w, 3) pixel block with masked pixels set to the unmasked channel
    mean, plus the (h, w) validity map."""
    planes = image.pixels.T.reshape(image.height, image.width, 3).copy()
    valid = np.ones((image.height, image.width), dtype=bool)
    if image.mask is not None:
        valid = ~image.mask.reshape(image.height, image.width)
        if not valid.any():
            raise InvalidArgumentError("image has no unmasked pixels")
        fill = planes[valid].mean(axis=0)
        planes[~valid] = fill
    return planes, valid


def _edge_magnitude(plane: np.ndarray, sigma: float, order: int) -> np.ndarray:
    smooth = gaussian_filter(plane, sigma, mode="reflect") if sigma > 0 else plane
    gy, gx = np.gradient(smooth)
    if order == 1:
        return np.sqrt(gx * gx + gy * gy)
    gyy, gyx = np.gradient(gy)
    _, gxx = np.gradient(gx)
    return np.sqrt(gxx * gxx + 2.0 * gyx * gyx + gyy * gyy)


def estimate_baseline(image, cfg: BaselineConfig) -> np.ndarray:
    """Estimate the scene illuminant of a RawImage; unit-norm 3-vector."""
    if cfg.method == "gray_world":
        return _normalize(_unmasked(image).mean(axis=1), "gray_world")
    if cfg.method == "white_patch":
        return _normalize(_unmasked(image).max(axis=1), "white_patch")
    if cfg.method == "shades_of_gray":
        px = _unmasked(image)
        if cfg.minkowski_p == 1.0:  # p=1 is gray_world; reuse its exact reduction
            return _normalize(px.mean(axis=1), "shades_of_gray")
        est = np.array([_minkowski_mean(px[c], cfg.minkowski_p) for c in range(3)])
        return _normalize(est, "shades_of_gray")

    order = 1 if cfg.method == "gray_edge_1" else 2
    planes, valid = _filled_planes(image)
    est = np.empty(3)
    for c in range(3):
        mag = _edge_magnitude(planes[:, :, c], cfg.smoothing_sigma, order)
        est[c] = _minkowski_mean(mag[valid], cfg.minkowski_p)
    return _normalize(est, cfg.method)


def baseline_suite(manifest, cfg: BaselineConfig, target_size: int = None):
    """Run one estimator over a manifest; same report shape as model eval."""
    from . import report
    from .dataio import THUMBNAIL_SIZE

    return report.evaluate_manifest(
        manifest,
        lambda image: estimate_baseline(image, cfg),
        model_id=f"baseline:{cfg.method}(p={cfg.minkowski_p:g},sigma={cfg.smoothing_sigma:g})",
        target_size=target_size if target_size is not None else THUMBNAIL_SIZE,
    )
