"""Evaluation reports: per-image angular errors plus per-camera statistics.

One report schema serves the learned model, the classical baselines, and
campaign folds, so downstream tables are always comparable. Stats CSVs are
re-derivable from the per-image CSVs: floats are written with repr, and the
aggregation conventions live in metrics.aggregate.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .dataio import THUMBNAIL_SIZE, load_image
from .exceptions import InvalidArgumentError

PER_IMAGE_COLUMNS = (
    "image_path", "camera_id",
    "est_r", "est_g", "est_b",
    "gt_r", "gt_g", "gt_b",
    "recovery_err_deg", "reproduction_err_deg", "jittered",
)

ALL_CAMERAS = "all"


@dataclass
class PerImageResult:
    image_path: str
    camera_id: str
    estimate: np.ndarray
    gt: np.ndarray
    recovery_err_deg: float
    reproduction_err_deg: float
    jittered: bool


@dataclass
class EvalReport:
    model_id: str
    protocol: str = "fixed_split"
    per_image: list = field(default_factory=list)
    failures: list = field(default_factory=list)   # (image_path, message)

    def errors(self, metric: str, camera_id: str = ALL_CAMERAS) -> np.ndarray:
        if metric not in ("recovery", "reproduction"):
            raise InvalidArgumentError(f"unknown metric {metric!r}")
        attr = f"{metric}_err_deg"
        return np.array([
            getattr(r, attr) for r in self.per_image
            if camera_id == ALL_CAMERAS or r.camera_id == camera_id
        ])

    def camera_ids(self) -> list:
        return sorted({r.camera_id for r in self.per_image})

    def stats(self, metric: str, camera_id: str = ALL_CAMERAS) -> metrics.ErrorStats:
        return metrics.aggregate(self.errors(metric, camera_id))


def evaluate_results(rows, model_id: str, protocol: str = "fixed_split",
                     failures=None) -> EvalReport:
    """Assemble a report from (image_path, camera_id, est, gt, jittered) rows."""
    report = EvalReport(model_id, protocol, failures=list(failures or []))
    for image_path, camera_id, est, gt, jittered in rows:
        est = np.asarray(est, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        report.per_image.append(PerImageResult(
            image_path, camera_id, est, gt,
            metrics.recovery_angular_error(gt, est),
            metrics.reproduction_angular_error(gt, est),
            bool(jittered),
        ))
    return report


def evaluate_manifest(manifest, predictor, model_id: str,
                      target_size: int = THUMBNAIL_SIZE, entry_ids=None,
                      protocol: str = "fixed_split") -> EvalReport:
    """Run a predictor over manifest entries; per-image failures are recorded,
    not fatal.

    predictor(image) may return a plain 3-vector or an object with
    .illuminant and .jittered attributes.
    """
    ids = range(len(manifest.entries)) if entry_ids is None else entry_ids
    rows, failures = [], []
    for i in ids:
        entry = manifest.entries[i]
        try:
            image = load_image(entry, manifest.root, target_size=target_size)
            out = predictor(image)
            if hasattr(out, "illuminant"):
                est, jittered = out.illuminant, bool(out.jittered)
            else:
                est, jittered = np.asarray(out, dtype=np.float64), False
            rows.append((entry.image_path, entry.camera_id, est,
                         image.gt_illuminant, jittered))
        except Exception as exc:  # record and move on
            failures.append((entry.image_path, f"{type(exc).__name__}: {exc}"))
    return evaluate_results(rows, model_id, protocol, failures)


# ---------------------------------------------------------------------- CSVs

def write_per_image_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PER_IMAGE_COLUMNS)
        for r in report.per_image:
            writer.writerow([
                r.image_path, r.camera_id,
                repr(float(r.estimate[0])), repr(float(r.estimate[1])), repr(float(r.estimate[2])),
                repr(float(r.gt[0])), repr(float(r.gt[1])), repr(float(r.gt[2])),
                repr(float(r.recovery_err_deg)), repr(float(r.reproduction_err_deg)),
                int(r.jittered),
            ])


def read_per_image_csv(path) -> list:
    """Rows back as PerImageResult; exact float round trip via repr."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != PER_IMAGE_COLUMNS:
            raise InvalidArgumentError(f"unexpected per-image CSV header {header!r}")
        for row in reader:
            (image_path, camera_id, er, eg, eb, gr, gg, gb,
             rec, rep, jit) = row
            out.append(PerImageResult(
                image_path, camera_id,
                np.array([float(er), float(eg), float(eb)]),
                np.array([float(gr), float(gg), float(gb)]),
                float(rec), float(rep), bool(int(jit)),
            ))
    return out


def write_stats_csv(report: EvalReport, path) -> None:
    """One row per (camera, metric), plus pooled 'all' rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(metrics.stats_csv_header() + "\n")
        cameras = report.camera_ids() + ([ALL_CAMERAS] if len(report.camera_ids()) > 1 else [])
        for cam in cameras:
            for metric in ("recovery", "reproduction"):
                f.write(metrics.stats_csv_row(cam, report.stats(metric, cam), metric) + "\n")


def stats_from_per_image_csv(path) -> dict:
    """Recompute {(camera_id, metric): ErrorStats} from a per-image CSV."""
    rows = read_per_image_csv(path)
    cameras = sorted({r.camera_id for r in rows})
    if len(cameras) > 1:
        cameras.append(ALL_CAMERAS)
    out = {}
    for cam in cameras:
        for metric in ("recovery", "reproduction"):
            attr = f"{metric}_err_deg"
            errs = np.array([getattr(r, attr) for r in rows
                             if cam == ALL_CAMERAS or r.camera_id == cam])
            out[(cam, metric)] = metrics.aggregate(errs)
    return out


def read_stats_csv(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != metrics.STATS_COLUMNS:
            raise InvalidArgumentError(f"unexpected stats CSV header {header!r}")
        for cam, n, mean, median, best25, worst25, metric in reader:
            out[(cam, metric)] = metrics.ErrorStats(
                int(n), float(mean), float(median), float(best25), float(worst25)
            )
    return out
