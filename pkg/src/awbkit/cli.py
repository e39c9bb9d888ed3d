"""Command-line harness: train, eval, predict, baseline, synth.

Exit codes: 0 success, 2 bad usage/config/input (nothing written), 3 runtime
abort (training diverged, unrecoverable numerics). Every subcommand loads and
validates its inputs before creating output files.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import autodiff as ad
from .baselines import METHODS, BaselineConfig, baseline_suite
from .dataio import (
    load_image_file,
    load_manifest,
    make_folds,
    split_by_cameras,
    synth_generate,
)
from .exceptions import (
    AwbError,
    CheckpointError,
    ImageFormatError,
    InvalidArgumentError,
    ManifestError,
)
from .histogram import HistogramConfig
from .networks import IlluminantEstimator, ModelConfig, forward
from .report import evaluate_manifest, write_per_image_csv, write_stats_csv
from .training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    trainer_from_manifest,
    write_train_log,
)

USAGE_ERRORS = (
    InvalidArgumentError, ManifestError, ImageFormatError, CheckpointError,
    FileNotFoundError, IsADirectoryError, PermissionError,
)

METRIC_NAMES = ("recovery", "reproduction")


def _load_config_file(path):
    """Optional JSON config: {"train": {...}, "model": {...}, "histogram": {...}}."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InvalidArgumentError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{p}: top level must be an object")
    unknown = set(data) - {"train", "model", "histogram"}
    if unknown:
        raise InvalidArgumentError(
            f"{p}: unknown config sections {sorted(unknown)}"
        )
    return data


def _build_configs(file_cfg: dict, seed):
    """Resolve (TrainConfig, ModelConfig) from config-file sections + seed flag."""
    try:
        hist = HistogramConfig(**file_cfg.get("histogram", {}))
        model_kw = dict(file_cfg.get("model", {}))
        for key in ("channels", "kernels", "strides", "pads"):
            if key in model_kw:
                model_kw[key] = tuple(model_kw[key])
        model_cfg = ModelConfig(hist=hist, **model_kw)
        train_kw = dict(file_cfg.get("train", {}))
        if seed is not None:
            train_kw["seed"] = seed
        train_cfg = TrainConfig(**train_kw)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad config field: {exc}") from None
    return train_cfg, model_cfg


def _parse_cameras(arg):
    if arg is None:
        return None
    cams = [c.strip() for c in arg.split(",") if c.strip()]
    if not cams:
        raise InvalidArgumentError(f"empty camera list {arg!r}")
    return cams


def _check_cameras_known(cams, manifest):
    unknown = sorted(set(cams) - set(manifest.camera_ids()))
    if unknown:
        raise InvalidArgumentError(
            f"unknown cameras {unknown}; manifest has {manifest.camera_ids()}"
        )


def _resolved_config_snapshot(train_cfg, model_cfg, extra: dict) -> dict:
    snap = {
        "train": asdict(train_cfg),
        "model": {k: v for k, v in asdict(model_cfg).items() if k != "hist"},
        "histogram": asdict(model_cfg.hist),
    }
    snap.update(extra)
    return snap


def _camera_counts(manifest, ids):
    counts = {}
    for i in ids:
        cam = manifest.entries[i].camera_id
        counts[cam] = counts.get(cam, 0) + 1
    return counts


def _train_one(manifest, entry_ids, train_cfg, model_cfg, out_dir: Path, snapshot_extra):
    """Shared by `train` and campaign folds: fit, then write artifacts."""
    model = IlluminantEstimator(model_cfg, seed=train_cfg.seed)
    entry_ids = list(entry_ids)
    trainer = trainer_from_manifest(manifest, train_cfg, model, entry_ids=entry_ids)

    out_dir.mkdir(parents=True, exist_ok=True)
    snap = _resolved_config_snapshot(train_cfg, model_cfg, {
        **snapshot_extra,
        "train_counts": _camera_counts(manifest, [entry_ids[j] for j in trainer.train_ids]),
        "val_counts": _camera_counts(manifest, [entry_ids[j] for j in trainer.val_ids]),
    })
    (out_dir / "config.json").write_text(json.dumps(snap, indent=1, sort_keys=True),
                                         encoding="utf-8")
    trainer.run()
    trainer.finish()
    save_checkpoint(model, out_dir / "checkpoint.ckpt", trainer=trainer)
    write_train_log(trainer.log, out_dir / "train_log.csv")
    return model, trainer


def _model_predictor(model):
    def predictor(image):
        with ad.no_grad():
            return forward(image, model)
    return predictor


def _write_report(report, out_dir: Path, metric_filter=None):
    write_per_image_csv(report, out_dir / "per_image.csv")
    write_stats_csv(report, out_dir / "stats.csv")
    for metric in metric_filter or METRIC_NAMES:
        stats = report.stats(metric)
        print(f"{metric}: n={stats.count} mean={stats.mean:.6g} "
              f"median={stats.median:.6g} best25={stats.best25:.6g} "
              f"worst25={stats.worst25:.6g}")
    if report.failures:
        print(f"{len(report.failures)} image(s) failed; see report", file=sys.stderr)


# ------------------------------------------------------------- sub-commands

def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    train_cfg, model_cfg = _build_configs(file_cfg, args.seed)
    manifest = load_manifest(args.manifest)
    exclude = _parse_cameras(args.exclude_cameras) or []
    if exclude:
        _check_cameras_known(exclude, manifest)
    ids = [i for i, e in enumerate(manifest.entries) if e.camera_id not in exclude]
    if not ids:
        raise InvalidArgumentError("excluding those cameras leaves no training data")
    _train_one(manifest, ids, train_cfg, model_cfg, Path(args.out), {
        "manifest": str(args.manifest),
        "exclude_cameras": sorted(exclude),
    })
    print(f"checkpoint written to {Path(args.out) / 'checkpoint.ckpt'}")
    return 0


def _eval_single(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    cameras = _parse_cameras(args.cameras)
    if cameras:
        _check_cameras_known(cameras, manifest)
    ids = None if cameras is None else [
        i for i, e in enumerate(manifest.entries) if e.camera_id in cameras
    ]
    metrics = _parse_metrics(args.metrics)
    report = evaluate_manifest(
        manifest, _model_predictor(model), model_id=str(args.model),
        target_size=model.config.image_size, entry_ids=ids, protocol="fixed_split",
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, metrics)
    return 0


def _parse_metrics(arg):
    names = [m.strip() for m in arg.split(",") if m.strip()]
    bad = sorted(set(names) - set(METRIC_NAMES))
    if bad or not names:
        raise InvalidArgumentError(
            f"bad --metrics {arg!r}; choose from {','.join(METRIC_NAMES)}"
        )
    return names


def _campaign(args) -> int:
    file_cfg = _load_config_file(args.config)
    train_cfg, model_cfg = _build_configs(file_cfg, args.seed)
    manifest = load_manifest(args.manifest)
    metrics = _parse_metrics(args.metrics)

    if args.campaign == "loco":
        folds = make_folds(manifest)
    else:  # cross
        test_cams = _parse_cameras(args.test_cameras)
        if not test_cams:
            raise InvalidArgumentError("--campaign cross needs --test-cameras")
        folds = [split_by_cameras(manifest, test_cams)]

    out = Path(args.out)
    summary_rows = []
    for fold in folds:
        fold_dir = out / f"fold_{fold.test_camera.replace(',', '+')}"
        model, _ = _train_one(manifest, fold.train_ids, train_cfg, model_cfg,
                              fold_dir, {
                                  "manifest": str(args.manifest),
                                  "held_out": fold.test_camera,
                              })
        report = evaluate_manifest(
            manifest, _model_predictor(model), model_id=str(fold_dir / "checkpoint.ckpt"),
            target_size=model.config.image_size, entry_ids=fold.test_ids,
            protocol="leave_one_camera_out" if args.campaign == "loco" else "cross_dataset",
        )
        write_per_image_csv(report, fold_dir / "per_image.csv")
        write_stats_csv(report, fold_dir / "stats.csv")
        for metric in metrics:
            stats = report.stats(metric)
            summary_rows.append((fold.test_camera, stats, metric))
            print(f"[{fold.test_camera}] {metric}: mean={stats.mean:.6g} "
                  f"median={stats.median:.6g}")

    from . import metrics as metrics_mod
    summary_rows.sort(key=lambda row: (row[0], row[2]))
    with open(out / "summary.csv", "w", encoding="utf-8") as f:
        f.write(metrics_mod.stats_csv_header() + "\n")
        for cam, stats, metric in summary_rows:
            f.write(metrics_mod.stats_csv_row(cam, stats, metric) + "\n")
    print(f"summary written to {out / 'summary.csv'}")
    return 0


def cmd_eval(args) -> int:
    if args.campaign is None:
        if args.model is None:
            raise InvalidArgumentError("eval needs --model (or --campaign)")
        return _eval_single(args)
    return _campaign(args)


def cmd_predict(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    image = load_image_file(args.image, args.mask,
                            target_size=model.config.image_size)
    with ad.no_grad():
        est = forward(image, model)
    # 9 significant digits: enough for the printed matrix and working-space
    # vector to reproduce the printed illuminant on re-composition
    print("l " + " ".join(f"{v:.9g}" for v in est.illuminant))
    if args.dump_working_space:
        print("lm " + " ".join(f"{v:.9g}" for v in est.working_estimate))
        for row in est.matrix:
            print("M " + " ".join(f"{v:.9g}" for v in row))
    return 0


def cmd_baseline(args) -> int:
    cfg = BaselineConfig(args.method, args.p, args.sigma)
    manifest = load_manifest(args.manifest)
    cameras = _parse_cameras(args.cameras)
    if cameras:
        _check_cameras_known(cameras, manifest)
        keep = set(cameras)
        entry_ids = [i for i, e in enumerate(manifest.entries) if e.camera_id in keep]
    else:
        entry_ids = None
    report = baseline_suite(manifest, cfg) if entry_ids is None else \
        _baseline_subset(manifest, cfg, entry_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out)
    return 0


def _baseline_subset(manifest, cfg, entry_ids):
    from .baselines import estimate_baseline
    return evaluate_manifest(
        manifest, lambda image: estimate_baseline(image, cfg),
        model_id=f"baseline:{cfg.method}", entry_ids=entry_ids,
    )


def cmd_synth(args) -> int:
    manifest = synth_generate(args.out, args.scenes, args.sensors, args.seed,
                              size=args.size)
    print(f"{len(manifest.entries)} images over "
          f"{len(manifest.camera_ids())} sensors in {args.out}")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awbkit",
        description="Sensor-independent illuminant estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclude-cameras", default=None,
                   help="comma-separated camera_ids to drop from training")
    p.add_argument("--config", default=None,
                   help="JSON file with train/model/histogram overrides")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or run a campaign")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="checkpoint to evaluate")
    p.add_argument("--cameras", default=None, help="restrict to these camera_ids")
    p.add_argument("--metrics", default="recovery,reproduction")
    p.add_argument("--campaign", choices=("loco", "cross"), default=None,
                   help="train+eval per fold instead of evaluating one model")
    p.add_argument("--test-cameras", default=None,
                   help="cross campaign: cameras forming the test side")
    p.add_argument("--config", default=None,
                   help="JSON file with train/model/histogram overrides")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="estimate one image's illuminant")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--dump-working-space", action="store_true",
                   help="also print the working-space estimate and the matrix")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="run a classical estimator over a manifest")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, default=None, help="Minkowski norm order")
    p.add_argument("--sigma", type=float, default=2.0, help="Gaussian smoothing")
    p.add_argument("--cameras", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic multi-sensor dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--sensors", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AwbError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
