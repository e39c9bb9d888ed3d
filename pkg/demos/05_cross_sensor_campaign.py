"""Leave-one-camera-out at miniature scale, via the command-line harness.

Five synthetic sensors see the same scenes; each fold trains on four sensors
and is scored on the fifth, next to the gray-world baseline on that split.
Uses the same `awbkit eval --campaign loco` entry point as a full run.
"""

import json
import tempfile
from pathlib import Path

from awbkit.baselines import BaselineConfig, baseline_suite
from awbkit.cli import main
from awbkit.dataio import load_manifest
from awbkit.report import read_stats_csv

workdir = Path(tempfile.mkdtemp(prefix="awb_campaign_"))
data = workdir / "data"
run = workdir / "run"

assert main(["synth", "--scenes", "150", "--sensors", "5",
             "--seed", "23", "--out", str(data), "--size", "16"]) == 0

config = {
    "histogram": {"bins": 21},
    "model": {"channels": [8, 16, 32], "image_size": 16},
    "train": {"lr": 3e-3, "batch_size": 16, "validation_fraction": 0.05,
              "lr_decay_every_epochs": 2, "lr_decay_factor": 0.5,
              "max_epochs": 4, "seed": 0},
}
cfg_path = workdir / "config.json"
cfg_path.write_text(json.dumps(config))

assert main(["eval", "--campaign", "loco",
             "--manifest", str(data / "manifest.csv"),
             "--out", str(run), "--config", str(cfg_path),
             "--metrics", "recovery"]) == 0

manifest = load_manifest(data / "manifest.csv")
gray_world = baseline_suite(manifest, BaselineConfig("gray_world"), target_size=16)
summary = read_stats_csv(run / "summary.csv")

print(f"\n{'held-out sensor':<16} {'model mean':>11} {'gray-world mean':>16}")
for cam in manifest.camera_ids():
    model_mean = summary[(cam, "recovery")].mean
    gw_mean = gray_world.stats("recovery", cam).mean
    print(f"{cam:<16} {model_mean:>10.3f}  {gw_mean:>15.3f}")
print(f"\nartifacts in {run}")
