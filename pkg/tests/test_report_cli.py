import json

import numpy as np
import pytest

from awbkit.cli import main
from awbkit.dataio import load_manifest, synth_generate
from awbkit.exceptions import InvalidArgumentError
from awbkit.report import (
    EvalReport,
    evaluate_manifest,
    evaluate_results,
    read_per_image_csv,
    read_stats_csv,
    stats_from_per_image_csv,
    write_per_image_csv,
    write_stats_csv,
)

TOY_CONFIG = {
    "histogram": {"bins": 9},
    "model": {"channels": [2, 2, 2], "kernels": [3, 3, 3], "strides": [2, 2, 1],
              "pads": [1, 1, 1], "image_size": 12},
    "train": {"lr": 2e-4, "max_epochs": 2, "batch_size": 4,
              "validation_fraction": 0.25, "seed": 3},
}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    assert main(["synth", "--scenes", "6", "--sensors", "3", "--seed", "21",
                 "--out", str(out), "--size", "12"]) == 0
    return out


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "toy.json"
    path.write_text(json.dumps(TOY_CONFIG))
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir, config_file):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                 "--out", str(out), "--config", str(config_file)])
    assert code == 0
    return out


class TestEvaluate:
    def test_oracle_predictor_scores_zero(self, synth_dir):
        manifest = load_manifest(synth_dir / "manifest.csv")
        report = evaluate_manifest(manifest, lambda im: im.gt_illuminant,
                                   model_id="oracle", target_size=12)
        assert len(report.per_image) == 18
        assert np.all(report.errors("recovery") == 0.0)
        assert np.all(report.errors("reproduction") == 0.0)

    def test_predictor_failures_recorded_not_fatal(self, synth_dir):
        manifest = load_manifest(synth_dir / "manifest.csv")
        bad_path = manifest.entries[4].image_path

        def flaky(image):
            raise ValueError("boom")

        def oracle_with_hole(image):
            # evaluate_manifest passes loaded images; fail one by pixel count
            return image.gt_illuminant

        report = evaluate_manifest(manifest, flaky, model_id="x", target_size=12,
                                   entry_ids=[3, 4])
        assert len(report.per_image) == 0
        assert len(report.failures) == 2
        assert report.failures[0][1].startswith("ValueError")
        assert bad_path in {f[0] for f in report.failures}

    def test_unknown_metric_rejected(self):
        report = EvalReport("x")
        with pytest.raises(InvalidArgumentError, match="metric"):
            report.errors("chromaticity")

    def make_report(self, n=10, cameras=("camA", "camB")):
        rng = np.random.default_rng(31)
        rows = []
        for i in range(n):
            est = rng.uniform(0.1, 1.0, 3)
            gt = rng.uniform(0.1, 1.0, 3)
            rows.append((f"im{i}.rawf", cameras[i % len(cameras)], est, gt, i % 3 == 0))
        return evaluate_results(rows, model_id="synthetic", protocol="fixed_split")

    def test_per_image_csv_roundtrip_exact(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "per_image.csv"
        write_per_image_csv(report, path)
        back = read_per_image_csv(path)
        assert len(back) == len(report.per_image)
        for a, b in zip(report.per_image, back):
            assert a.image_path == b.image_path
            assert a.camera_id == b.camera_id
            assert np.array_equal(a.estimate, b.estimate)
            assert np.array_equal(a.gt, b.gt)
            assert a.recovery_err_deg == b.recovery_err_deg
            assert a.reproduction_err_deg == b.reproduction_err_deg
            assert a.jittered == b.jittered

    def test_stats_rederivable_from_per_image_csv(self, tmp_path):
        report = self.make_report()
        write_per_image_csv(report, tmp_path / "per_image.csv")
        write_stats_csv(report, tmp_path / "stats.csv")
        derived = stats_from_per_image_csv(tmp_path / "per_image.csv")
        stored = read_stats_csv(tmp_path / "stats.csv")
        assert set(derived) == set(stored)
        assert derived == stored  # exact: repr round trip + same aggregation

    def test_pooled_row_only_with_multiple_cameras(self, tmp_path):
        report = self.make_report(n=4, cameras=("solo",))
        write_stats_csv(report, tmp_path / "stats.csv")
        stored = read_stats_csv(tmp_path / "stats.csv")
        assert set(c for c, _ in stored) == {"solo"}


class TestCliSynth:
    def test_layout_and_counts(self, synth_dir):
        manifest = load_manifest(synth_dir / "manifest.csv")
        assert len(manifest.entries) == 18
        assert manifest.camera_ids() == ["synth_0", "synth_1", "synth_2"]
        assert (synth_dir / "sensors.json").is_file()
        for e in manifest.entries:
            assert (synth_dir / e.image_path).is_file()

    def test_bad_counts_exit_2(self, tmp_path):
        assert main(["synth", "--scenes", "0", "--sensors", "2", "--seed", "1",
                     "--out", str(tmp_path / "x")]) == 2


class TestCliTrain:
    def test_artifacts_written(self, trained_dir):
        assert (trained_dir / "checkpoint.ckpt").is_file()
        assert (trained_dir / "config.json").is_file()
        log = (trained_dir / "train_log.csv").read_text().strip().splitlines()
        assert log[0].startswith("epoch,")
        assert len(log) == 1 + TOY_CONFIG["train"]["max_epochs"]

    def test_config_snapshot_records_resolved_settings(self, trained_dir):
        snap = json.loads((trained_dir / "config.json").read_text())
        assert snap["train"]["lr"] == TOY_CONFIG["train"]["lr"]
        assert snap["histogram"]["bins"] == 9
        assert snap["exclude_cameras"] == []
        total = sum(snap["train_counts"].values()) + sum(snap["val_counts"].values())
        assert total == 18

    def test_exclude_cameras_honored(self, synth_dir, config_file, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out), "--config", str(config_file),
                     "--exclude-cameras", "synth_2"])
        assert code == 0
        snap = json.loads((out / "config.json").read_text())
        seen = set(snap["train_counts"]) | set(snap["val_counts"])
        assert seen == {"synth_0", "synth_1"}

    def test_same_seed_byte_identical_checkpoints(self, synth_dir, config_file,
                                                  trained_dir, tmp_path):
        out2 = tmp_path / "again"
        code = main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out2), "--config", str(config_file)])
        assert code == 0
        assert (out2 / "checkpoint.ckpt").read_bytes() == \
            (trained_dir / "checkpoint.ckpt").read_bytes()

    def test_unknown_excluded_camera_exits_2_writes_nothing(self, synth_dir,
                                                            config_file, tmp_path):
        out = tmp_path / "never"
        code = main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out), "--config", str(config_file),
                     "--exclude-cameras", "nope"])
        assert code == 2
        assert not out.exists()

    def test_invalid_config_json_exits_2(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(tmp_path / "x"), "--config", str(bad)]) == 2

    def test_unknown_config_section_exits_2(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"optimizer": {}}))
        assert main(["train", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(tmp_path / "x"), "--config", str(bad)]) == 2


class TestCliEval:
    def test_eval_writes_reports(self, synth_dir, trained_dir, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval", "--manifest", str(synth_dir / "manifest.csv"),
                     "--model", str(trained_dir / "checkpoint.ckpt"),
                     "--out", str(out)])
        assert code == 0
        rows = read_per_image_csv(out / "per_image.csv")
        assert len(rows) == 18
        derived = stats_from_per_image_csv(out / "per_image.csv")
        stored = read_stats_csv(out / "stats.csv")
        assert derived == stored

    def test_camera_filter_restricts_rows(self, synth_dir, trained_dir, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval", "--manifest", str(synth_dir / "manifest.csv"),
                     "--model", str(trained_dir / "checkpoint.ckpt"),
                     "--out", str(out), "--cameras", "synth_1"])
        assert code == 0
        rows = read_per_image_csv(out / "per_image.csv")
        assert len(rows) == 6
        assert {r.camera_id for r in rows} == {"synth_1"}

    def test_bad_metrics_exit_2(self, synth_dir, trained_dir, tmp_path):
        assert main(["eval", "--manifest", str(synth_dir / "manifest.csv"),
                     "--model", str(trained_dir / "checkpoint.ckpt"),
                     "--out", str(tmp_path / "x"), "--metrics", "recovery,vibes"]) == 2

    def test_model_or_campaign_required(self, synth_dir, tmp_path):
        assert main(["eval", "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_missing_checkpoint_exit_2(self, synth_dir, tmp_path):
        assert main(["eval", "--manifest", str(synth_dir / "manifest.csv"),
                     "--model", str(tmp_path / "ghost.ckpt"),
                     "--out", str(tmp_path / "x")]) == 2


class TestCliPredict:
    def predict_lines(self, capsys, synth_dir, trained_dir, extra=()):
        manifest = load_manifest(synth_dir / "manifest.csv")
        image = synth_dir / manifest.entries[0].image_path
        code = main(["predict", "--model", str(trained_dir / "checkpoint.ckpt"),
                     "--image", str(image), *extra])
        assert code == 0
        return capsys.readouterr().out.strip().splitlines()

    def test_estimate_is_unit_norm(self, capsys, synth_dir, trained_dir):
        lines = self.predict_lines(capsys, synth_dir, trained_dir)
        assert len(lines) == 1 and lines[0].startswith("l ")
        vec = np.array([float(v) for v in lines[0].split()[1:]])
        assert vec.shape == (3,)
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6

    def test_repeat_prediction_identical(self, capsys, synth_dir, trained_dir):
        a = self.predict_lines(capsys, synth_dir, trained_dir)
        b = self.predict_lines(capsys, synth_dir, trained_dir)
        assert a == b

    def test_working_space_dump_recomposes(self, capsys, synth_dir, trained_dir):
        lines = self.predict_lines(capsys, synth_dir, trained_dir,
                                   extra=("--dump-working-space",))
        assert len(lines) == 5
        ell = np.array([float(v) for v in lines[0].split()[1:]])
        lm = np.array([float(v) for v in lines[1].split()[1:]])
        m = np.array([[float(v) for v in line.split()[1:]] for line in lines[2:]])
        assert m.shape == (3, 3)
        recomposed = np.linalg.solve(m, lm)
        recomposed /= np.linalg.norm(recomposed)
        assert np.allclose(recomposed, ell, atol=1e-5)

    def test_missing_image_exit_2(self, trained_dir, tmp_path):
        assert main(["predict", "--model", str(trained_dir / "checkpoint.ckpt"),
                     "--image", str(tmp_path / "ghost.rawf")]) == 2


class TestCliBaseline:
    def test_gray_world_writes_report(self, synth_dir, tmp_path):
        out = tmp_path / "gw"
        code = main(["baseline", "--method", "gray_world",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out)])
        assert code == 0
        assert len(read_per_image_csv(out / "per_image.csv")) == 18
        stats = read_stats_csv(out / "stats.csv")
        assert ("all", "recovery") in stats

    def test_shades_of_gray_p1_matches_gray_world_rows(self, synth_dir, tmp_path):
        a, b = tmp_path / "gw", tmp_path / "sog"
        assert main(["baseline", "--method", "gray_world",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(a)]) == 0
        assert main(["baseline", "--method", "shades_of_gray", "--p", "1",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(b)]) == 0
        rows_a = read_per_image_csv(a / "per_image.csv")
        rows_b = read_per_image_csv(b / "per_image.csv")
        for ra, rb in zip(rows_a, rows_b):
            assert ra.image_path == rb.image_path
            assert ra.recovery_err_deg == rb.recovery_err_deg
            assert ra.reproduction_err_deg == rb.reproduction_err_deg

    def test_unknown_method_exits_2_via_argparse(self, synth_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["baseline", "--method", "psychic",
                  "--manifest", str(synth_dir / "manifest.csv"),
                  "--out", str(tmp_path / "x")])
        assert exc.value.code == 2

    def test_bad_p_exits_2(self, synth_dir, tmp_path):
        assert main(["baseline", "--method", "shades_of_gray", "--p", "0.5",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(tmp_path / "x")]) == 2


class TestCliCampaign:
    def test_leave_one_camera_out(self, synth_dir, config_file, tmp_path):
        out = tmp_path / "campaign"
        code = main(["eval", "--campaign", "loco",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out), "--config", str(config_file)])
        assert code == 0
        for cam in ("synth_0", "synth_1", "synth_2"):
            fold = out / f"fold_{cam}"
            assert (fold / "checkpoint.ckpt").is_file()
            rows = read_per_image_csv(fold / "per_image.csv")
            assert {r.camera_id for r in rows} == {cam}
            assert len(rows) == 6
            snap = json.loads((fold / "config.json").read_text())
            assert cam not in snap["train_counts"]
        summary = (out / "summary.csv").read_text().strip().splitlines()
        assert len(summary) == 1 + 3 * 2
        cams = [line.split(",")[0] for line in summary[1:]]
        assert cams == sorted(cams)

    def test_cross_campaign_single_fold(self, synth_dir, config_file, tmp_path):
        out = tmp_path / "cross"
        code = main(["eval", "--campaign", "cross", "--test-cameras", "synth_2",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(out), "--config", str(config_file)])
        assert code == 0
        fold = out / "fold_synth_2"
        rows = read_per_image_csv(fold / "per_image.csv")
        assert {r.camera_id for r in rows} == {"synth_2"}
        snap = json.loads((fold / "config.json").read_text())
        assert set(snap["train_counts"]) == {"synth_0", "synth_1"}

    def test_cross_without_test_cameras_exit_2(self, synth_dir, config_file, tmp_path):
        assert main(["eval", "--campaign", "cross",
                     "--manifest", str(synth_dir / "manifest.csv"),
                     "--out", str(tmp_path / "x"), "--config", str(config_file)]) == 2
