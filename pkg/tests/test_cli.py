"""Tests for the command-line surface and experiment runners: file schemas,
determinism, exit codes, manifests."""

import csv
import json
import os

import numpy as np
import pytest

from gpcal import cli, rig, serialize
from gpcal import calibration as cal
from gpcal import gp
from gpcal.experiments import ExperimentConfig, board_subset_indices

FAST_FIT = {"fit": {"restarts": 1, "max_iter": 80}}
FAST_MLP = {"mlp": {"epochs": 60}}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestBoardSubsets:
    def test_bisection_sequence(self):
        assert board_subset_indices(2) == [0, 19]
        assert board_subset_indices(3) == [0, 9, 19]
        assert board_subset_indices(5) == [0, 4, 9, 14, 19]
        assert board_subset_indices(9) == [0, 2, 4, 6, 9, 11, 14, 16, 19]

    def test_unreachable_count_rejected(self):
        with pytest.raises(ValueError):
            board_subset_indices(4)

    def test_training_sizes_match_board_counts(self):
        spec = rig.CheckerboardSpec()
        pts, idx = spec.points()
        two = np.isin(idx, board_subset_indices(2)).sum()
        nine = np.isin(idx, board_subset_indices(9)).sum()
        assert two == 176
        assert nine == 792


class TestSimulate:
    def test_grid_csv_has_175_rows(self, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["simulate", "--experiment", "grid", "--cameras", "2",
                       "--out", str(out), "--seed", "3"])
        assert rc == 0
        rows = read_csv(out / "dataset.csv")
        assert rows[0] == ["u1", "v1", "u2", "v2", "x", "y", "z"]
        assert len(rows) == 176  # header + 175

    def test_checkerboard_csv_has_board_column(self, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["simulate", "--experiment", "checkerboard", "--cameras", "2",
                       "--out", str(out), "--seed", "3"])
        assert rc == 0
        rows = read_csv(out / "dataset.csv")
        assert rows[0][-1] == "board"
        assert len(rows) == 1761

    def test_byte_identical_reruns(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert cli.main(["simulate", "--experiment", "grid", "--cameras", "3",
                             "--out", str(out), "--seed", "11"]) == 0
        assert (out_a / "dataset.csv").read_bytes() == (out_b / "dataset.csv").read_bytes()
        assert (out_a / "rig.json").read_bytes() == (out_b / "rig.json").read_bytes()

    def test_manifest_lists_hashed_files(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["simulate", "--experiment", "grid", "--cameras", "2", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        names = {f["path"] for f in manifest["files"]}
        assert names == {"dataset.csv", "rig.json"}
        for entry in manifest["files"]:
            assert entry["sha256"] == serialize.sha256_file(out / entry["path"])
        assert manifest["config"]["seed"] == 0
        assert manifest["package_version"]

    def test_no_partial_files_left(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["simulate", "--experiment", "grid", "--cameras", "2", "--out", str(out)])
        assert not [p for p in os.listdir(out) if p.endswith(".partial")]


@pytest.fixture(scope="module")
def grid_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.main(["simulate", "--experiment", "grid", "--cameras", "2",
                     "--out", str(out), "--seed", "5"]) == 0
    return str(out / "dataset.csv"), str(out / "rig.json")


class TestTrain:
    def test_gp_metrics_and_predictions(self, tmp_path, grid_csv):
        dataset, _ = grid_csv
        out = tmp_path / "gp"
        cfg = write_config(tmp_path, FAST_FIT)
        rc = cli.main(["train", "--config", cfg, "--dataset", dataset, "--method", "gp",
                       "--ratio", "0.9", "--seed", "1", "--out", str(out)])
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["train_size"] == 157 and metrics["test_size"] == 18
        assert metrics["rmse"] > 0 and len(metrics["rmse_per_axis"]) == 3
        assert metrics["mean_combined_std"] > 0
        rows = read_csv(out / "predictions.csv")
        assert rows[0] == "x,y,z,pred_x,pred_y,pred_z,std_x,std_y,std_z,combined_std".split(",")
        assert len(rows) == 19
        assert all(cell != "" for cell in rows[1])
        model = json.loads((out / "model.json").read_text())
        assert model["model_type"] == "gp_calibration"
        restored = serialize.calibration_from_dict(model)
        assert restored.camera_count == 2

    def test_mlp_predictions_have_empty_std_columns(self, tmp_path, grid_csv):
        dataset, _ = grid_csv
        out = tmp_path / "mlp"
        cfg = write_config(tmp_path, FAST_MLP)
        rc = cli.main(["train", "--config", cfg, "--dataset", dataset, "--method", "mlp",
                       "--ratio", "0.9", "--seed", "1", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "predictions.csv")
        assert rows[1][6:] == ["", "", "", ""]
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["mean_combined_std"] is None

    def test_triangulation_ignores_split(self, tmp_path, grid_csv):
        dataset, rig_path = grid_csv
        out = tmp_path / "tri"
        rc = cli.main(["train", "--dataset", dataset, "--rig", rig_path,
                       "--method", "triangulation", "--ratio", "0.5", "--seed", "1",
                       "--out", str(out)])
        assert rc == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["evaluated_points"] == 175
        rows = read_csv(out / "predictions.csv")
        assert len(rows) == 176

    def test_train_determinism(self, tmp_path, grid_csv):
        dataset, _ = grid_csv
        cfg = write_config(tmp_path, FAST_FIT)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert cli.main(["train", "--config", cfg, "--dataset", dataset, "--method", "gp",
                             "--ratio", "0.8", "--seed", "9", "--out", str(out)]) == 0
            outs.append(out)
        assert (outs[0] / "predictions.csv").read_bytes() == (outs[1] / "predictions.csv").read_bytes()
        assert (outs[0] / "model.json").read_bytes() == (outs[1] / "model.json").read_bytes()

    def test_loaded_model_predicts_identically(self, tmp_path, grid_csv):
        dataset, _ = grid_csv
        out = tmp_path / "reload"
        cfg = write_config(tmp_path, FAST_FIT)
        cli.main(["train", "--config", cfg, "--dataset", dataset, "--method", "gp",
                  "--ratio", "0.9", "--seed", "2", "--out", str(out)])
        doc = json.loads((out / "model.json").read_text())
        model = serialize.calibration_from_dict(doc)
        data = cal.read_correspondence_csv(dataset)
        pred = cal.predict_point(model, data.pixels[0])
        assert np.all(np.isfinite(pred.mean))
        again = serialize.calibration_from_dict(json.loads(json.dumps(serialize.calibration_to_dict(model))))
        pred2 = cal.predict_point(again, data.pixels[0])
        np.testing.assert_allclose(pred2.mean, pred.mean, rtol=1e-10)
        np.testing.assert_allclose(pred2.std, pred.std, rtol=1e-8, atol=1e-12)

    def test_missing_dataset_is_config_error(self, tmp_path):
        rc = cli.main(["train", "--method", "gp", "--out", str(tmp_path / "x")])
        assert rc == cli.EXIT_CONFIG

    def test_malformed_csv_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("u1,v1,x,y,z\n1,2,3,4\n")
        rc = cli.main(["train", "--dataset", str(bad), "--method", "gp", "--out", str(tmp_path / "x")])
        assert rc == cli.EXIT_CONFIG


class TestSweep:
    def test_row_count_and_status(self, tmp_path, grid_csv):
        dataset, rig_path = grid_csv
        out = tmp_path / "sweep"
        doc = {
            **FAST_FIT,
            **FAST_MLP,
            "sweep": {"ratios": [0.9, 0.5], "methods": ["gp", "mlp", "triangulation"]},
        }
        cfg = write_config(tmp_path, doc)
        rc = cli.main(["sweep", "--config", cfg, "--dataset", dataset, "--rig", rig_path,
                       "--runs", "2", "--seed", "0", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "sweep.csv")
        assert rows[0] == ["method", "ratio", "seed", "rmse", "mean_std", "status"]
        assert len(rows) == 1 + 3 * 2 * 2
        assert all(r[5] == "ok" for r in rows[1:])
        gp_rows = [r for r in rows[1:] if r[0] == "gp"]
        assert all(r[4] != "" for r in gp_rows)
        mlp_rows = [r for r in rows[1:] if r[0] == "mlp"]
        assert all(r[4] == "" for r in mlp_rows)

    def test_default_ratios_match_protocol(self):
        cfg = ExperimentConfig()
        assert cfg.sweep_ratios == (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)

    def test_generates_dataset_when_not_given(self, tmp_path):
        out = tmp_path / "sweep"
        doc = {**FAST_FIT, "sweep": {"ratios": [0.9], "methods": ["gp"]}, "cameras": 2}
        cfg = write_config(tmp_path, doc)
        rc = cli.main(["sweep", "--config", cfg, "--runs", "1", "--out", str(out)])
        assert rc == 0
        assert len(read_csv(out / "sweep.csv")) == 2


class TestActiveLearn:
    def test_trace_files_and_summary(self, tmp_path, grid_csv):
        dataset, rig_path = grid_csv
        out = tmp_path / "al"
        doc = {**FAST_FIT, "al": {"max_iterations": 3, "repeats": 2}}
        cfg = write_config(tmp_path, doc)
        rc = cli.main(["active-learn", "--config", cfg, "--dataset", dataset,
                       "--rig", rig_path, "--seed", "4", "--out", str(out)])
        assert rc == 0
        for r in range(2):
            rows = read_csv(out / f"trace_repeat{r}.csv")
            assert rows[0] == ["repeat", "iteration", "selected_index", "acquisition_value",
                               "mean_pool_std", "test_rmse"]
            assert len(rows) == 4  # header + 3 iterations
        summary = json.loads((out / "al_summary.json").read_text())
        assert len(summary["repeats"]) == 2
        assert all(not r["incomplete"] for r in summary["repeats"])

    def test_trivial_stop_threshold_gives_empty_traces(self, tmp_path, grid_csv):
        dataset, rig_path = grid_csv
        out = tmp_path / "al0"
        doc = {**FAST_FIT, "al": {"max_iterations": 5, "repeats": 1, "stop_threshold": 1e9}}
        cfg = write_config(tmp_path, doc)
        rc = cli.main(["active-learn", "--config", cfg, "--dataset", dataset,
                       "--rig", rig_path, "--out", str(out)])
        assert rc == 0
        assert len(read_csv(out / "trace_repeat0.csv")) == 1  # header only

    def test_repeats_use_different_seed_subsets(self, tmp_path, grid_csv):
        dataset, rig_path = grid_csv
        out = tmp_path / "al2"
        doc = {**FAST_FIT, "al": {"max_iterations": 2, "repeats": 2}}
        cfg = write_config(tmp_path, doc)
        assert cli.main(["active-learn", "--config", cfg, "--dataset", dataset,
                         "--rig", rig_path, "--out", str(out)]) == 0
        t0 = read_csv(out / "trace_repeat0.csv")[1:]
        t1 = read_csv(out / "trace_repeat1.csv")[1:]
        assert t0 != t1


class TestCheckerboardEval:
    def test_metrics_csv_schema(self, tmp_path):
        out = tmp_path / "cb"
        doc = {
            **FAST_FIT,
            "mlp": {"epochs": 40},
            "board_eval": {"board_counts": [2, 3], "camera_counts": [2], "runs": 1},
        }
        cfg = write_config(tmp_path, doc)
        rc = cli.main(["checkerboard-eval", "--config", cfg, "--out", str(out), "--seed", "1"])
        assert rc == 0
        rows = read_csv(out / "checkerboard_metrics.csv")
        assert rows[0] == ["scenario", "method", "rmse_mean", "rmse_std", "avg_std_mean", "avg_std_std"]
        scenarios = {(r[0], r[1]) for r in rows[1:]}
        assert scenarios == {
            ("cams2_boards2", "gp"), ("cams2_boards2", "mlp"),
            ("cams2_boards3", "gp"), ("cams2_boards3", "mlp"),
        }
        gp_rows = [r for r in rows[1:] if r[1] == "gp"]
        assert all(r[4] != "" for r in gp_rows)
        preds = read_csv(out / "predictions_cams2_boards2_gp.csv")
        assert len(preds) == 1 + 1760 - 176

    def test_training_sizes_in_manifest_config(self, tmp_path):
        out = tmp_path / "cb2"
        doc = {
            **FAST_FIT,
            "mlp": {"epochs": 20},
            "board_eval": {"board_counts": [2], "camera_counts": [2], "runs": 1},
        }
        cfg = write_config(tmp_path, doc)
        assert cli.main(["checkerboard-eval", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "checkerboard-eval"
        assert manifest["config"]["board_counts"] == [2]


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path):
        cfg = write_config(tmp_path, {"bogus": 1})
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG

    def test_invalid_json_config(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG

    def test_missing_rig_file(self, tmp_path):
        assert cli.main(["simulate", "--rig", str(tmp_path / "none.json"),
                         "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
