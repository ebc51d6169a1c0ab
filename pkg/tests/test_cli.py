"""Subcommand behavior: file outputs, determinism, exit codes."""

import json

import numpy as np
import pytest

from contextbnn import bayes, dataset, mlp
from contextbnn.cli import DEFAULT_CONFIG, main

TINY = {
    "train_size": 60,
    "test_size": 80,
    "class_balance": 0.5,
    "arch": [8, 4, 2],
    "train_sizes": [20, 40],
    "sweep_archs": [[6, 2]],
    "seeds_per_cell": 2,
    "rhombus_train_size": 120,
    "rhombus_arch": [4, 2],
    "grid_resolution": 9,
    "warm_start_epochs": 5,
    "train": {"learning_rate": 0.1, "epochs": 20, "batch_size": 16, "init_scale": 1.0},
    "rhombus_train": {"learning_rate": 0.1, "epochs": 20, "batch_size": 16, "init_scale": 1.0},
    "hmc": {"step_size": 0.01, "n_leapfrog": 5, "n_samples": 8, "burn_in": 20,
            "thinning": 1, "adapt": True},
    "sweep_hmc": {"step_size": 0.01, "n_leapfrog": 5, "n_samples": 8, "burn_in": 20,
                  "thinning": 1, "adapt": True},
    "rhombus_hmc": {"step_size": 0.01, "n_leapfrog": 5, "n_samples": 8, "burn_in": 20,
                    "thinning": 1, "adapt": True},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def masked_metrics(path):
    """Metrics JSON with the wall-clock field (the one timing value) removed."""
    data = json.loads(path.read_text())
    rows = data if isinstance(data, list) else [data]
    for row in rows:
        row.pop("wall_ms", None)
    return data


def tree_bytes(root):
    """Map of relative path -> bytes, with metrics JSONs wall-ms-masked."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            if p.name.endswith("metrics.json") or p.name.startswith("metrics"):
                out[str(p.relative_to(root))] = json.dumps(masked_metrics(p))
            else:
                out[str(p.relative_to(root))] = p.read_bytes()
    return out


class TestGenerate:
    def test_cli_output_matches_library_bytes(self, tmp_path):
        out = tmp_path / "run"
        assert main(["generate", "--task", "kcbs", "--seed", "7", "--out", str(out)]) == 0
        expected = dataset.format_dataset(
            dataset.sample_behaviour_dataset(
                DEFAULT_CONFIG["train_size"], seed=7,
                class_balance=DEFAULT_CONFIG["class_balance"],
            )
        )
        assert (out / "kcbs_train.csv").read_text() == expected

    def test_written_files_parse_back(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["generate", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "1", "--out", str(out)]) == 0
        train = dataset.read_dataset(out / "kcbs_train.csv")
        test = dataset.read_dataset(out / "kcbs_test.csv")
        assert len(train) == TINY["train_size"]
        assert len(test) == TINY["test_size"]
        meta = json.loads((out / "generate_meta.json").read_text())
        assert meta["train"]["seed"] == 1

    def test_rerun_is_byte_identical(self, tmp_path, tiny_config):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["generate", "--config", tiny_config, "--task", "rhombus",
                         "--seed", "3", "--out", str(out)]) == 0
        assert tree_bytes(out_a) == tree_bytes(out_b)


class TestTrainCommands:
    def test_train_nn_writes_checkpoint_and_metrics(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["train-nn", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "0", "--out", str(out)]) == 0
        params = mlp.load_params(out / "nn.ckpt")
        assert params.arch.layer_sizes == (8, 4, 2)
        metrics = json.loads((out / "metrics_nn.json").read_text())
        assert set(metrics) >= {"task", "arch", "n_train", "model", "accuracy",
                                "acceptance_rate", "wall_ms"}
        assert metrics["model"] == "nn"
        assert metrics["acceptance_rate"] is None

    def test_train_bnn_writes_ensemble(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["train-bnn", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "0", "--out", str(out)]) == 0
        ensemble = bayes.load_ensemble(out / "bnn.ensemble")
        assert len(ensemble) == TINY["hmc"]["n_samples"]
        metrics = json.loads((out / "metrics_bnn.json").read_text())
        assert 0.0 <= metrics["acceptance_rate"] <= 1.0

    def test_train_nn_reads_dataset_files(self, tmp_path, tiny_config):
        data_dir = tmp_path / "data"
        assert main(["generate", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "2", "--out", str(data_dir)]) == 0
        out = tmp_path / "run"
        code = main(["train-nn", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "2", "--out", str(out),
                     "--data", str(data_dir / "kcbs_train.csv"),
                     "--test-data", str(data_dir / "kcbs_test.csv")])
        assert code == 0
        metrics = json.loads((out / "metrics_nn.json").read_text())
        assert metrics["n_train"] == TINY["train_size"]


class TestSweep:
    def test_sweep_rows_cover_grid(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["accuracy-sweep", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "0", "--out", str(out)]) == 0
        lines = (out / "accuracy_sweep.csv").read_text().strip().split("\n")
        assert lines[0] == "size,arch,model,accuracy,seed"
        # sizes x archs x seeds x 2 models
        assert len(lines) - 1 == 2 * 1 * 2 * 2
        metrics = json.loads((out / "sweep_metrics.json").read_text())
        assert len(metrics) == len(lines) - 1

    def test_sweep_requires_both_models(self, tmp_path, tmp_path_factory):
        cfg = dict(TINY)
        cfg["model"] = "nn"
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["accuracy-sweep", "--config", str(path),
                     "--out", str(tmp_path / "run")]) == 2


class TestFigureCommands:
    def test_histograms_totals_match_test_size(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["histograms", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "0", "--out", str(out)]) == 0
        for name in ("hist_nn.csv", "hist_bnn.csv"):
            rows = (out / name).read_text().strip().split("\n")[1:]
            total = sum(int(r.split(",")[2]) for r in rows)
            assert total == TINY["test_size"]
        pred = (out / "pred_bnn.csv").read_text().strip().split("\n")
        assert len(pred) - 1 == TINY["test_size"]

    def test_calibration_emits_three_curves(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["calibration", "--config", tiny_config, "--task", "kcbs",
                     "--seed", "0", "--out", str(out)]) == 0
        for name in ("calibration_nn_total.csv", "calibration_bnn_total.csv",
                     "calibration_bnn_epistemic.csv"):
            rows = (out / name).read_text().strip().split("\n")
            assert len(rows) - 1 == DEFAULT_CONFIG["n_alphas"]
            first = rows[1].split(",")
            assert float(first[0]) == 0.0  # grid endpoint handled

    def test_rhombus_grid_row_count(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["rhombus", "--config", tiny_config, "--seed", "0",
                     "--out", str(out)]) == 0
        for variant in ("uniform", "biased"):
            rows = (out / f"rhombus_{variant}_grid.csv").read_text().strip().split("\n")
            assert len(rows) - 1 == TINY["grid_resolution"] ** 2

    def test_rhombus_rerun_byte_identical(self, tmp_path, tiny_config):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["rhombus", "--config", tiny_config, "--seed", "5",
                         "--out", str(out)]) == 0
        assert tree_bytes(out_a) == tree_bytes(out_b)


class TestExitCodes:
    def test_zero_training_size_is_usage_error(self, tmp_path):
        cfg = dict(TINY)
        cfg["train_size"] = 0
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["generate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_task_flag_is_usage_error(self, tmp_path):
        assert main(["generate", "--task", "chsh", "--out", str(tmp_path / "o")]) == 2

    def test_missing_data_file_is_io_error(self, tmp_path, tiny_config):
        code = main(["train-nn", "--config", tiny_config, "--out", str(tmp_path / "o"),
                     "--data", str(tmp_path / "nope.csv")])
        assert code == 4

    def test_unknown_command_is_usage_error(self, tmp_path):
        assert main(["frobnicate"]) == 2
