import json

import numpy as np
import pandas as pd
import pytest

from toothnet.cli import ablation_trends, build_parser, main
from toothnet.constants import (
    ABLATION_FILE,
    ABLATION_TRENDS_FILE,
    CHECKPOINT_FILE,
    CONFIG_SNAPSHOT,
    CONFUSION_PNG,
    CURVE_FILE,
    GRADCHECK_FILE,
    METRICS_FILE,
    PREDICTION_DIR,
    PREPROCESS_FILE,
    REPORT_JSON,
)
from toothnet.inference import assemble_result, export_detections
from toothnet.scene_io import Dataset
from Utility.image_io import load_gray, save_gray

SMALL_RUN = """\
pipeline:
  backbone: tiny
  canvas_width: 128
  canvas_height: 64
  patch_size: 16
train:
  log_every: 1
eval:
  max_overlays: 2
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


@pytest.fixture
def dataset_dir(tmp_path, run_config):
    root = tmp_path / "data"
    assert main(["synthesize", "--config", str(run_config), "--seed", "3", "--count", "10", "--out", str(root)]) == 0
    return root


def export_ground_truth(dataset, split, out_dir):
    for stem in dataset.stems(split):
        scene = dataset.load(stem)
        result = assemble_result(scene.centers().flatten(), np.zeros((32, 2)), scene.sizes())
        export_detections(result, out_dir / f"{stem}.json", dataset.layout.image_path(stem),
                          scene.width, scene.height)


class TestParser:
    def test_common_options(self):
        args = build_parser().parse_args(["gradcheck", "--seed", "4", "--out", "x", "--case", "relu"])
        assert args.seed == 4 and str(args.out) == "x"
        assert args.case == ["relu"] and args.inject_fault == []

    @pytest.mark.parametrize("argv", [
        [],
        ["train"],
        ["fly"],
        ["gradcheck", "--case", "softmax"],
        ["eval", "--dataset", "d"],
        ["eval", "--dataset", "d", "--checkpoint", "c", "--predictions", "p"],
    ])
    def test_usage_errors_exit_1(self, argv):
        assert main(argv) == 1


class TestGradcheck:
    def test_passing_case(self, tmp_path):
        out = tmp_path / "gc"
        assert main(["gradcheck", "--case", "add_mul", "--seeds", "2", "--out", str(out)]) == 0
        table = pd.read_csv(out / GRADCHECK_FILE)
        assert list(table["case"]) == ["add_mul"]
        assert (out / CONFIG_SNAPSHOT).exists()

    def test_injected_fault_exit_1(self, tmp_path):
        argv = ["gradcheck", "--case", "add_mul", "--inject-fault", "add_mul", "--seeds", "1", "--out", str(tmp_path)]
        assert main(argv) == 1

    def test_bad_seed_count(self, tmp_path):
        assert main(["gradcheck", "--seeds", "0", "--out", str(tmp_path)]) == 1


class TestSynthesize:
    def test_dataset_written(self, dataset_dir):
        dataset = Dataset(dataset_dir)
        assert len(dataset) == 10
        assert len(dataset.stems("train")) == 7
        assert dataset.load(dataset.stems("test")[0]).image.shape == (64, 128)
        assert (dataset_dir / CONFIG_SNAPSHOT).exists()

    def test_bad_config(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  schedul: joint\n", encoding="utf-8")
        assert main(["synthesize", "--config", str(path), "--count", "1", "--out", str(tmp_path / "o")]) == 1


class TestEval:
    def test_ground_truth_predictions(self, tmp_path, run_config, dataset_dir):
        predictions = tmp_path / "gt"
        export_ground_truth(Dataset(dataset_dir), "val", predictions)
        out = tmp_path / "eval"
        argv = ["eval", "--config", str(run_config), "--dataset", str(dataset_dir), "--split", "val",
                "--predictions", str(predictions), "--out", str(out)]
        assert main(argv) == 0
        report = json.loads((out / REPORT_JSON).read_text(encoding="utf-8"))
        assert report["num_scenes"] == 2
        assert report["ap"] == pytest.approx(1.0)
        assert report["id_precision"] == 1.0
        assert report["fps"] is None
        assert (out / CONFUSION_PNG).exists()
        assert len(list((out / "overlays").glob("*.png"))) == 2

    def test_missing_prediction_file_is_runtime_failure(self, tmp_path, run_config, dataset_dir):
        argv = ["eval", "--config", str(run_config), "--dataset", str(dataset_dir),
                "--predictions", str(tmp_path / "none"), "--out", str(tmp_path / "eval")]
        assert main(argv) == 2

    def test_unknown_split(self, tmp_path, run_config, dataset_dir):
        argv = ["eval", "--config", str(run_config), "--dataset", str(dataset_dir), "--split", "holdout",
                "--predictions", str(tmp_path), "--out", str(tmp_path / "eval")]
        assert main(argv) == 1


class TestTrainEvalInfer:
    def test_end_to_end(self, tmp_path, run_config, dataset_dir):
        train_out = tmp_path / "train"
        argv = ["train", "--config", str(run_config), "--dataset", str(dataset_dir), "--iterations", "2",
                "--out", str(train_out)]
        assert main(argv) == 0
        assert len(pd.read_csv(train_out / METRICS_FILE)) == 2
        checkpoint = train_out / CHECKPOINT_FILE
        assert checkpoint.exists()

        eval_out = tmp_path / "eval"
        argv = ["eval", "--config", str(run_config), "--dataset", str(dataset_dir), "--checkpoint", str(checkpoint),
                "--out", str(eval_out)]
        assert main(argv) == 0
        assert len(list((eval_out / PREDICTION_DIR).glob("*.json"))) == 1
        report = json.loads((eval_out / REPORT_JSON).read_text(encoding="utf-8"))
        assert "ap50" in report and report["fps"] > 0.0
        assert (eval_out / CURVE_FILE).exists()

        source = tmp_path / "wide.png"
        save_gray(np.full((100, 400), 90, dtype=np.uint8), source)
        infer_out = tmp_path / "infer"
        assert main(["infer", "--checkpoint", str(checkpoint), "--image", str(source), "--out", str(infer_out)]) == 0
        document = json.loads((infer_out / "wide.json").read_text(encoding="utf-8"))
        assert (document["width"], document["height"]) == (400, 100)
        assert len(document["teeth"]) == 32
        assert (infer_out / "overlays" / "wide.png").exists()

    def test_train_canvas_mismatch(self, tmp_path, dataset_dir):
        train_out = tmp_path / "train"
        config = tmp_path / "other.yaml"
        config.write_text(SMALL_RUN.replace("canvas_width: 128", "canvas_width: 64"), encoding="utf-8")
        # a 64x64 pipeline cannot train on 128x64 scenes
        argv = ["train", "--config", str(config), "--dataset", str(dataset_dir), "--iterations", "1",
                "--out", str(train_out)]
        assert main(argv) == 1


class TestPreprocess:
    def test_writes_canvas_images(self, tmp_path, run_config):
        source = tmp_path / "raw.png"
        save_gray(np.random.default_rng(0).integers(0, 256, size=(50, 300), dtype=np.uint8), source)
        out = tmp_path / "pre"
        assert main(["preprocess", "--config", str(run_config), str(source), "--out", str(out)]) == 0
        assert load_gray(out / "raw.png").shape == (64, 128)
        table = pd.read_csv(out / PREPROCESS_FILE)
        assert table.loc[0, "output"] == "raw.png"

    def test_missing_image_is_runtime_failure(self, tmp_path):
        assert main(["preprocess", str(tmp_path / "absent.png"), "--out", str(tmp_path / "pre")]) == 2


class TestAblate:
    def test_variant_table_and_trends(self, tmp_path, run_config, dataset_dir):
        out = tmp_path / "ablation"
        argv = ["ablate", "--config", str(run_config), "--dataset", str(dataset_dir), "--runs", "1",
                "--iterations", "1", "--out", str(out)]
        assert main(argv) == 0
        table = pd.read_csv(out / ABLATION_FILE)
        assert list(table["variant"]) == ["full", "no_dr", "no_offset", "no_dr_no_offset"]
        assert (table["fps"] > 0).all()
        trends = pd.read_csv(out / ABLATION_TRENDS_FILE)
        assert len(trends) == 3
        assert (out / "no_dr" / "seed0" / CHECKPOINT_FILE).exists()

    def test_trend_checks(self, caplog):
        table = pd.DataFrame([
            {"variant": "full", "mse1": 9.0, "mse2": 2.0, "id_recall": 0.95},
            {"variant": "full", "mse1": 7.0, "mse2": 4.0, "id_recall": 0.93},
            {"variant": "no_dr", "mse1": 8.0, "mse2": 3.5, "id_recall": 0.94},
            {"variant": "no_offset", "mse1": 8.0, "mse2": 8.0, "id_recall": 0.97},
        ])
        trends = ablation_trends(table)
        assert list(trends["holds"]) == [True, False, True]
        assert trends.loc[0, "left"] == pytest.approx(3.0) and trends.loc[0, "right"] == pytest.approx(8.0)
        assert "ablation trend not reproduced: offset training raises identification recall" in caplog.text
