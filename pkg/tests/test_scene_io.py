import json

import numpy as np
import pandas as pd
import pytest

from toothnet.errors import AnnotationError, DatasetError, DatasetIOError, ShapeError
from toothnet.geometry import Box, ToothId
from toothnet.scene import Scene, ToothAnnotation, box_in_bounds, clamp_box, scene_from_arrays
from toothnet.scene_io import (
    Dataset,
    DatasetLayout,
    assign_splits,
    load_scene,
    read_dataset_manifest,
    save_scene,
    split_counts,
    write_dataset_manifest,
)
from Utility.image_io import save_gray

from tests.helpers import grid_teeth


def saved(tmp_path, scene):
    path = tmp_path / "annotations" / "scene.json"
    save_scene(scene, path, tmp_path / "images" / "scene.png")
    return path


def rewrite(path, edit):
    document = json.loads(path.read_text(encoding="utf-8"))
    edit(document)
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")


class TestScene:
    def test_wrong_count(self):
        with pytest.raises(ShapeError, match="expected 32 teeth"):
            Scene(np.zeros((32, 64), dtype=np.uint8), grid_teeth()[:31])

    def test_box_out_of_bounds(self):
        teeth = grid_teeth()
        teeth[0] = ToothAnnotation(teeth[0].tooth, True, Box(1.0, 10.0, 4.0, 4.0))
        with pytest.raises(ShapeError):
            Scene(np.zeros((32, 64), dtype=np.uint8), teeth)

    def test_regression_order(self, grid_scene):
        ordered = grid_scene.in_regression_order()
        assert ordered[0].tooth == ToothId(1)
        assert ordered[16].tooth == ToothId(32)
        flat = grid_scene.centers().flatten()
        assert list(flat[:4]) == [8.0, 10.0, 11.0, 10.0]
        assert list(flat[32:34]) == [8.0, 22.0]

    def test_sizes(self, grid_scene):
        assert list(grid_scene.sizes()[:4]) == [2.0, 4.0, 2.0, 4.0]

    def test_from_arrays(self, grid_scene):
        present = np.array([a.present for a in grid_scene.in_regression_order()])
        rebuilt = scene_from_arrays(grid_scene.image, grid_scene.centers().as_array(),
                                    grid_scene.sizes().reshape(32, 2), present)
        assert rebuilt == grid_scene

    def test_clamp_box(self):
        box = clamp_box(Box(2.0, 30.0, 8.0, 6.0), 64, 32)
        assert box.corners() == (0.0, 27.0, 6.0, 32.0)

    def test_bounds_have_no_pixel_slack(self):
        assert box_in_bounds(Box(4.0, 4.0, 8.0, 8.0), 64, 32)
        assert box_in_bounds(Box(60.0, 28.0, 8.0, 8.0), 64, 32)
        assert not box_in_bounds(Box(4.0 - 1e-9, 4.0, 8.0, 8.0), 64, 32)
        assert not box_in_bounds(Box(60.0 + 1e-9, 16.0, 8.0, 8.0), 64, 32)

    def test_clamped_boxes_are_in_bounds(self, rng):
        for _ in range(200):
            box = Box(*rng.uniform(0.0, [768.0, 512.0]), *rng.uniform(0.1, 90.0, size=2))
            assert box_in_bounds(clamp_box(box, 768, 512), 768, 512)


class TestSceneFiles:
    def test_round_trip(self, tmp_path, synth_scene):
        assert load_scene(saved(tmp_path, synth_scene)) == synth_scene

    def test_relative_image_path(self, tmp_path, grid_scene):
        document = json.loads(saved(tmp_path, grid_scene).read_text(encoding="utf-8"))
        assert document["image"] == "../images/scene.png"
        assert document["version"] == 1
        assert (document["width"], document["height"]) == (64, 32)

    def test_thirty_one_teeth(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        rewrite(path, lambda d: d["teeth"].pop())
        with pytest.raises(AnnotationError, match="expected 32 teeth"):
            load_scene(path)

    def test_out_of_range_id(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        rewrite(path, lambda d: d["teeth"][5].update(id=33))
        with pytest.raises(AnnotationError) as info:
            load_scene(path)
        assert info.value.field == "teeth[5].id"

    def test_duplicate_id(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        rewrite(path, lambda d: d["teeth"][1].update(id=1))
        with pytest.raises(AnnotationError, match="duplicate"):
            load_scene(path)

    def test_non_numeric_field(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        rewrite(path, lambda d: d["teeth"][2].update(cx="left"))
        with pytest.raises(AnnotationError) as info:
            load_scene(path)
        assert info.value.field == "teeth[2].cx"

    def test_broken_json_reports_line(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[3] = lines[3] + ","
        path.write_text("\n".join(lines), encoding="utf-8")
        with pytest.raises(AnnotationError) as info:
            load_scene(path)
        assert info.value.line is not None

    def test_image_size_mismatch(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        save_gray(np.zeros((16, 64), dtype=np.uint8), tmp_path / "images" / "scene.png")
        with pytest.raises(AnnotationError, match="annotation says"):
            load_scene(path)

    def test_missing_image(self, tmp_path, grid_scene):
        path = saved(tmp_path, grid_scene)
        (tmp_path / "images" / "scene.png").unlink()
        with pytest.raises(DatasetIOError):
            load_scene(path)


class TestSplits:
    def test_default_split_counts(self):
        assert split_counts(818) == {"train": 574, "val": 162, "test": 82}

    def test_largest_remainder(self):
        assert split_counts(10) == {"train": 7, "val": 2, "test": 1}
        assert sum(split_counts(101).values()) == 101

    def test_assignment_is_seeded(self):
        first = assign_splits(50, seed=3)
        assert first == assign_splits(50, seed=3)
        assert first != assign_splits(50, seed=4)
        assert pd.Series(first).value_counts().to_dict() == split_counts(50)


class TestDataset:
    def test_manifest_round_trip(self, tmp_path):
        write_dataset_manifest(tmp_path, ["a", "b", "c"], ["train", "val", "test"])
        manifest = read_dataset_manifest(tmp_path)
        assert list(manifest["stem"]) == ["a", "b", "c"]

    def test_unknown_split_in_manifest(self, tmp_path):
        write_dataset_manifest(tmp_path, ["a"], ["holdout"])
        with pytest.raises(DatasetError, match="unknown splits"):
            read_dataset_manifest(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            Dataset(tmp_path)

    def test_stems_by_split(self, tmp_path, grid_scene):
        layout = DatasetLayout(tmp_path)
        layout.create()
        for stem in ("s0", "s1"):
            save_scene(grid_scene, layout.annotation_path(stem), layout.image_path(stem))
        write_dataset_manifest(tmp_path, ["s0", "s1"], ["train", "test"])
        dataset = Dataset(tmp_path)
        assert dataset.stems("train") == ["s0"]
        assert dataset.stems("val") == []
        assert dataset.scenes("test") == [grid_scene]
        with pytest.raises(DatasetError):
            dataset.stems("holdout")
