import numpy as np
import pytest
from numpy.testing import assert_array_equal

from toothnet.clahe import clahe
from toothnet.errors import ConfigError
from toothnet.geometry import Box
from toothnet.scene_io import Dataset
from toothnet.synth import (
    SynthConfig,
    nominal_layout,
    sample_layout,
    scene_rng,
    scene_stem,
    synthesize_dataset,
    synthesize_scene,
    tooth_mask,
)

SMALL = dict(width=384, height=256)


class TestSynthConfig:
    @pytest.mark.parametrize("kwargs", [
        {"seed": -1},
        {"seed": 1.5},
        {"missing_probability": 1.2},
        {"noise_level": -0.1},
        {"width": 32},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SynthConfig(**kwargs)


class TestSynthesizeScene:
    def test_no_missing_teeth(self):
        scene = synthesize_scene(SynthConfig(seed=5, missing_probability=0.0, **SMALL), 3)
        assert all(a.present for a in scene.teeth)

    def test_all_missing_keeps_boxes(self):
        scene = synthesize_scene(SynthConfig(seed=5, missing_probability=1.0, noise_level=0.0, **SMALL), 0)
        assert not any(a.present for a in scene.teeth)
        assert len(scene.boxes()) == 32
        # nothing drawn but background and bone
        assert scene.image.max() < 120

    def test_deterministic(self):
        config = SynthConfig(seed=11, **SMALL)
        assert synthesize_scene(config, 4) == synthesize_scene(config, 4)

    def test_index_changes_scene(self):
        config = SynthConfig(seed=11, **SMALL)
        assert synthesize_scene(config, 0) != synthesize_scene(config, 1)

    def test_slot_order_left_to_right(self):
        config = SynthConfig(seed=2, **SMALL)
        for index in range(10):
            centers = synthesize_scene(config, index).centers()
            for arch in (centers.upper, centers.lower):
                xs = np.array([p.x for p in arch])
                assert np.all(np.diff(xs) > 0)

    def test_blob_centroid_matches_annotation(self):
        config = SynthConfig(seed=3, missing_probability=0.3, noise_level=0.0, **SMALL)
        scene = synthesize_scene(config, 0)
        bright = scene.image >= 113
        row_centers = np.arange(scene.height)[:, None] + 0.5
        col_centers = np.arange(scene.width)[None, :] + 0.5
        for annotation in scene.present_teeth():
            x0, y0, x1, y1 = annotation.box.corners()
            window = (col_centers >= x0) & (col_centers <= x1) & (row_centers >= y0) & (row_centers <= y1)
            ys, xs = np.nonzero(bright & window)
            assert len(xs) > 0
            assert abs(xs.mean() + 0.5 - annotation.box.cx) <= 1.5
            assert abs(ys.mean() + 0.5 - annotation.box.cy) <= 1.5

    def test_missing_fraction(self):
        config = SynthConfig(seed=17, missing_probability=0.2)
        absent = 0
        for index in range(10_000):
            absent += int(np.sum(~sample_layout(config, scene_rng(config, index)).present))
        assert absent / (32 * 10_000) == pytest.approx(0.2, abs=0.01)


class TestLayout:
    def test_nominal_shapes(self):
        centers, sizes = nominal_layout()
        assert centers.shape == (32, 2) and sizes.shape == (32, 2)
        assert np.all(sizes > 0)

    def test_nominal_scales_with_canvas(self):
        full, full_sizes = nominal_layout(768, 512)
        half, half_sizes = nominal_layout(384, 256)
        np.testing.assert_allclose(half, full / 2, rtol=1e-12)
        np.testing.assert_allclose(half_sizes, full_sizes / 2, rtol=1e-12)

    def test_upper_above_lower(self):
        centers, _ = nominal_layout()
        assert centers[:16, 1].max() < centers[16:, 1].min()

    def test_tooth_mask_symmetric(self):
        mask = tooth_mask(Box(10.0, 10.0, 8.0, 12.0), 20, 20)
        assert_array_equal(mask, mask[:, ::-1])
        assert_array_equal(mask, mask[::-1, :])
        assert mask[10, 10] and not mask[0, 0]


class TestSynthesizeDataset:
    def test_writes_dataset_and_manifest(self, tmp_path):
        config = SynthConfig(seed=1, width=128, height=64)
        manifest = synthesize_dataset(config, 10, tmp_path, workers=2)
        assert list(manifest["stem"]) == [scene_stem(i) for i in range(10)]
        assert manifest["split"].value_counts().to_dict() == {"train": 7, "val": 2, "test": 1}
        dataset = Dataset(tmp_path)
        assert len(dataset) == 10
        assert dataset.load(scene_stem(4)) == synthesize_scene(config, 4)

    def test_equalize_hook(self, tmp_path):
        config = SynthConfig(seed=1, width=128, height=64)

        def equalize(image):
            return clahe(image, 2.0, 4, 4)

        synthesize_dataset(config, 2, tmp_path, equalize=equalize)
        stored = Dataset(tmp_path).load(scene_stem(1))
        raw = synthesize_scene(config, 1)
        assert_array_equal(stored.image, clahe(raw.image, 2.0, 4, 4))
        assert stored.teeth == raw.teeth

    def test_stem_format(self):
        assert scene_stem(42) == "scene_00042"
