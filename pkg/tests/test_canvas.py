import numpy as np
import pytest
from numpy.testing import assert_array_equal

from toothnet.canvas import from_canvas_box, preprocess_image, to_canvas, to_canvas_box
from toothnet.geometry import Box


class TestToCanvas:
    def test_identity(self, rng):
        image = rng.integers(0, 256, size=(512, 768), dtype=np.uint8)
        canvas, record = to_canvas(image)
        assert_array_equal(canvas, image)
        assert record.is_identity

    def test_exact_half(self, rng):
        image = rng.integers(0, 256, size=(1024, 1536), dtype=np.uint8)
        canvas, record = to_canvas(image)
        blocks = image.astype(np.float64).reshape(512, 2, 768, 2).mean(axis=(1, 3))
        assert_array_equal(canvas, np.rint(blocks).astype(np.uint8))
        assert (record.pad_x, record.pad_y) == (0, 0)
        assert record.scale == 0.5

    def test_wide_source_is_padded_vertically(self):
        image = np.full((1200, 3000), 200, dtype=np.uint8)
        canvas, record = to_canvas(image)
        assert record.scale == pytest.approx(0.256)
        assert (record.pad_x, record.pad_y) == (0, 102)
        assert record.scale_y == pytest.approx(307 / 1200)
        assert canvas.shape == (512, 768)
        assert np.all(canvas[:102] == 0)
        assert np.all(canvas[102:409] == 200)
        assert np.all(canvas[409:] == 0)

    def test_box_round_trip(self, rng):
        _, record = to_canvas(np.zeros((1200, 3000), dtype=np.uint8))
        for _ in range(20):
            box = Box(*rng.uniform(100, 2900, size=1), *rng.uniform(100, 1100, size=1), *rng.uniform(20, 200, size=2))
            back = from_canvas_box(to_canvas_box(box, record), record)
            assert np.max(np.abs(back.as_array() - box.as_array())) <= 0.5

    def test_small_source_is_upscaled(self):
        canvas, record = to_canvas(np.full((100, 100), 50, dtype=np.uint8))
        assert record.scale == pytest.approx(5.12)
        assert record.pad_x == (768 - 512) // 2
        assert canvas[256, 384] == 50


class TestPreprocess:
    def test_shape_and_dtype(self, rng):
        image = rng.integers(0, 256, size=(300, 500), dtype=np.uint8)
        canvas, record = preprocess_image(image)
        assert canvas.shape == (512, 768)
        assert canvas.dtype == np.uint8
        assert record.source_width == 500 and record.source_height == 300
