import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from toothnet.checkpoint import load_checkpoint, read_manifest, save_checkpoint, write_manifest
from toothnet.errors import CheckpointError


@pytest.fixture
def arrays(rng):
    return {
        "stage1.conv0.weight": rng.normal(size=(4, 1, 3, 3)),
        "stage1.fc.bias": rng.normal(size=64),
        "scalar": np.array(3.5),
    }


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path, arrays):
        path = tmp_path / "model.tpckpt"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for name, values in arrays.items():
            assert loaded[name].shape == values.shape
            assert_array_equal(loaded[name], values)

    def test_header(self, tmp_path, arrays):
        path = tmp_path / "model.tpckpt"
        save_checkpoint(path, arrays)
        blob = path.read_bytes()
        assert blob.startswith(b"TPCKPT1")
        assert struct.unpack_from("<II", blob, 7) == (1, 3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tpckpt"
        path.write_bytes(b"NOTACKPT" + bytes(16))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, arrays):
        path = tmp_path / "model.tpckpt"
        save_checkpoint(path, arrays)
        path.write_bytes(path.read_bytes()[:-12])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.tpckpt"
        path.write_bytes(b"TPCKPT1" + struct.pack("<II", 9, 0))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing.tpckpt")


class TestManifest:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "pipeline.json"
        manifest = {"backbone": "toy", "canvas": [768, 512], "use_offset": True}
        write_manifest(path, manifest)
        assert read_manifest(path) == manifest

    def test_corrupt(self, tmp_path):
        path = tmp_path / "pipeline.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(CheckpointError):
            read_manifest(path)
