import os

import numpy as np
import pytest

from toothnet.networks import PipelineConfig
from toothnet.scene import Scene
from toothnet.synth import SynthConfig, synthesize_scene

from tests.helpers import grid_teeth


def pytest_collection_modifyitems(config, items):
    if os.environ.get("TOOTHNET_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow: set TOOTHNET_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """64x32 canvas, 16 px patches, tiny backbone: fast enough for unit tests."""
    return PipelineConfig(backbone="tiny", canvas_width=64, canvas_height=32, patch_size=16)


@pytest.fixture
def grid_scene():
    image = np.zeros((32, 64), dtype=np.uint8)
    image[8:12, 6:56] = 200
    image[20:24, 6:56] = 180
    return Scene(image, grid_teeth())


@pytest.fixture
def synth_scene():
    return synthesize_scene(SynthConfig(seed=7, width=128, height=64), 0)
