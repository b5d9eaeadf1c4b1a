"""
Networks Module

The two detection stages and the pipeline that owns them.

Stage 1 (center regression):
    image [1,H,W] -> conv blocks -> features [C,H/8,W/8] -> GAP -> FC -> 64 values
    The 64 head outputs are normalized coordinates; decoding multiplies x by
    the canvas width and y by the canvas height.

Stage 2 (per-tooth refinement), shared by all 32 patches:
    patch [C+1,P,P] -> patchify conv (k4,s4) -> conv 3x3 s2 -> conv 3x3 -> GAP
    -> offset head (2 values, decoded x P/2) and size head (2 values,
    decoded x canvas width / height)

Patches are cut around the rounded stage-1 centers from the image stacked
on top of the upsampled stage-1 features; the crop positions carry no
gradient.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from toothnet.checkpoint import load_checkpoint, read_manifest, save_checkpoint, write_manifest
from toothnet.constants import (
    CANVAS_HEIGHT,
    CANVAS_WIDTH,
    CHECKPOINT_FILE,
    CLAHE_CLIP_LIMIT,
    CLAHE_TILES_X,
    CLAHE_TILES_Y,
    NUM_COORDS,
    NUM_TEETH,
    PATCH_SIZE,
    PIPELINE_MANIFEST,
)
from toothnet.errors import CheckpointError, ConfigError, ShapeError
from toothnet.ops import concat_channels, conv2d, crop_windows, fully_connected, global_avg_pool, relu
from toothnet.ops import upsample_bilinear
from toothnet.synth import nominal_layout
from toothnet.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

# (out_channels, stride) per conv block
BACKBONES = {
    "toy": [(8, 1), (8, 2), (16, 1), (16, 2), (32, 1), (32, 2)],
    "tiny": [(4, 2), (8, 2), (8, 1), (8, 2)],
    "wide": [(16, 1), (16, 2), (32, 1), (32, 2), (64, 1), (64, 2)],
}

STAGE2_CHANNELS = (16, 32, 32)
HEAD_INIT_STD = 1e-3


@dataclass
class PipelineConfig:
    backbone: str = "toy"
    canvas_width: int = CANVAS_WIDTH
    canvas_height: int = CANVAS_HEIGHT
    patch_size: int = PATCH_SIZE
    clahe_clip_limit: float = CLAHE_CLIP_LIMIT
    clahe_tiles_x: int = CLAHE_TILES_X
    clahe_tiles_y: int = CLAHE_TILES_Y

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone '{self.backbone}' (expected one of {sorted(BACKBONES)})")
        if self.patch_size < 8 or self.patch_size % 8:
            raise ConfigError(f"patch_size must be a positive multiple of 8, got {self.patch_size}")
        if self.canvas_width % 8 or self.canvas_height % 8:
            raise ConfigError("canvas extents must be multiples of 8")

    @property
    def feature_channels(self):
        return BACKBONES[self.backbone][-1][0]

    def coordinate_scale(self):
        """64-vector of canvas extents (x, y, x, y, ...) used to decode coordinates."""
        return np.tile([float(self.canvas_width), float(self.canvas_height)], NUM_TEETH)


class Module:
    """Owner of uniquely named parameters."""

    def __init__(self, name):
        self.name = name
        self._params = {}

    def register_parameter(self, local_name, values, trainable=True):
        full_name = f"{self.name}.{local_name}"
        if full_name in self._params:
            raise ConfigError(f"parameter '{full_name}' registered twice")
        param = Parameter(values, full_name, trainable=trainable)
        self._params[full_name] = param
        return param

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return dict(self._params)

    def state_dict(self):
        return {name: p.values.copy() for name, p in self._params.items()}

    def load_state_dict(self, arrays):
        missing = set(self._params) - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, param in self._params.items():
            values = np.asarray(arrays[name], dtype=np.float64)
            if values.shape != param.shape:
                raise CheckpointError(f"parameter '{name}' has shape {values.shape}, expected {param.shape}")
            param.values = values.copy()
            param.grad = None


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ConvBlock:
    def __init__(self, module, name, in_channels, out_channels, kernel, stride, padding, rng):
        fan_in = in_channels * kernel * kernel
        self.weight = module.register_parameter(f"{name}.weight",
                                                he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = module.register_parameter(f"{name}.bias", np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return relu(conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding))


class Stage1Net(Module):
    def __init__(self, config, rng, layout_bias=None):
        super().__init__("stage1")
        self.config = config
        self.blocks = []
        channels = 1
        for i, (out_channels, stride) in enumerate(BACKBONES[config.backbone]):
            self.blocks.append(ConvBlock(self, f"block{i}", channels, out_channels, 3, stride, 1, rng))
            channels = out_channels
        self.head_weight = self.register_parameter("head.weight",
                                                   rng.normal(0.0, HEAD_INIT_STD, size=(NUM_COORDS, channels)))
        bias = np.full(NUM_COORDS, 0.5) if layout_bias is None else np.asarray(layout_bias, dtype=np.float64)
        self.head_bias = self.register_parameter("head.bias", bias)
        self.decode_scale = config.coordinate_scale()

    def __call__(self, image):
        """image [1,H,W] -> (64 decoded centers, features [C,h,w])"""
        features = image
        for block in self.blocks:
            features = block(features)
        head = fully_connected(global_avg_pool(features), self.head_weight, self.head_bias)
        return head * self.decode_scale, features


class Stage2Net(Module):
    def __init__(self, config, rng, size_bias=None):
        super().__init__("stage2")
        self.config = config
        c1, c2, c3 = STAGE2_CHANNELS
        self.patchify = ConvBlock(self, "patchify", config.feature_channels + 1, c1, 4, 4, 0, rng)
        self.reduce = ConvBlock(self, "reduce", c1, c2, 3, 2, 1, rng)
        self.mix = ConvBlock(self, "mix", c2, c3, 3, 1, 1, rng)
        self.offset_weight = self.register_parameter("offset.weight", rng.normal(0.0, HEAD_INIT_STD, size=(2, c3)))
        self.offset_bias = self.register_parameter("offset.bias", np.zeros(2))
        self.size_weight = self.register_parameter("size.weight", rng.normal(0.0, HEAD_INIT_STD, size=(2, c3)))
        bias = np.full(2, 0.05) if size_bias is None else np.asarray(size_bias, dtype=np.float64)
        self.size_bias = self.register_parameter("size.bias", bias)
        self.offset_scale = config.patch_size / 2
        self.size_scale = np.array([config.canvas_width, config.canvas_height], dtype=np.float64)

    def offset_parameters(self):
        return [self.offset_weight, self.offset_bias]

    def __call__(self, patches):
        """patches [N,C+1,P,P] -> (offsets [N,2] px, sizes [N,2] px)"""
        pooled = global_avg_pool(self.mix(self.reduce(self.patchify(patches))))
        offsets = fully_connected(pooled, self.offset_weight, self.offset_bias) * self.offset_scale
        sizes = fully_connected(pooled, self.size_weight, self.size_bias) * self.size_scale
        return offsets, sizes


def image_tensor(image, config):
    """uint8 canvas image -> Tensor [1,H,W] in [0,1]."""
    values = np.asarray(image)
    if values.shape != (config.canvas_height, config.canvas_width):
        raise ShapeError(
            f"expected a {config.canvas_width}x{config.canvas_height} canvas image, got shape {values.shape}"
        )
    return Tensor(values[None].astype(np.float64) / 255.0)


def round_half_away(values):
    values = np.asarray(values, dtype=np.float64)
    return (np.sign(values) * np.floor(np.abs(values) + 0.5)).astype(int)


def crop_patches(image, features_upsampled, centers, patch_size):
    """
    Cut one patch per tooth from image (+) features.

    Args:
        image: Tensor [1,H,W]
        features_upsampled: Tensor [C,H,W]
        centers: 64 center coordinates (values only; no gradient reaches them)
        patch_size: Patch extent P

    Returns:
        Tensor [32, C+1, P, P]; window of tooth i spans
        [round(x_i) - P/2, round(x_i) + P/2) horizontally, likewise vertically
    """
    points = round_half_away(np.asarray(centers, dtype=np.float64).reshape(NUM_TEETH, 2))
    stack = concat_channels(image, features_upsampled)
    half = patch_size // 2
    return crop_windows(stack, points[:, 1] - half, points[:, 0] - half, patch_size)


class Pipeline:
    """
    Both stages plus the settings needed to rebuild them.

    Attributes:
        config: PipelineConfig
        stage1, stage2: the networks
        use_offset: whether refined centers add the stage-2 offset
    """

    def __init__(self, config, seed=0, use_offset=True):
        self.config = config
        self.seed = seed
        self.use_offset = use_offset
        rng = np.random.default_rng(seed)
        centers, sizes = nominal_layout(config.canvas_width, config.canvas_height)
        scale = np.array([config.canvas_width, config.canvas_height], dtype=np.float64)
        self.stage1 = Stage1Net(config, rng, layout_bias=(centers / scale).reshape(NUM_COORDS))
        self.stage2 = Stage2Net(config, rng, size_bias=sizes.mean(axis=0) / scale)
        self.stage2_trainable = True
        self.set_offset_enabled(use_offset)

    def set_offset_enabled(self, enabled):
        self.use_offset = bool(enabled)
        self._apply_trainable()

    def set_stage2_trainable(self, enabled):
        """Freeze or release the whole stage-2 network (sequential warmup)."""
        self.stage2_trainable = bool(enabled)
        self._apply_trainable()

    def _apply_trainable(self):
        offset_ids = {id(p) for p in self.stage2.offset_parameters()}
        for param in self.stage2.parameters():
            param.trainable = self.stage2_trainable and (self.use_offset or id(param) not in offset_ids)

    def parameters(self):
        return self.stage1.parameters() + self.stage2.parameters()

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def state_dict(self):
        return {**self.stage1.state_dict(), **self.stage2.state_dict()}

    def load_state_dict(self, arrays):
        expected = set(self.stage1.named_parameters()) | set(self.stage2.named_parameters())
        extra = set(arrays) - expected
        if extra:
            raise CheckpointError(f"checkpoint holds unknown parameters {sorted(extra)}")
        self.stage1.load_state_dict(arrays)
        self.stage2.load_state_dict(arrays)

    def stage1_forward(self, image):
        return self.stage1(image)

    def stage2_forward(self, patches):
        return self.stage2(patches)

    def forward(self, image):
        """
        Run both stages on a canvas image tensor [1,H,W].

        Returns:
            (centers [64], offsets [32,2], sizes [32,2])
        """
        centers, features = self.stage1_forward(image)
        upsampled = upsample_bilinear(features, self.config.canvas_height, self.config.canvas_width)
        patches = crop_patches(image, upsampled, centers.values, self.config.patch_size)
        offsets, sizes = self.stage2_forward(patches)
        return centers, offsets, sizes

    def manifest(self, extra=None):
        manifest = {
            "version": 1,
            "pipeline": asdict(self.config),
            "feature_channels": self.config.feature_channels,
            "use_offset": self.use_offset,
            "decode": {
                "center_scale": [self.config.canvas_width, self.config.canvas_height],
                "offset_scale": self.config.patch_size / 2,
                "size_scale": [self.config.canvas_width, self.config.canvas_height],
            },
            "parameters": {name: list(values.shape) for name, values in self.state_dict().items()},
        }
        manifest.update(extra or {})
        return manifest

    def save(self, out_dir, extra=None):
        out_dir = Path(out_dir)
        save_checkpoint(out_dir / CHECKPOINT_FILE, self.state_dict())
        write_manifest(out_dir / PIPELINE_MANIFEST, self.manifest(extra))
        logger.info("saved checkpoint to %s", out_dir / CHECKPOINT_FILE)

    @classmethod
    def load(cls, checkpoint_path):
        """Rebuild a pipeline from a checkpoint and the manifest next to it."""
        checkpoint_path = Path(checkpoint_path)
        manifest = read_manifest(checkpoint_path.parent / PIPELINE_MANIFEST)
        try:
            config = PipelineConfig(**manifest["pipeline"])
            use_offset = bool(manifest["use_offset"])
        except (KeyError, TypeError, ConfigError) as e:
            raise CheckpointError(f"pipeline manifest next to {checkpoint_path} is incompatible: {e}") from e
        pipeline = cls(config, use_offset=use_offset)
        pipeline.load_state_dict(load_checkpoint(checkpoint_path))
        return pipeline
