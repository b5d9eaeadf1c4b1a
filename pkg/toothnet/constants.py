"""
Constants Module

This module contains all constant values used throughout the tooth detector.
It defines:
- Canvas and patch geometry
- Loss weighting coefficients
- Preprocessing defaults
- Evaluation thresholds
- Dataset split proportions
- Output file names

These constants ensure consistency across the pipeline and make it
easier to modify parameters in one central location.
"""

# Canvas settings
"""Canonical image geometry in pixels (width x height)."""
CANVAS_WIDTH = 768
CANVAS_HEIGHT = 512
PATCH_SIZE = 128

# Tooth layout
"""Fixed anatomy: two arches of sixteen teeth each."""
TEETH_PER_ARCH = 16
NUM_TEETH = 32
NUM_COORDS = 64  # 32 points x (x, y)

# Loss weights
"""Weighting coefficients of the combined objective."""
DEFAULT_ALPHA = 3.0    # offset loss
DEFAULT_BETA = 1.5     # box loss
DEFAULT_GAMMA = 0.1    # weight regularization

# Geometry
MIN_BOX_EXTENT = 1e-3  # smallest predicted width/height, pixels

# CLAHE defaults
"""Clip limit is expressed in units of the mean tile bin count."""
CLAHE_CLIP_LIMIT = 2.0
CLAHE_TILES_X = 8
CLAHE_TILES_Y = 8
CLAHE_MIN_TILE = 8
GRAY_LEVELS = 256

# Evaluation
"""IoU threshold grid and fixed operating points."""
IOU_GRID_STEP = 0.05
IOU_GRID_POINTS = 21
IDENTIFICATION_IOU = 0.5

# Gradient checking
GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_NOISE = 1e-14
GRADCHECK_SEEDS = 20

# Dataset split
"""Split proportions follow the 574/162/82 train/val/test counts (70/20/10)."""
SPLIT_WEIGHTS = {
    "train": 574,
    "val": 162,
    "test": 82,
}
SPLIT_NAMES = ("train", "val", "test")

# Annotation schema
ANNOTATION_VERSION = 1

# Checkpoint container
CHECKPOINT_MAGIC = b"TPCKPT1"
CHECKPOINT_VERSION = 1

# Output file names
"""Fixed file names written under --out."""
METRICS_FILE = "metrics.csv"
VALIDATION_FILE = "validation.csv"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
CURVE_FILE = "curve.csv"
CHECKPOINT_FILE = "checkpoint.tpckpt"
PIPELINE_MANIFEST = "pipeline.json"
CONFUSION_PNG = "confusion.png"
OVERLAY_DIR = "overlays"
CONFIG_SNAPSHOT = "config.yaml"
DATASET_MANIFEST = "manifest.csv"
GRADCHECK_FILE = "gradcheck.csv"
ABLATION_FILE = "ablation.csv"
ABLATION_TRENDS_FILE = "ablation_trends.csv"
PREDICTION_DIR = "predictions"
PREPROCESS_FILE = "preprocess.csv"

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
