"""
ToothPoint Package

Two-stage detection and numbering of the 32 teeth on panoramic radiographs.
"""

from .errors import ToothNetError
from .geometry import Box, Point2, PointSet32, ToothId, iou
from .scene import Scene
from .networks import Pipeline, PipelineConfig
from .inference import DetectionResult, infer, infer_source
from .evaluation import EvalReport, evaluate

__all__ = ['ToothNetError', 'Box', 'Point2', 'PointSet32', 'ToothId', 'iou', 'Scene',
           'Pipeline', 'PipelineConfig', 'DetectionResult', 'infer', 'infer_source',
           'EvalReport', 'evaluate']
