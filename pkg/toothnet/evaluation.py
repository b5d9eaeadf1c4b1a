"""
Evaluation Module

Detection and identification metrics over a set of scenes. It provides:
- match_boxes: max-IoU assignment of detections to ground truth
- precision_recall_at: TP/FP/FN ratios at one IoU threshold
- average_precision: threshold sweep 0.00..1.00 in 0.05 steps
- mean_iou: mean IoU over matched pairs
- identification_metrics / confusion_matrix: tooth numbering quality
- evaluate: everything above gathered into an EvalReport

Matching rules:
- A detection is assigned to the ground-truth box of maximal positive IoU
  (ties go to the lower ground-truth index)
- A ground-truth box keeps only its best assigned detection (ties go to
  the lower detection index)

Universes:
- Detection metrics use all 32 annotated boxes, present or not
- Identification metrics use the present teeth only

Scores:
- AP is the trapezoidal area under the (recall, precision) points taken
  from the highest threshold down, anchored at recall 0 with the
  precision of the highest threshold
- AP50 / AP75 are the F1 scores at thresholds 0.5 / 0.75
- Empty denominators count as 1.0 and are reported in EvalReport.flags
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from toothnet.constants import IDENTIFICATION_IOU, IOU_GRID_POINTS, IOU_GRID_STEP, NUM_TEETH
from toothnet.constants import CURVE_FILE, REPORT_CSV, REPORT_JSON
from toothnet.errors import DatasetError, DatasetIOError, ShapeError
from toothnet.geometry import iou_matrix

logger = logging.getLogger(__name__)


def threshold_grid():
    return np.round(np.arange(IOU_GRID_POINTS) * IOU_GRID_STEP, 2)


@dataclass
class MatchResult:
    """
    Attributes:
        pairs: (ground-truth index, detection index, iou) triples, iou > 0
        unmatched_gt: ground-truth indices without a detection
        unmatched_det: detection indices without a ground-truth box
        num_detections, num_ground_truth: list sizes
    """

    pairs: list
    unmatched_gt: list
    unmatched_det: list
    num_detections: int
    num_ground_truth: int

    def ious(self):
        return np.array([p[2] for p in self.pairs], dtype=np.float64)


def _box_rows(boxes):
    return np.array([b.as_array() for b in boxes], dtype=np.float64).reshape(-1, 4)


def match_boxes(detections, ground_truth):
    """Assign detections to ground-truth boxes by maximal IoU."""
    overlaps = iou_matrix(_box_rows(detections), _box_rows(ground_truth))
    best = {}
    for d in range(len(detections)):
        if overlaps.shape[1] == 0:
            break
        g = int(np.argmax(overlaps[d]))
        value = float(overlaps[d, g])
        if value <= 0.0:
            continue
        if g not in best or value > best[g][1]:
            best[g] = (d, value)
    pairs = [(g, d, value) for g, (d, value) in sorted(best.items())]
    matched_det = {d for _, d, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[g for g in range(len(ground_truth)) if g not in best],
        unmatched_det=[d for d in range(len(detections)) if d not in matched_det],
        num_detections=len(detections),
        num_ground_truth=len(ground_truth),
    )


def match_by_identity(detections, ground_truth):
    """
    Class-aware matching: detection i can only pair with ground-truth box i
    (both lists indexed by tooth id).
    """
    if len(detections) != len(ground_truth):
        raise ShapeError("class-aware matching needs one detection per ground-truth box")
    pairs = []
    for i, (det, gt) in enumerate(zip(detections, ground_truth)):
        value = float(iou_matrix(det.as_array(), gt.as_array())[0, 0])
        if value > 0.0:
            pairs.append((i, i, value))
    matched = {p[0] for p in pairs}
    unmatched = [i for i in range(len(detections)) if i not in matched]
    return MatchResult(pairs, list(unmatched), list(unmatched), len(detections), len(ground_truth))


def _ratio(numerator, denominator, name, flags):
    if denominator == 0:
        message = f"{name}: empty denominator, reported as 1.0"
        if message not in flags:
            logger.warning(message)
            flags.append(message)
        return 1.0
    return numerator / denominator


def counts_at(matches, threshold):
    """Pooled (TP, FP, FN) over MatchResults at one threshold."""
    tp = sum(int(np.sum(m.ious() >= threshold)) for m in matches)
    detections = sum(m.num_detections for m in matches)
    truths = sum(m.num_ground_truth for m in matches)
    return tp, detections - tp, truths - tp


def precision_recall_at(match, threshold, flags=None):
    """(precision, recall) at an IoU threshold for one MatchResult or a list of them."""
    matches = match if isinstance(match, (list, tuple)) else [match]
    flags = [] if flags is None else flags
    tp, fp, fn = counts_at(matches, threshold)
    return _ratio(tp, tp + fp, "precision", flags), _ratio(tp, tp + fn, "recall", flags)


def f1_score(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class APResult:
    ap: float
    ap50: float
    ap75: float
    curve: list


def average_precision(matches, flags=None):
    """
    Sweep the IoU threshold over the 21-point grid on pooled counts.

    Returns:
        APResult with curve = [(threshold, precision, recall), ...]
    """
    if not matches:
        raise DatasetError("average_precision needs at least one scene")
    flags = [] if flags is None else flags
    grid = threshold_grid()
    curve = []
    for t in grid:
        precision, recall = precision_recall_at(list(matches), t, flags)
        curve.append((float(t), precision, recall))
    index = {round(t, 2): i for i, (t, _, _) in enumerate(curve)}
    ap50 = f1_score(*curve[index[0.5]][1:])
    ap75 = f1_score(*curve[index[0.75]][1:])
    return APResult(ap=min(pr_area(curve), 1.0), ap50=ap50, ap75=ap75, curve=curve)


def pr_area(curve):
    """Trapezoidal area under (recall, precision) from the highest threshold down, anchored at recall 0."""
    ordered = sorted(curve, key=lambda point: point[0], reverse=True)
    recall = np.array([0.0] + [r for _, _, r in ordered])
    precision = np.array([ordered[0][1]] + [p for _, p, _ in ordered])
    return float(np.sum((precision[1:] + precision[:-1]) / 2.0 * np.diff(recall)))


def mean_iou(matches):
    """Mean IoU over all matched pairs; None when nothing matched."""
    values = np.concatenate([m.ious() for m in matches]) if matches else np.array([])
    if values.size == 0:
        return None
    return float(values.mean())


@dataclass
class IdentificationResult:
    precision: float
    recall: float
    n_gtb: int
    n_db: int
    n_tpn: int


def _identification_pairs(result, scene, threshold):
    """(gt tooth index, predicted tooth index) for detections matched at >= threshold to present teeth."""
    present = scene.present_teeth()
    match = match_boxes(result.boxes(), [a.box for a in present])
    ids = result.ids()
    return [(present[g].tooth.index, ids[d].index) for g, d, value in match.pairs if value >= threshold], len(present)


def identification_metrics(results, scenes, threshold=IDENTIFICATION_IOU, flags=None):
    """Identification precision N_TPN / N_DB and recall N_TPN / N_GTB."""
    if len(results) != len(scenes):
        raise ShapeError("results and scenes must be aligned")
    flags = [] if flags is None else flags
    n_gtb = n_db = n_tpn = 0
    for result, scene in zip(results, scenes):
        pairs, present = _identification_pairs(result, scene, threshold)
        n_gtb += present
        n_db += len(pairs)
        n_tpn += sum(gt == predicted for gt, predicted in pairs)
    return IdentificationResult(
        precision=_ratio(n_tpn, n_db, "identification precision", flags),
        recall=_ratio(n_tpn, n_gtb, "identification recall", flags),
        n_gtb=n_gtb,
        n_db=n_db,
        n_tpn=n_tpn,
    )


def confusion_matrix(results, scenes, threshold=IDENTIFICATION_IOU):
    """
    32x32 counts (rows: ground-truth id, columns: predicted id) over matched
    present teeth, plus the row-normalized copy.
    """
    counts = np.zeros((NUM_TEETH, NUM_TEETH), dtype=np.int64)
    for result, scene in zip(results, scenes):
        pairs, _ = _identification_pairs(result, scene, threshold)
        for gt, predicted in pairs:
            counts[gt - 1, predicted - 1] += 1
    totals = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, totals, out=np.zeros(counts.shape), where=totals > 0)
    return counts, normalized


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    miou: object
    curve: list
    identification: IdentificationResult
    confusion: np.ndarray
    confusion_normalized: np.ndarray
    ap_32: float
    ap50_32: float
    ap75_32: float
    miou_32: object
    num_scenes: int
    detection_universe: str = "all 32 annotated boxes"
    identification_universe: str = "present teeth"
    flags: list = field(default_factory=list)
    fps: object = None

    def summary(self):
        ident = self.identification
        return {
            "num_scenes": self.num_scenes,
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "miou": self.miou,
            "ap_32": self.ap_32,
            "ap50_32": self.ap50_32,
            "ap75_32": self.ap75_32,
            "miou_32": self.miou_32,
            "id_precision": ident.precision,
            "id_recall": ident.recall,
            "n_gtb": ident.n_gtb,
            "n_db": ident.n_db,
            "n_tpn": ident.n_tpn,
            "fps": self.fps,
        }

    def to_dict(self):
        document = self.summary()
        document.update({
            "curve": [{"threshold": t, "precision": p, "recall": r} for t, p, r in self.curve],
            "confusion": self.confusion.tolist(),
            "detection_universe": self.detection_universe,
            "identification_universe": self.identification_universe,
            "flags": list(self.flags),
        })
        return document

    def summary_frame(self):
        return pd.DataFrame([self.summary()])

    def curve_frame(self):
        return pd.DataFrame(self.curve, columns=["threshold", "precision", "recall"])


def evaluate(results, scenes, threshold=IDENTIFICATION_IOU):
    """Full report for aligned DetectionResults and Scenes."""
    if not scenes:
        raise DatasetError("empty split")
    if len(results) != len(scenes):
        raise ShapeError("results and scenes must be aligned")
    flags = []
    agnostic = [match_boxes(r.boxes(), s.boxes()) for r, s in zip(results, scenes)]
    aware = [match_by_identity(r.boxes(), s.boxes()) for r, s in zip(results, scenes)]
    sweep = average_precision(agnostic, flags)
    sweep_32 = average_precision(aware, flags)
    counts, normalized = confusion_matrix(results, scenes, threshold)
    report = EvalReport(
        ap=sweep.ap,
        ap50=sweep.ap50,
        ap75=sweep.ap75,
        miou=mean_iou(agnostic),
        curve=sweep.curve,
        identification=identification_metrics(results, scenes, threshold, flags),
        confusion=counts,
        confusion_normalized=normalized,
        ap_32=sweep_32.ap,
        ap50_32=sweep_32.ap50,
        ap75_32=sweep_32.ap75,
        miou_32=mean_iou(aware),
        num_scenes=len(scenes),
        flags=flags,
    )
    if report.miou is None:
        logger.warning("no matched pairs: mIoU undefined")
    return report


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    try:
        (out_dir / REPORT_JSON).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        report.summary_frame().to_csv(out_dir / REPORT_CSV, index=False)
        report.curve_frame().to_csv(out_dir / CURVE_FILE, index=False)
    except OSError as e:
        raise DatasetIOError(out_dir, e) from e
    logger.info("AP %.3f, AP50 %.3f, AP75 %.3f, mIoU %s, identification P %.3f / R %.3f",
                report.ap, report.ap50, report.ap75,
                "n/a" if report.miou is None else f"{report.miou:.3f}",
                report.identification.precision, report.identification.recall)
