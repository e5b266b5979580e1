"""Greedy detection matching, precision-recall curves and interpolated AP.

AP is reported in percent. The 11-point grid is {0, 0.1, ..., 1}; the
40-point grid is {1/40, ..., 1} (recall 0 excluded). Difficulty buckets are
cumulative as in KITTI: "Moderate" scores Easy and Moderate ground truth,
and detections matched to harder ground truth are ignored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from salcloud import jsonl
from salcloud.errors import DataError, FrameMismatch, MalformedRecord
from salcloud.geom import OrientedBox, iou
from salcloud.pointset import CLASSES, DIFFICULTIES, class_id

DEFAULT_IOU_THRESHOLDS = {0: 0.7, 1: 0.5, 2: 0.5}
BUCKETS = ("Easy", "Moderate", "Hard", "All")


@dataclass
class MatchConfig:
    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    mode: str = "3d"
    recall_points: tuple = (11, 40)

    def __post_init__(self):
        if self.mode not in ("3d", "bev"):
            raise ValueError(f"mode must be '3d' or 'bev', got {self.mode!r}")
        for c, t in self.iou_thresholds.items():
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold for class {c} must be in (0, 1], got {t}")
        for n in self.recall_points:
            if n not in (11, 40):
                raise ValueError(f"recall_points must be 11 or 40, got {n}")


@dataclass(frozen=True)
class GtBox:
    box: OrientedBox
    label: int
    difficulty: str = "Moderate"


@dataclass(frozen=True)
class ScoredBox:
    box: OrientedBox
    label: int
    score: float


def match_frame(det_boxes, det_scores, gt_boxes, iou_threshold: float, mode: str = "3d") -> np.ndarray:
    """Greedy matching of one frame and one class.

    Detections are visited by descending score (ties: lower index first);
    each takes the unmatched ground truth of highest IoU (ties: lower index)
    if that IoU reaches ``iou_threshold``. Returns the matched ground-truth
    index per detection, -1 for false positives.
    """
    det_scores = np.asarray(det_scores, dtype=np.float64)
    matched = np.full(len(det_boxes), -1, dtype=np.int64)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return matched
    overlaps = np.array([[iou(d, g, mode) for g in gt_boxes] for d in det_boxes])
    taken = np.zeros(len(gt_boxes), dtype=bool)
    for i in np.argsort(-det_scores, kind="stable"):
        cand = np.where(taken, -1.0, overlaps[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            matched[i] = j
            taken[j] = True
    return matched


@dataclass
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    scores: np.ndarray
    tp: int
    fp: int
    n_gt: int

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def pr_curve(scores, is_tp, n_gt: int) -> PrCurve:
    """Sweep detections by descending score (stable for ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp_c = np.cumsum(is_tp[order])
    fp_c = np.cumsum(~is_tp[order])
    n = np.arange(1, len(order) + 1)
    recall = tp_c / n_gt if n_gt > 0 else np.zeros(len(order))
    precision = tp_c / n if len(order) else np.zeros(0)
    return PrCurve(recall.astype(np.float64), precision.astype(np.float64), scores[order],
                   int(tp_c[-1]) if len(order) else 0, int(fp_c[-1]) if len(order) else 0, n_gt)


def recall_grid(recall_points: int) -> np.ndarray:
    if recall_points == 11:
        return np.arange(11) / 10
    if recall_points == 40:
        return np.arange(1, 41) / 40
    raise ValueError(f"recall_points must be 11 or 40, got {recall_points}")


def average_precision(curve: PrCurve, recall_points: int = 40):
    """Interpolated AP in percent, or None when there is no ground truth."""
    if curve.n_gt == 0:
        return None
    grid = recall_grid(recall_points)
    if len(curve.recall) == 0:
        return 0.0
    # Max precision at recall >= r, via a running max from the end.
    interp = np.maximum.accumulate(curve.precision[::-1])[::-1]
    total = 0.0
    for r in grid:
        idx = np.searchsorted(curve.recall, r - 1e-12, side="left")
        if idx < len(curve.recall):
            total += float(interp[idx])
    return 100.0 * total / len(grid)


def _bucket_care(difficulty: str, bucket: str) -> bool:
    if bucket == "All":
        return True
    if difficulty not in DIFFICULTIES:
        return False
    return DIFFICULTIES.index(difficulty) <= DIFFICULTIES.index(bucket)


def class_curve(det_frames: dict, gt_frames: dict, label: int, bucket: str, cfg: MatchConfig) -> PrCurve:
    """PR curve for one class and difficulty bucket over all frames."""
    thresh = cfg.iou_thresholds[label]
    scores, flags, n_gt = [], [], 0
    for frame_id in gt_frames:
        gts = [g for g in gt_frames[frame_id] if g.label == label]
        dets = [d for d in det_frames.get(frame_id, []) if d.label == label]
        care = np.array([_bucket_care(g.difficulty, bucket) for g in gts], dtype=bool)
        n_gt += int(care.sum())
        matched = match_frame([d.box for d in dets], [d.score for d in dets], [g.box for g in gts],
                              thresh, cfg.mode)
        for d, m in zip(dets, matched):
            if m >= 0 and not care[m]:
                continue
            scores.append(d.score)
            flags.append(m >= 0)
    return pr_curve(scores, flags, n_gt)


@dataclass
class ApRow:
    label: int
    bucket: str
    mode: str
    ap: dict            # recall_points -> percent or None
    n_gt: int
    n_det: int
    curve: PrCurve


def evaluate_frames(det_frames: dict, gt_frames: dict, cfg: MatchConfig | None = None,
                    buckets=BUCKETS) -> list:
    """AP rows for every class and bucket. Detection frame ids must all
    appear among the ground-truth frames."""
    cfg = cfg or MatchConfig()
    unknown = sorted(set(det_frames) - set(gt_frames))
    if unknown:
        raise FrameMismatch(f"detections reference frames without ground truth: {unknown[:5]}")
    rows = []
    for label in range(len(CLASSES)):
        if label not in cfg.iou_thresholds:
            continue
        for bucket in buckets:
            curve = class_curve(det_frames, gt_frames, label, bucket, cfg)
            ap = {n: average_precision(curve, n) for n in cfg.recall_points}
            rows.append(ApRow(label, bucket, cfg.mode, ap, curve.n_gt, len(curve.scores), curve))
    return rows


def _fmt(v) -> str:
    return "" if v is None else repr(round(float(v), 6))


def write_ap_csv(path, rows, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "difficulty", "mode", "AP_R11", "AP_R40", "n_gt", "n_det", "tp", "fp"])
        for r in rows:
            w.writerow([CLASSES[r.label], r.bucket, r.mode, _fmt(r.ap.get(11)), _fmt(r.ap.get(40)),
                        r.n_gt, r.n_det, r.curve.tp, r.curve.fp])


def write_pr_csv(path, rows, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "difficulty", "mode", "rank", "score", "recall", "precision"])
        for r in rows:
            c = r.curve
            for k in range(len(c.scores)):
                w.writerow([CLASSES[r.label], r.bucket, r.mode, k + 1, _fmt(c.scores[k]),
                            _fmt(c.recall[k]), _fmt(c.precision[k])])


def gt_to_record(frame_id: str, g: GtBox) -> dict:
    return {"frame_id": frame_id, "class": CLASSES[g.label],
            "box": [float(v) for v in g.box.as_array()], "difficulty": g.difficulty}


def read_gt(path) -> dict:
    """Ground-truth dump: one record per object (frame_id, class, box,
    difficulty). A record with ``"class": null`` declares an empty frame."""
    frames = {}
    for line_no, rec in jsonl.read(path):
        try:
            frame_id = str(rec["frame_id"])
            lst = frames.setdefault(frame_id, [])
            if rec.get("class") is None:
                continue
            lst.append(GtBox(OrientedBox.from_array(rec["box"]), class_id(rec["class"]),
                             str(rec.get("difficulty", "Moderate"))))
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise MalformedRecord(f"bad ground-truth record: {exc!r}", line_no) from None
    return frames


def write_gt(path, frames: dict, meta: dict | None = None) -> None:
    records = []
    for frame_id, gts in frames.items():
        if not gts:
            records.append({"frame_id": frame_id, "class": None})
        records.extend(gt_to_record(frame_id, g) for g in gts)
    jsonl.write(path, records, meta)


def read_scored_detections(path) -> dict:
    """Detections for evaluation. The score is ``rectified_score`` when the
    record has one (post-correction dumps), else ``confidence``."""
    frames = {}
    for line_no, rec in jsonl.read(path):
        try:
            frame_id = str(rec["frame_id"])
            score = rec.get("rectified_score", rec.get("confidence"))
            det = ScoredBox(OrientedBox.from_array(rec["box"]), class_id(rec["class"]), float(score))
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise MalformedRecord(f"bad detection record: {exc!r}", line_no) from None
        frames.setdefault(frame_id, []).append(det)
    return frames
