"""Confidence correction for 3D detections, followed by greedy NMS.

Each box's classification confidence is fused with its predicted IoU, then
re-weighted by the mean IoU it shares with same-class neighbours. Boxes
that sit in a dense, tightly agreeing cluster but still score low get a
fixed increment before the final threshold (missed-detection rescue).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from salcloud import jsonl
from salcloud.errors import DataError, MalformedRecord
from salcloud.geom import OrientedBox, iou
from salcloud.pointset import CLASSES, class_id

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    box: OrientedBox
    label: int
    confidence: float
    predicted_iou: float

    def __post_init__(self):
        for name in ("confidence", "predicted_iou"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass
class DetectionFrame:
    frame_id: str
    detections: list = field(default_factory=list)


@dataclass(frozen=True)
class CcmParams:
    score_thres1: float = 0.01
    score_thres2: float = 0.45
    iou_thres: float = 0.1
    delta_c: float = 0.2
    iou_thres_missed: float = 0.9
    neighbor_thres_missed: int = 10
    conf_exp: float = 0.7
    iou_exp: float = 0.3
    iou_mode: str = "3d"
    include_self: bool = True

    def __post_init__(self):
        for name in ("score_thres1", "score_thres2", "iou_thres_missed"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.iou_thres < 0:
            raise ValueError("iou_thres must be >= 0")
        if self.delta_c < 0 or self.neighbor_thres_missed < 0:
            raise ValueError("delta_c and neighbor_thres_missed must be >= 0")
        if self.conf_exp <= 0 or self.iou_exp <= 0 or not math.isclose(self.conf_exp + self.iou_exp, 1.0):
            raise ValueError("fusion exponents must be positive and sum to 1")
        if self.iou_mode not in ("3d", "bev"):
            raise ValueError(f"iou_mode must be '3d' or 'bev', got {self.iou_mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)


def fuse_confidence(c: float, u: float, p: CcmParams | None = None) -> float:
    """``c**conf_exp * u**iou_exp``; zero whenever either input is zero."""
    p = p or CcmParams()
    if c <= 0.0 or u <= 0.0:
        return 0.0
    return math.exp(p.conf_exp * math.log(c) + p.iou_exp * math.log(u))


@dataclass
class BoxAudit:
    index: int
    passed_stage1: bool
    fused: float | None = None
    iou_mean: float | None = None
    n_neighbor: int = 0
    rescued: bool = False
    score: float | None = None
    kept: bool = False


@dataclass
class CorrectedDetections:
    indices: list          # input indices of surviving boxes
    scores: list           # rectified score per survivor
    audit: list            # one BoxAudit per input box


def correct_frame(frame: DetectionFrame, p: CcmParams | None = None) -> CorrectedDetections:
    p = p or CcmParams()
    dets = frame.detections
    audit = [BoxAudit(i, d.confidence > p.score_thres1) for i, d in enumerate(dets)]
    selected = [i for i, d in enumerate(dets) if d.confidence > p.score_thres1]
    fused = {i: fuse_confidence(dets[i].confidence, dets[i].predicted_iou, p) for i in selected}
    for i in selected:
        audit[i].fused = fused[i]

    # Pairwise IoU among survivors of the same class; IoU is symmetric.
    pair_iou = {}
    for a_pos, i in enumerate(selected):
        for j in selected[a_pos:]:
            if dets[i].label != dets[j].label:
                continue
            v = 1.0 if i == j else iou(dets[i].box, dets[j].box, p.iou_mode)
            pair_iou[(i, j)] = pair_iou[(j, i)] = v

    kept, scores = [], []
    for i in selected:
        iou_all, n = 0.0, 0
        for j in selected:
            if j == i and not p.include_self:
                continue
            v = pair_iou.get((i, j))
            if v is not None and v > p.iou_thres:
                iou_all += v
                n += 1
        if n == 0:
            log.debug("frame %s box %d: no neighbours above iou_thres=%s, iou_mean set to 0",
                      frame.frame_id, i, p.iou_thres)
            iou_mean = 0.0
        else:
            iou_mean = iou_all / n
        s = iou_mean * fused[i]
        rescued = iou_mean > p.iou_thres_missed and n > p.neighbor_thres_missed and p.delta_c > 0
        if rescued:
            s += p.delta_c
        a = audit[i]
        a.iou_mean, a.n_neighbor, a.rescued, a.score = iou_mean, n, rescued, s
        if s > p.score_thres2:
            a.kept = True
            kept.append(i)
            scores.append(s)
    return CorrectedDetections(kept, scores, audit)


def nms(boxes, scores, thresh: float, labels=None, mode: str = "3d") -> list:
    """Greedy per-class NMS. Returns kept indices in descending score order;
    equal scores are visited lowest index first."""
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores differ in length")
    if labels is None:
        labels = [0] * len(boxes)
    order = np.argsort(-scores, kind="stable")
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(int(i))
        for j in order[pos + 1:]:
            if not suppressed[j] and labels[j] == labels[i] and iou(boxes[i], boxes[j], mode) > thresh:
                suppressed[j] = True
    return keep


@dataclass
class FrameResult:
    frame_id: str
    detections: list        # (input index, Detection, rectified score), NMS survivors, score-descending
    audit: list             # BoxAudit per input box
    suppressed: list        # input indices removed by NMS


def run_pipeline(frames, p: CcmParams | None = None, nms_iou: float = 0.1):
    """Correct every frame, then NMS. Returns (results, audit log)."""
    p = p or CcmParams()
    results, events = [], []
    for frame in frames:
        corrected = correct_frame(frame, p)
        boxes = [frame.detections[i].box for i in corrected.indices]
        labels = [frame.detections[i].label for i in corrected.indices]
        keep = nms(boxes, corrected.scores, nms_iou, labels, p.iou_mode)
        kept_set = set(keep)
        suppressed = [corrected.indices[k] for k in range(len(corrected.indices)) if k not in kept_set]
        dets = [(corrected.indices[k], frame.detections[corrected.indices[k]], corrected.scores[k]) for k in keep]
        for a in corrected.audit:
            if a.rescued:
                events.append({"frame_id": frame.frame_id, "index": a.index, "event": "rescue",
                               "score": a.score, "kept": a.kept})
            if not a.passed_stage1:
                events.append({"frame_id": frame.frame_id, "index": a.index, "event": "drop_stage1"})
            elif not a.kept:
                events.append({"frame_id": frame.frame_id, "index": a.index, "event": "drop_score",
                               "score": a.score})
        for idx in sorted(suppressed):
            events.append({"frame_id": frame.frame_id, "index": idx, "event": "nms_suppress"})
        results.append(FrameResult(frame.frame_id, dets, corrected.audit, sorted(suppressed)))
    return results, events


def detection_to_record(frame_id: str, det: Detection) -> dict:
    return {
        "frame_id": frame_id,
        "class": CLASSES[det.label],
        "box": [float(v) for v in det.box.as_array()],
        "confidence": det.confidence,
        "predicted_iou": det.predicted_iou,
    }


def record_to_detection(rec: dict, line_no: int | None = None):
    try:
        frame_id = str(rec["frame_id"])
        box = OrientedBox.from_array(rec["box"])
        det = Detection(box, class_id(rec["class"]), float(rec["confidence"]), float(rec["predicted_iou"]))
    except (KeyError, TypeError, ValueError, DataError) as exc:
        raise MalformedRecord(f"bad detection record: {exc!r}", line_no) from None
    return frame_id, det


def read_detections(path) -> list:
    """Detection dump -> frames in first-appearance order."""
    frames = {}
    for line_no, rec in jsonl.read(path):
        frame_id, det = record_to_detection(rec, line_no)
        frames.setdefault(frame_id, DetectionFrame(frame_id)).detections.append(det)
    return list(frames.values())


def write_detections(path, frames, meta: dict | None = None) -> None:
    records = [detection_to_record(f.frame_id, d) for f in frames for d in f.detections]
    jsonl.write(path, records, meta)


def result_records(results) -> list:
    out = []
    for r in results:
        audit = {a.index: a for a in r.audit}
        for idx, det, score in r.detections:
            rec = detection_to_record(r.frame_id, det)
            a = audit[idx]
            rec.update({
                "index": idx,
                "rectified_score": score,
                "audit": {"fused": a.fused, "iou_mean": a.iou_mean,
                          "n_neighbor": a.n_neighbor, "rescued": a.rescued},
            })
            out.append(rec)
    return out
