"""Box geometry, COCO-style average precision, and the video-wise split.

Single-class evaluation: detections are scored drone boxes per frame.
AP uses all-point interpolation (area under the monotonized PR curve) at
IoU thresholds 0.50..0.95 in 0.05 steps. Frames without ground truth still
contribute false positives; the dataset deliberately keeps empty frames.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


class EvaluationError(ValueError):
    pass


class UndefinedAPError(EvaluationError):
    """AP is undefined with no ground-truth boxes (distinct from AP=0)."""


def _corners(box) -> Tuple[float, float, float, float]:
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise EvaluationError("boxes must have positive width and height")
    return x, y, x + w, y + h


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes; symmetric, in [0, 1]."""
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def giou(a, b) -> float:
    """Generalized IoU: IoU minus the normalized slack of the enclosing box.

    Range (-1, 1]; equals IoU when the union fills its enclosing box.
    """
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    cw = max(ax1, bx1) - min(ax0, bx0)
    ch = max(ay1, by1) - min(ay0, by0)
    enclosing = cw * ch
    return inter / union - (enclosing - union) / enclosing


@dataclass(frozen=True)
class Detection:
    """One scored detection; `frame` is any hashable frame key."""

    frame: object
    score: float
    box: tuple  # (x, y, w, h)


def _match_detections(
    dets: Sequence[Detection],
    gts: Dict[object, Sequence[tuple]],
    iou_thr: float,
):
    """Label each detection TP/FP by greedy highest-IoU matching.

    Detections are visited in descending score (stable for ties); each can
    claim at most one unmatched ground-truth box in its frame with
    IoU >= iou_thr, preferring the highest IoU then the lowest GT index.
    Returns (tp_flags in visit order, n_gt).
    """
    n_gt = sum(len(v) for v in gts.values())
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = {k: [False] * len(v) for k, v in gts.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        det = dets[i]
        cands = gts.get(det.frame, ())
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(cands):
            if taken[det.frame][j]:
                continue
            v = iou(det.box, g)
            if v >= iou_thr and v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            taken[det.frame][best_j] = True
            tp[rank] = True
    return tp, n_gt


def average_precision(
    dets: Sequence[Detection],
    gts: Dict[object, Sequence[tuple]],
    iou_thr: float,
) -> float:
    """All-point-interpolated AP at one IoU threshold.

    AP is the area under the precision-recall curve after making precision
    monotonically non-increasing in recall. Raises UndefinedAPError when no
    ground truth exists anywhere.
    """
    for d in dets:
        if not np.isfinite(d.score):
            raise EvaluationError("detection scores must be finite")
    tp, n_gt = _match_detections(dets, gts, iou_thr)
    if n_gt == 0:
        raise UndefinedAPError("no ground-truth boxes; AP is undefined")
    if len(dets) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # Monotone envelope from the right, then sum recall increments.
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


@dataclass(frozen=True)
class EvalReport:
    ap50: float
    ap75: float
    ap50_95: float
    per_threshold: dict  # iou threshold -> AP
    counts: dict  # iou threshold -> (tp, fp, fn) over the full detection list

    def to_json(self) -> dict:
        return {
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AP50:95": self.ap50_95,
            "per_threshold": {f"{k:.2f}": v for k, v in self.per_threshold.items()},
            "counts": {f"{k:.2f}": list(v) for k, v in self.counts.items()},
        }


def coco_map(dets: Sequence[Detection], gts: Dict[object, Sequence[tuple]]) -> EvalReport:
    """AP at the ten 0.50..0.95 thresholds plus their mean (AP50:95)."""
    per = {}
    counts = {}
    for thr in IOU_THRESHOLDS:
        per[thr] = average_precision(dets, gts, thr)
        tp, n_gt = _match_detections(dets, gts, thr)
        n_tp = int(tp.sum())
        counts[thr] = (n_tp, len(dets) - n_tp, n_gt - n_tp)
    return EvalReport(
        ap50=per[0.5],
        ap75=per[0.75],
        ap50_95=float(np.mean(list(per.values()))),
        per_threshold=per,
        counts=counts,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Video-wise train/test partition; videos never straddle the splits."""

    seed: int
    ratio: float
    train: tuple
    test: tuple

    def to_json(self) -> dict:
        return {"seed": self.seed, "ratio": self.ratio,
                "train": list(self.train), "test": list(self.test)}

    @staticmethod
    def from_json(obj: dict) -> "SplitSpec":
        return SplitSpec(int(obj["seed"]), float(obj["ratio"]),
                         tuple(obj["train"]), tuple(obj["test"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @staticmethod
    def load(path) -> "SplitSpec":
        with open(path) as fh:
            return SplitSpec.from_json(json.load(fh))


def video_split(video_ids: Iterable[str], ratio: float = 0.8, seed: int = 0) -> SplitSpec:
    """Deterministic video-wise split: shuffle by seed, cut at round(ratio*n).

    115 videos at ratio 0.8 give the 92/23 train/test partition.
    """
    ids = sorted(video_ids)
    if len(set(ids)) != len(ids):
        raise EvaluationError("duplicate video ids")
    if not (0.0 <= ratio <= 1.0):
        raise EvaluationError("ratio must be in [0, 1]")
    rng = random.Random(seed)
    rng.shuffle(ids)
    k = round(ratio * len(ids))
    return SplitSpec(seed, ratio, tuple(ids[:k]), tuple(ids[k:]))
