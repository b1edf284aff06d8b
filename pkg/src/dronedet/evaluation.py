"""COCO-style detection evaluation and the detection confusion matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .geometry import BBox, ScoredBox, iou

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAX_DETS = 500

TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class GroundTruthBox:
    box: BBox
    class_id: int
    ignore: bool = False


@dataclass
class MatchResult:
    """Per-detection outcome at one IoU threshold, in descending-score order.

    ``flags`` holds ``TP``, ``FP`` or ``IGNORED``; ``matched_gt`` the index into
    the ground-truth list (or None); ``num_gt`` the non-ignored GT count.
    """

    scores: List[float]
    flags: List[int]
    matched_gt: List[Optional[int]]
    num_gt: int

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(
            self.scores + other.scores,
            self.flags + other.flags,
            self.matched_gt + other.matched_gt,
            self.num_gt + other.num_gt,
        )


@dataclass
class EvalReport:
    thresholds: List[float]
    # class_id -> AP per threshold; only classes with ground truth appear
    ap: Dict[int, List[float]]
    num_gt: Dict[int, int]
    num_dets: Dict[int, int]

    @property
    def classes(self) -> List[int]:
        return sorted(self.ap)

    def ap_at(self, class_id: int, thr: float) -> float:
        return self.ap[class_id][self._thr_index(thr)]

    def ap50_of(self, class_id: int) -> float:
        return self.ap_at(class_id, 0.5)

    def map_of(self, class_id: int) -> float:
        return math.fsum(self.ap[class_id]) / len(self.ap[class_id])

    @property
    def ap50(self) -> float:
        if not self.ap:
            return float("nan")
        return math.fsum(self.ap50_of(c) for c in self.classes) / len(self.ap)

    @property
    def map(self) -> float:
        if not self.ap:
            return float("nan")
        vals = [v for c in self.classes for v in self.ap[c]]
        return math.fsum(vals) / len(vals)

    def _thr_index(self, thr: float) -> int:
        for i, t in enumerate(self.thresholds):
            if abs(t - thr) < 1e-9:
                return i
        raise KeyError(f"IoU threshold {thr} was not evaluated")

    def to_dict(self, names: Optional[Mapping[int, str]] = None) -> dict:
        per_class = {}
        for c in self.classes:
            key = names.get(c, str(c)) if names else str(c)
            per_class[key] = {
                "class_id": c,
                "ap": self.map_of(c),
                "ap50": self.ap50_of(c) if 0.5 in self.thresholds else None,
                "ap_per_threshold": list(self.ap[c]),
                "num_gt": self.num_gt.get(c, 0),
                "num_dets": self.num_dets.get(c, 0),
            }
        return {
            "thresholds": list(self.thresholds),
            "map": self.map,
            "ap50": self.ap50 if 0.5 in self.thresholds else None,
            "per_class": per_class,
        }


@dataclass
class ConfusionMatrix:
    """``counts[pred, true]``; index ``num_classes`` is background.

    The background row collects missed ground truth, the background column
    collects unmatched detections.
    """

    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            k = self.num_classes + 1
            self.counts = np.zeros((k, k), dtype=np.int64)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("confusion matrices have different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def background(self) -> int:
        return self.num_classes

    def to_csv(self, names: Optional[Sequence[str]] = None) -> str:
        labels = list(names) if names else [str(i) for i in range(self.num_classes)]
        labels = labels + ["background"]
        lines = ["pred\\true," + ",".join(labels)]
        for i, row in enumerate(self.counts):
            lines.append(labels[i] + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def _sorted_dets(dets: Sequence[ScoredBox]) -> List[ScoredBox]:
    return sorted(dets, key=lambda d: -d.score)


def match_detections(
    dets: Sequence[ScoredBox], gts: Sequence[GroundTruthBox], iou_thr: float
) -> MatchResult:
    """Greedy matching of detections to ground truth within one image.

    Detections are visited by descending score; each takes the unmatched
    non-ignored GT of its class with the highest IoU (at least ``iou_thr``).
    A detection that only reaches an ignored region (of any class) is
    flagged ``IGNORED`` and counts as neither TP nor FP.
    """
    dets = _sorted_dets(dets)
    taken = [False] * len(gts)
    flags, matched = [], []
    for d in dets:
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if g.ignore or taken[j] or g.class_id != d.class_id:
                continue
            ov = iou(d.box, g.box)
            if ov >= iou_thr and ov > best_iou:
                best, best_iou = j, ov
        if best is not None:
            taken[best] = True
            flags.append(TP)
            matched.append(best)
            continue
        hit_ignore = None
        for j, g in enumerate(gts):
            if g.ignore and iou(d.box, g.box) >= iou_thr:
                hit_ignore = j
                break
        flags.append(IGNORED if hit_ignore is not None else FP)
        matched.append(hit_ignore)
    num_gt = sum(1 for g in gts if not g.ignore)
    return MatchResult([d.score for d in dets], flags, matched, num_gt)


def average_precision(matches: MatchResult) -> Optional[float]:
    """101-point interpolated AP; ``None`` when there is no ground truth."""
    if matches.num_gt == 0:
        return None
    keep = [i for i, f in enumerate(matches.flags) if f != IGNORED]
    if not keep:
        return 0.0
    scores = np.array([matches.scores[i] for i in keep])
    is_tp = np.array([matches.flags[i] == TP for i in keep], dtype=np.float64)
    order = np.argsort(-scores, kind="mergesort")
    is_tp = is_tp[order]
    tp = np.cumsum(is_tp)
    fp = np.cumsum(1.0 - is_tp)
    recall = tp / matches.num_gt
    precision = tp / (tp + fp)
    # precision envelope: best precision at any equal-or-higher recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return math.fsum(sampled.tolist()) / len(RECALL_GRID)


def evaluate(
    dets_by_image: Mapping[str, Sequence[ScoredBox]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    thresholds: Sequence[float] = IOU_THRESHOLDS,
    max_dets: Optional[int] = MAX_DETS,
) -> EvalReport:
    """Per-class AP at each IoU threshold over a set of images.

    Ignored ground truth applies to every class. Classes without any
    non-ignored ground truth are left out of the report.
    """
    image_ids = sorted(set(dets_by_image) | set(gts_by_image))
    if not image_ids:
        raise ValueError("empty evaluation set")
    thresholds = [float(t) for t in thresholds]

    gt_classes = sorted({g.class_id for gs in gts_by_image.values() for g in gs if not g.ignore})
    per_image = {}
    for img in image_ids:
        dets = _sorted_dets(dets_by_image.get(img, []))
        if max_dets is not None:
            dets = dets[:max_dets]
        per_image[img] = (dets, list(gts_by_image.get(img, [])))

    ap: Dict[int, List[float]] = {}
    num_gt: Dict[int, int] = {}
    num_dets: Dict[int, int] = {}
    for c in gt_classes:
        ap[c] = []
        for thr in thresholds:
            total = MatchResult([], [], [], 0)
            for img in image_ids:
                dets, gts = per_image[img]
                cdets = [d for d in dets if d.class_id == c]
                cgts = [g for g in gts if g.ignore or g.class_id == c]
                total = total + match_detections(cdets, cgts, thr)
            ap[c].append(average_precision(total))
        num_gt[c] = total.num_gt
        num_dets[c] = len(total.scores)
    return EvalReport(thresholds, ap, num_gt, num_dets)


def confusion_matrix(
    dets: Sequence[ScoredBox],
    gts: Sequence[GroundTruthBox],
    num_classes: int,
    iou_thr: float = 0.45,
    conf_thr: float = 0.25,
) -> ConfusionMatrix:
    """Class-agnostic greedy matching of one image's detections to its ground truth.

    Detections under ``conf_thr`` are dropped. A detection reaching only an
    ignored region is not counted.
    """
    cm = ConfusionMatrix(num_classes)
    bg = cm.background
    dets = [d for d in _sorted_dets(dets) if d.score >= conf_thr]
    taken = [False] * len(gts)
    for d in dets:
        best, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if g.ignore or taken[j]:
                continue
            ov = iou(d.box, g.box)
            if ov >= iou_thr and ov > best_iou:
                best, best_iou = j, ov
        if best is not None:
            taken[best] = True
            cm.counts[d.class_id, gts[best].class_id] += 1
        elif not any(g.ignore and iou(d.box, g.box) >= iou_thr for g in gts):
            cm.counts[d.class_id, bg] += 1
    for j, g in enumerate(gts):
        if not g.ignore and not taken[j]:
            cm.counts[bg, g.class_id] += 1
    return cm


def confusion_matrix_dataset(
    dets_by_image: Mapping[str, Sequence[ScoredBox]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    num_classes: int,
    iou_thr: float = 0.45,
    conf_thr: float = 0.25,
) -> ConfusionMatrix:
    total = ConfusionMatrix(num_classes)
    for img in sorted(set(dets_by_image) | set(gts_by_image)):
        total = total + confusion_matrix(
            dets_by_image.get(img, []), gts_by_image.get(img, []), num_classes, iou_thr, conf_thr
        )
    return total
