"""Box fusion: NMS, Soft-NMS, weighted boxes fusion, ms-testing and ensembling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import BBox, ImageSize, ScoredBox, ViewTransform, clip_boxes, iou, transform_boxes

# ms-testing: enlarge by 1.3, then take 1x / 0.83x / 0.67x of that image
TTA_BASE_SCALE = 1.3
TTA_FACTORS = (1.0, 0.83, 0.67)


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.5
    score_threshold: float = 0.001
    softnms_mode: str = "gaussian"
    softnms_sigma: float = 0.5
    wbf_conf_rescale: bool = False
    class_agnostic: bool = False

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if not 0.0 <= self.score_threshold < 1.0:
            raise ValueError(f"score_threshold must lie in [0, 1), got {self.score_threshold}")
        if self.softnms_mode not in ("linear", "gaussian"):
            raise ValueError(f"unknown soft-nms mode {self.softnms_mode!r}")
        if not self.softnms_sigma > 0:
            raise ValueError(f"softnms_sigma must be positive, got {self.softnms_sigma}")


@dataclass
class ModelPrediction:
    model_id: str
    detections: List[ScoredBox]
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"model weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class TtaPlan:
    views: Tuple[ViewTransform, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.views) != 6:
            raise ValueError(f"a TTA plan holds exactly 6 views, got {len(self.views)}")
        scales = {v.scale for v in self.views}
        if len(scales) != 3:
            raise ValueError("a TTA plan needs 3 distinct scales")
        for s in scales:
            flips = sorted(v.hflip for v in self.views if v.scale == s)
            if flips != [False, True]:
                raise ValueError(f"scale {s} must appear once flipped and once unflipped")

    @property
    def scales(self) -> List[float]:
        return sorted({v.scale for v in self.views}, reverse=True)


def _same_group(a: ScoredBox, b: ScoredBox, cfg: FusionConfig) -> bool:
    return cfg.class_agnostic or a.class_id == b.class_id


def _score_order(dets: Sequence[ScoredBox]) -> List[int]:
    # stable: equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _iou_matrix(dets: Sequence[ScoredBox]) -> np.ndarray:
    b = np.array([d.box.as_tuple() for d in dets], dtype=np.float64).reshape(-1, 4)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(b[:, None, 2], b[None, :, 2]) - np.maximum(b[:, None, 0], b[None, :, 0])
    ih = np.minimum(b[:, None, 3], b[None, :, 3]) - np.maximum(b[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = area[:, None] + area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def nms(dets: Sequence[ScoredBox], cfg: FusionConfig = FusionConfig()) -> List[ScoredBox]:
    """Greedy hard NMS; returns the kept boxes by descending score."""
    if not dets:
        return []
    order = _score_order(dets)
    ious = _iou_matrix(dets)
    cls = np.array([d.class_id for d in dets])
    suppressed = np.zeros(len(dets), dtype=bool)
    kept = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(dets[i])
        hit = ious[i] > cfg.iou_threshold
        if not cfg.class_agnostic:
            hit &= cls == cls[i]
        suppressed |= hit
    return kept


def soft_nms(dets: Sequence[ScoredBox], cfg: FusionConfig = FusionConfig()) -> List[ScoredBox]:
    """Soft-NMS: decay neighbour scores instead of deleting them.

    Linear mode multiplies by ``1 - iou`` when ``iou > iou_threshold``; gaussian
    mode multiplies every same-group neighbour by ``exp(-iou**2 / sigma)``.
    Boxes whose score falls below ``score_threshold`` are dropped.
    """
    if not dets:
        return []
    ious = _iou_matrix(dets)
    scores = [d.score for d in dets]
    remaining = list(range(len(dets)))
    out = []
    while remaining:
        # max score, ties to the smaller index
        best = min(remaining, key=lambda i: (-scores[i], i))
        remaining.remove(best)
        out.append(ScoredBox(dets[best].box, scores[best], dets[best].class_id))
        survivors = []
        for j in remaining:
            if _same_group(dets[best], dets[j], cfg):
                ov = ious[best, j]
                if cfg.softnms_mode == "linear":
                    if ov > cfg.iou_threshold:
                        scores[j] *= 1.0 - ov
                else:
                    scores[j] *= math.exp(-(ov * ov) / cfg.softnms_sigma)
            if scores[j] >= cfg.score_threshold:
                survivors.append(j)
        remaining = survivors
    return out


def _fuse(members: List[Tuple[BBox, float]]) -> BBox:
    total = sum(s for _, s in members)
    if total <= 0:
        # all-zero confidences: fall back to the plain mean
        weights = [1.0] * len(members)
        total = float(len(members))
    else:
        weights = [s for _, s in members]
    coords = [sum(w * getattr(b, k) for (b, _), w in zip(members, weights)) / total
              for k in ("x1", "y1", "x2", "y2")]
    return BBox(*coords)


def wbf(preds: Sequence[ModelPrediction], cfg: FusionConfig = FusionConfig()) -> List[ScoredBox]:
    """Weighted boxes fusion across models.

    Scores are multiplied by the model weight (weights are first divided by
    their maximum so fused confidences stay in [0, 1]). Boxes are visited by
    descending weighted score and join the first cluster of their class whose
    current fused box overlaps them with IoU above the threshold. A cluster's
    box is the confidence-weighted mean of its members and its confidence is
    the mean member confidence, optionally times ``min(T, N) / T``.
    """
    if not preds:
        return []
    wmax = max(p.weight for p in preds)
    pooled = []
    for p in preds:
        w = p.weight / wmax
        for d in p.detections:
            pooled.append(ScoredBox(d.box, d.score * w, d.class_id))
    n_models = len(preds)

    clusters: List[dict] = []
    for i in _score_order(pooled):
        d = pooled[i]
        target = None
        for c in clusters:
            if (cfg.class_agnostic or c["class_id"] == d.class_id) and iou(c["box"], d.box) > cfg.iou_threshold:
                target = c
                break
        if target is None:
            clusters.append({"class_id": d.class_id, "members": [(d.box, d.score)], "box": d.box})
        else:
            target["members"].append((d.box, d.score))
            target["box"] = _fuse(target["members"])

    out = []
    for c in clusters:
        n = len(c["members"])
        conf = sum(s for _, s in c["members"]) / n
        if cfg.wbf_conf_rescale:
            conf *= min(n_models, n) / n_models
        out.append(ScoredBox(c["box"], conf, c["class_id"]))
    order = _score_order(out)
    return [out[i] for i in order]


def tta_views(
    size: ImageSize,
    base_scale: float = TTA_BASE_SCALE,
    factors: Sequence[float] = TTA_FACTORS,
) -> TtaPlan:
    """The six ms-testing views: three scales, each unflipped and flipped.

    Scales are ``base_scale * f`` for each factor, i.e. {1.3, 1.079, 0.871}
    by default. Pass ``base_scale=1.0`` to read the factors as absolute.
    """
    scales = sorted((base_scale * f for f in factors), reverse=True)
    views = tuple(ViewTransform(s, flip, size) for s in scales for flip in (False, True))
    return TtaPlan(views)


def tta_fuse(
    per_view: Sequence[Tuple[ViewTransform, Sequence[ScoredBox]]],
    cfg: FusionConfig = FusionConfig(),
) -> List[ScoredBox]:
    """Map each view's detections back to the source frame, pool, clip and NMS."""
    if not per_view:
        return []
    source = per_view[0][0].source
    pooled: List[ScoredBox] = []
    for view, dets in per_view:
        if view.source != source:
            raise ValueError(
                f"views disagree on source size: {view.source} vs {source}"
            )
        pooled.extend(transform_boxes(dets, view, "inverse"))
    return nms(clip_boxes(pooled, source), cfg)


def ensemble_fuse(models: Sequence[ModelPrediction], cfg: FusionConfig = FusionConfig()) -> List[ScoredBox]:
    """Cross-model ensemble of already ms-tested predictions, via WBF."""
    return wbf(models, cfg)


def class_weights(label_counts: Sequence[int], exponent: float = 0.5) -> List[float]:
    """Per-class loss weights, larger for rarer classes, normalised to mean 1.

    ``w_c = (N_max / N_c) ** exponent``; empty classes get the largest weight.
    """
    if exponent < 0:
        raise ValueError(f"exponent must be >= 0, got {exponent}")
    counts = [int(c) for c in label_counts]
    if any(c < 0 for c in counts):
        raise ValueError("label counts must be non-negative")
    if not counts or max(counts) == 0:
        raise ValueError("at least one class needs a positive label count")
    n_max = max(counts)
    raw = [(n_max / c) ** exponent if c > 0 else None for c in counts]
    top = max(r for r in raw if r is not None)
    raw = [top if r is None else r for r in raw]
    mean = math.fsum(raw) / len(raw)
    return [r / mean for r in raw]
