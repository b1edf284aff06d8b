"""Anchor-based detection heads and their box decoding.

Decoding follows the YOLOv5 convention: centre offsets ``2*sigmoid(t) - 0.5``
cells, sizes ``(2*sigmoid(t))**2`` anchors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..geometry import BBox, ScoredBox
from .cbam import sigmoid


@dataclass(frozen=True)
class HeadSpec:
    stride: int
    anchors: Tuple[Tuple[float, float], ...]
    num_classes: int

    def __post_init__(self):
        if self.stride not in (4, 8, 16, 32):
            raise ValueError(f"unsupported stride {self.stride}")
        if not self.anchors or any(w <= 0 or h <= 0 for w, h in self.anchors):
            raise ValueError("anchors must be positive (w, h) pairs")
        if self.num_classes < 1:
            raise ValueError("a head needs at least one class")

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)


# Anchor sizes are the usual YOLOv5 P3-P5 priors plus a small set for the
# stride-4 head; they are defaults, not fitted values.
DEFAULT_ANCHORS = {
    4: ((5, 6), (8, 14), (15, 11)),
    8: ((10, 13), (16, 30), (33, 23)),
    16: ((30, 61), (62, 45), (59, 119)),
    32: ((116, 90), (156, 198), (373, 326)),
}


def default_heads(num_classes: int = 10) -> List[HeadSpec]:
    """Four heads, strides 4/8/16/32; the stride-4 one targets tiny objects."""
    return [HeadSpec(s, DEFAULT_ANCHORS[s], num_classes) for s in (4, 8, 16, 32)]


def _check(raw, spec: HeadSpec) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 4 or raw.shape[0] != spec.num_anchors or raw.shape[3] != 5 + spec.num_classes:
        raise ValueError(
            f"raw head output must be [{spec.num_anchors}, H, W, {5 + spec.num_classes}], "
            f"got {raw.shape}"
        )
    return raw


def decode_dense(raw, spec: HeadSpec) -> np.ndarray:
    """Decode every cell/anchor to ``[cx, cy, w, h, obj, cls_1..cls_K]``."""
    return decode_dense_cached(raw, spec)[0]


def decode_dense_cached(raw, spec: HeadSpec):
    raw = _check(raw, spec)
    a, h, w, _ = raw.shape
    s = sigmoid(raw)
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    anchors = np.asarray(spec.anchors, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = (2.0 * s[..., 0] - 0.5 + gx) * spec.stride
    out[..., 1] = (2.0 * s[..., 1] - 0.5 + gy) * spec.stride
    out[..., 2] = (2.0 * s[..., 2]) ** 2 * anchors[:, 0, None, None]
    out[..., 3] = (2.0 * s[..., 3]) ** 2 * anchors[:, 1, None, None]
    out[..., 4:] = s[..., 4:]
    return out, (s, anchors, spec.stride)


def decode_dense_backward(dout, cache) -> np.ndarray:
    s, anchors, stride = cache
    ds = s * (1.0 - s)
    draw = np.empty_like(dout)
    draw[..., 0] = dout[..., 0] * 2.0 * stride * ds[..., 0]
    draw[..., 1] = dout[..., 1] * 2.0 * stride * ds[..., 1]
    draw[..., 2] = dout[..., 2] * 8.0 * s[..., 2] * anchors[:, 0, None, None] * ds[..., 2]
    draw[..., 3] = dout[..., 3] * 8.0 * s[..., 3] * anchors[:, 1, None, None] * ds[..., 3]
    draw[..., 4:] = dout[..., 4:] * ds[..., 4:]
    return draw


def yolo_head_decode(raw, spec: HeadSpec, conf_thr: float = 0.25) -> List[ScoredBox]:
    """Boxes whose ``sigmoid(obj) * sigmoid(best class)`` reaches ``conf_thr``."""
    dense = decode_dense(raw, spec)
    cls = dense[..., 5:]
    best = cls.argmax(axis=-1)
    score = dense[..., 4] * np.take_along_axis(cls, best[..., None], axis=-1)[..., 0]
    out = []
    for idx in zip(*np.nonzero(score >= conf_thr)):
        cx, cy, w, h = dense[idx][:4]
        out.append(ScoredBox(
            BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            float(min(score[idx], 1.0)),
            int(best[idx]),
        ))
    return out


def decode_heads(raws: Sequence[np.ndarray], specs: Sequence[HeadSpec],
                 conf_thr: float = 0.25) -> List[ScoredBox]:
    out: List[ScoredBox] = []
    for raw, spec in zip(raws, specs):
        out.extend(yolo_head_decode(raw, spec, conf_thr))
    return out
