"""Box types, IoU and the coordinate algebra between images and TTA views.

Boxes are kept in corner form ``(x1, y1, x2, y2)`` with continuous pixel
coordinates; no rounding happens here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Sequence


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        # swapped corners are fixed up rather than rejected so parsing stays total
        if self.x1 > self.x2:
            x1, x2 = self.x2, self.x1
            object.__setattr__(self, "x1", x1)
            object.__setattr__(self, "x2", x2)
        if self.y1 > self.y2:
            y1, y2 = self.y2, self.y1
            object.__setattr__(self, "y1", y1)
            object.__setattr__(self, "y2", y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_xywh(cls, left: float, top: float, width: float, height: float) -> "BBox":
        return cls(left, top, left + width, top + height)

    def to_xywh(self) -> tuple:
        return (self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1)


@dataclass(frozen=True)
class ScoredBox:
    box: BBox
    score: float
    class_id: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")

    def with_box(self, box: BBox) -> "ScoredBox":
        return replace(self, box=box)


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class ViewTransform:
    """Scale (then optional horizontal mirror) from a source image into a view."""

    scale: float
    hflip: bool
    source: ImageSize

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"view scale must be positive, got {self.scale}")

    @property
    def view_width(self) -> float:
        return self.source.width * self.scale

    @property
    def view_height(self) -> float:
        return self.source.height * self.scale

    def forward_box(self, b: BBox) -> BBox:
        s = self.scale
        x1, y1, x2, y2 = b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s
        if self.hflip:
            w = self.view_width
            x1, x2 = w - x2, w - x1
        return BBox(x1, y1, x2, y2)

    def inverse_box(self, b: BBox) -> BBox:
        x1, y1, x2, y2 = b.x1, b.y1, b.x2, b.y2
        if self.hflip:
            w = self.view_width
            x1, x2 = w - x2, w - x1
        s = self.scale
        return BBox(x1 / s, y1 / s, x2 / s, y2 / s)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def transform_boxes(
    boxes: Iterable[ScoredBox], view: ViewTransform, direction: str = "forward"
) -> List[ScoredBox]:
    """Map boxes between the source frame and ``view``'s frame.

    Args:
        boxes: boxes in the source frame (``forward``) or the view frame (``inverse``).
        view: the view transform.
        direction: ``"forward"`` or ``"inverse"``.
    """
    if direction == "forward":
        fn = view.forward_box
    elif direction == "inverse":
        fn = view.inverse_box
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return [d.with_box(fn(d.box)) for d in boxes]


def clip_box(b: BBox, size: ImageSize) -> BBox:
    w, h = size.width, size.height
    return BBox(
        min(max(b.x1, 0.0), w),
        min(max(b.y1, 0.0), h),
        min(max(b.x2, 0.0), w),
        min(max(b.y2, 0.0), h),
    )


def clip_boxes(boxes: Sequence[ScoredBox], size: ImageSize) -> List[ScoredBox]:
    """Clamp boxes into the image and drop those left with zero area."""
    out = []
    for d in boxes:
        c = clip_box(d.box, size)
        if c.area > 0:
            out.append(d.with_box(c))
    return out
