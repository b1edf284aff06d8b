"""Training-time augmentation with label bookkeeping.

Mosaic, MixUp, HSV jitter, random affine, and gray masking of labels too
small to learn from. Every random choice goes through an explicit
``numpy.random.Generator`` so a seed reproduces the output bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import BBox, ImageSize
from .raster import GRAY, hsv_to_rgb, resize_bilinear, rgb_to_hsv, warp_affine_nearest


@dataclass(frozen=True)
class Label:
    class_id: int
    box: BBox
    weight: float = 1.0
    ignore: bool = False


@dataclass
class Sample:
    image: np.ndarray
    labels: List[Label] = field(default_factory=list)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"sample image must be H x W x 3, got shape {self.image.shape}")

    @property
    def size(self) -> ImageSize:
        return ImageSize(self.image.shape[1], self.image.shape[0])


@dataclass(frozen=True)
class AugmentConfig:
    mosaic_output: ImageSize = ImageSize(640, 640)
    mosaic_center_jitter: float = 0.25
    mixup_beta: float = 32.0
    hsv_gains: Tuple[float, float, float] = (0.015, 0.7, 0.4)
    degrees: float = 0.0
    translate: float = 0.1
    scale: Tuple[float, float] = (0.5, 1.5)
    shear: float = 0.0
    min_box_survival: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.mosaic_center_jitter < 0.5:
            raise ValueError("mosaic_center_jitter must lie in [0, 0.5)")
        if not self.mixup_beta > 0:
            raise ValueError("mixup_beta must be positive")
        if not 0.0 < self.min_box_survival <= 1.0:
            raise ValueError("min_box_survival must lie in (0, 1]")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ValueError(f"bad scale range {self.scale}")
        if self.degrees < 0 or self.shear < 0 or self.translate < 0:
            raise ValueError("affine ranges must be non-negative")


def _keep_box(full: BBox, clipped: BBox, min_survival: float) -> bool:
    if clipped.area <= 0:
        return False
    if full.area <= 0:
        return False
    return clipped.area / full.area >= min_survival


def _clip_to(b: BBox, x0: float, y0: float, x1: float, y1: float) -> BBox:
    return BBox(
        min(max(b.x1, x0), x1),
        min(max(b.y1, y0), y1),
        min(max(b.x2, x0), x1),
        min(max(b.y2, y0), y1),
    )


def mosaic(samples: Sequence[Sample], cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Stitch four samples around a random centre.

    Each input is resized to fit a half-canvas and laid against the centre
    point (top-left, top-right, bottom-left, bottom-right), then cropped to
    the canvas. Uncovered canvas is gray 114.
    """
    if len(samples) != 4:
        raise ValueError(f"mosaic needs exactly 4 samples, got {len(samples)}")
    out_w, out_h = cfg.mosaic_output.width, cfg.mosaic_output.height
    u = rng.uniform(-1.0, 1.0, size=2)
    j = cfg.mosaic_center_jitter
    xc = int(round(out_w / 2 + j * out_w * u[0]))
    yc = int(round(out_h / 2 + j * out_h * u[1]))
    xc = min(max(xc, 0), out_w)
    yc = min(max(yc, 0), out_h)

    canvas = np.full((out_h, out_w, 3), GRAY, dtype=np.float64)
    labels: List[Label] = []
    for k, s in enumerate(samples):
        h, w = s.image.shape[:2]
        r = min((out_w / 2) / w, (out_h / 2) / h)
        nw, nh = max(1, int(round(w * r))), max(1, int(round(h * r)))
        img = resize_bilinear(s.image, nw, nh)
        x0 = xc - nw if k in (0, 2) else xc
        y0 = yc - nh if k in (0, 1) else yc
        # intersection of the placed image with the canvas
        cx0, cy0 = max(x0, 0), max(y0, 0)
        cx1, cy1 = min(x0 + nw, out_w), min(y0 + nh, out_h)
        if cx1 <= cx0 or cy1 <= cy0:
            continue
        canvas[cy0:cy1, cx0:cx1] = img[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
        sx, sy = nw / w, nh / h
        for lab in s.labels:
            b = lab.box
            full = BBox(b.x1 * sx + x0, b.y1 * sy + y0, b.x2 * sx + x0, b.y2 * sy + y0)
            clipped = _clip_to(full, cx0, cy0, cx1, cy1)
            if _keep_box(full, clipped, cfg.min_box_survival):
                labels.append(replace(lab, box=clipped))
    return Sample(canvas, labels)


def sample_mixup_ratio(rng: np.random.Generator, beta: float) -> float:
    return float(rng.beta(beta, beta))


def mixup(a: Sample, b: Sample, lam: float) -> Sample:
    """Blend two samples; both label sets are kept, reweighted by lam / 1 - lam."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup ratio must lie in [0, 1], got {lam}")
    if a.image.shape != b.image.shape:
        raise ValueError(f"mixup needs equal image shapes, got {a.image.shape} and {b.image.shape}")
    image = lam * a.image + (1.0 - lam) * b.image
    labels = [replace(l, weight=l.weight * lam) for l in a.labels]
    labels += [replace(l, weight=l.weight * (1.0 - lam)) for l in b.labels]
    return Sample(image, labels)


def hsv_distort(s: Sample, gains: Sequence[float], rng: np.random.Generator) -> Sample:
    """Random multiplicative hue/saturation/value jitter; labels untouched."""
    u = rng.uniform(-1.0, 1.0, size=3)
    fh, fs, fv = 1.0 + np.asarray(gains, dtype=np.float64) * u
    hsv = rgb_to_hsv(np.clip(s.image, 0.0, 255.0) / 255.0)
    hsv[..., 0] = (hsv[..., 0] * fh) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * fs, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * fv, 0.0, 1.0)
    return Sample(hsv_to_rgb(hsv) * 255.0, list(s.labels))


def affine_matrix(
    width: int,
    height: int,
    degrees: float = 0.0,
    scale: float = 1.0,
    shear_x: float = 0.0,
    shear_y: float = 0.0,
    translate_x: float = 0.0,
    translate_y: float = 0.0,
) -> np.ndarray:
    """3x3 matrix: rotate/scale about the image centre, shear, then translate (pixels)."""
    cx, cy = width / 2.0, height / 2.0
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    a = math.radians(degrees)
    rot = np.array(
        [[scale * math.cos(a), -scale * math.sin(a), 0],
         [scale * math.sin(a), scale * math.cos(a), 0],
         [0, 0, 1]],
        dtype=np.float64,
    )
    sh = np.array(
        [[1, math.tan(math.radians(shear_x)), 0],
         [math.tan(math.radians(shear_y)), 1, 0],
         [0, 0, 1]],
        dtype=np.float64,
    )
    back = np.array([[1, 0, cx + translate_x], [0, 1, cy + translate_y], [0, 0, 1]], dtype=np.float64)
    return back @ sh @ rot @ to_origin


def transform_box_affine(b: BBox, m: np.ndarray) -> BBox:
    """Axis-aligned envelope of the box's four mapped corners."""
    corners = np.array(
        [[b.x1, b.y1, 1], [b.x2, b.y1, 1], [b.x1, b.y2, 1], [b.x2, b.y2, 1]], dtype=np.float64
    )
    p = corners @ np.asarray(m, dtype=np.float64)[:2].T
    return BBox(p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max())


def warp_sample(s: Sample, m: np.ndarray, min_box_survival: float = 0.3) -> Sample:
    h, w = s.image.shape[:2]
    image = warp_affine_nearest(s.image, m, w, h)
    labels = []
    for lab in s.labels:
        full = transform_box_affine(lab.box, m)
        clipped = _clip_to(full, 0.0, 0.0, float(w), float(h))
        if _keep_box(full, clipped, min_box_survival):
            labels.append(replace(lab, box=clipped))
    return Sample(image, labels)


def geometric_distort(s: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Random rotation, scale, shear and translation as one affine warp."""
    h, w = s.image.shape[:2]
    degrees = rng.uniform(-cfg.degrees, cfg.degrees)
    scale = rng.uniform(cfg.scale[0], cfg.scale[1])
    shear_x, shear_y = rng.uniform(-cfg.shear, cfg.shear, size=2)
    tx, ty = rng.uniform(-cfg.translate, cfg.translate, size=2)
    m = affine_matrix(w, h, degrees, scale, shear_x, shear_y, tx * w, ty * h)
    return warp_sample(s, m, cfg.min_box_survival)


def is_tiny(box: BBox, size: ImageSize, min_px: float = 3, ref_long_side: int = 1536) -> bool:
    """True when the box's longer side is under ``min_px`` once the image's
    long side is rescaled to ``ref_long_side``."""
    factor = ref_long_side / max(size.width, size.height)
    return max(box.width, box.height) * factor < min_px


def mask_tiny_labels(s: Sample, min_px: float = 3, ref_long_side: int = 1536) -> Sample:
    """Drop tiny labels and paint their pixels gray 114."""
    size = s.size
    image = s.image.copy()
    kept = []
    for lab in s.labels:
        if lab.ignore or not is_tiny(lab.box, size, min_px, ref_long_side):
            kept.append(lab)
            continue
        b = lab.box
        c0 = max(int(math.floor(b.x1)), 0)
        r0 = max(int(math.floor(b.y1)), 0)
        c1 = min(int(math.ceil(b.x2)), size.width)
        r1 = min(int(math.ceil(b.y2)), size.height)
        image[r0:r1, c0:c1] = GRAY
    return Sample(image, kept)
