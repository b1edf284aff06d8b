"""Patch classifier used to relabel detector outputs.

Ground-truth boxes are cropped and resized to 64x64 patches, a small
classifier is trained on them, and its verdict can then replace the class
(and optionally scale the score) of each detection.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .augmentation import Sample
from .geometry import BBox, ImageSize, ScoredBox, clip_box
from .nnblocks import archive
from .raster import resample_region

PATCH_SIZE = 64


@dataclass
class Patch:
    pixels: np.ndarray
    class_id: int

    def __post_init__(self):
        if self.pixels.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {self.pixels.shape}")


@dataclass(frozen=True)
class RescorePolicy:
    replace_label: bool = True
    min_classifier_conf: float = 0.5
    score_combine: str = "keep"

    def __post_init__(self):
        if not 0.0 <= self.min_classifier_conf <= 1.0:
            raise ValueError("min_classifier_conf must lie in [0, 1]")
        if self.score_combine not in ("keep", "multiply"):
            raise ValueError(f"unknown score_combine {self.score_combine!r}")


def crop_resize_patch(image: np.ndarray, box: BBox, size: int = PATCH_SIZE) -> np.ndarray:
    """Bilinear crop of ``box`` (clipped to the image) resized to ``size x size``."""
    h, w = image.shape[:2]
    b = clip_box(box, ImageSize(w, h))
    if b.area <= 0:
        raise ValueError(f"cannot crop a zero-area box {box.as_tuple()}")
    return resample_region(image, b.x1, b.y1, b.x2, b.y2, size, size)


def build_patch_dataset(samples: Sequence[Sample]) -> List[Patch]:
    patches = []
    for s in samples:
        for lab in s.labels:
            if lab.ignore:
                continue
            patches.append(Patch(crop_resize_patch(s.image, lab.box), lab.class_id))
    return patches


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class PatchClassifier:
    """Flattened patch -> hidden ReLU layer -> softmax over ``classes``.

    ``hidden == 0`` gives plain softmax regression (a convex problem).
    """

    classes: np.ndarray
    mean: float
    w1: np.ndarray
    b1: np.ndarray
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None
    train_accuracy: float = float("nan")
    loss_history: List[float] = field(default_factory=list)

    @property
    def hidden(self) -> int:
        return 0 if self.w2 is None else self.w1.shape[1]

    def _features(self, patches) -> np.ndarray:
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        return x.reshape(len(x), -1) / 255.0 - self.mean

    def _logits(self, x):
        z = x @ self.w1 + self.b1
        if self.w2 is None:
            return z, None
        h = np.maximum(z, 0.0)
        return h @ self.w2 + self.b2, (z, h)

    def predict_proba(self, patches) -> np.ndarray:
        logits, _ = self._logits(self._features(patches))
        return _softmax(logits)

    def predict(self, patches) -> np.ndarray:
        return self.classes[self.predict_proba(patches).argmax(axis=1)]

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"classes": self.classes.astype(np.float64), "mean": np.array([self.mean]),
               "w1": self.w1, "b1": self.b1}
        if self.w2 is not None:
            out["w2"], out["b2"] = self.w2, self.b2
        return out

    def save(self, path) -> None:
        archive.save(path, self.arrays())

    @classmethod
    def load(cls, path) -> "PatchClassifier":
        a = archive.load(path)
        return cls(
            classes=a["classes"].astype(np.int64),
            mean=float(a["mean"][0]),
            w1=a["w1"], b1=a["b1"], w2=a.get("w2"), b2=a.get("b2"),
        )


def _cross_entropy(probs, y) -> float:
    return float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))


def train_tiny_classifier(
    patches: Sequence[np.ndarray],
    labels: Sequence[int],
    epochs: int = 200,
    lr: float = 0.1,
    hidden: int = 128,
    seed: int = 0,
) -> PatchClassifier:
    """Full-batch gradient descent on softmax cross-entropy."""
    classes = np.array(sorted(set(int(l) for l in labels)), dtype=np.int64)
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[int(l)] for l in labels])
    x = np.asarray(patches, dtype=np.float64).reshape(len(y), -1) / 255.0
    mean = float(x.mean())
    x = x - mean
    k, d = len(classes), x.shape[1]
    rng = np.random.default_rng(seed)
    if hidden:
        clf = PatchClassifier(classes, mean,
                              rng.normal(0, math.sqrt(2.0 / d), (d, hidden)), np.zeros(hidden),
                              rng.normal(0, math.sqrt(1.0 / hidden), (hidden, k)), np.zeros(k))
    else:
        clf = PatchClassifier(classes, mean, np.zeros((d, k)), np.zeros(k))

    n = len(y)
    onehot = np.eye(k)[y]
    for _ in range(epochs):
        logits, cache = clf._logits(x)
        probs = _softmax(logits)
        clf.loss_history.append(_cross_entropy(probs, y))
        dlogits = (probs - onehot) / n
        if cache is None:
            clf.w1 -= lr * (x.T @ dlogits)
            clf.b1 -= lr * dlogits.sum(axis=0)
        else:
            z, h = cache
            dh = (dlogits @ clf.w2.T) * (z > 0)
            clf.w2 -= lr * (h.T @ dlogits)
            clf.b2 -= lr * dlogits.sum(axis=0)
            clf.w1 -= lr * (x.T @ dh)
            clf.b1 -= lr * dh.sum(axis=0)
    logits, _ = clf._logits(x)
    clf.train_accuracy = float(np.mean(logits.argmax(axis=1) == y))
    return clf


def rescore_detections(
    dets: Sequence[ScoredBox],
    image: np.ndarray,
    clf: PatchClassifier,
    policy: RescorePolicy = RescorePolicy(),
) -> List[ScoredBox]:
    """Classify each detection's patch and apply ``policy``; boxes never move.

    In ``multiply`` mode the score is scaled by the classifier's probability
    for the class the detection ends up with.
    """
    out = []
    h, w = image.shape[:2]
    for d in dets:
        if clip_box(d.box, ImageSize(w, h)).area <= 0:
            out.append(d)
            continue
        probs = clf.predict_proba(crop_resize_patch(image, d.box))[0]
        top = int(probs.argmax())
        class_id = d.class_id
        if policy.replace_label and probs[top] >= policy.min_classifier_conf:
            class_id = int(clf.classes[top])
        score = d.score
        if policy.score_combine == "multiply":
            hit = np.nonzero(clf.classes == class_id)[0]
            p = probs[hit[0]] if len(hit) else probs[top]
            score = d.score * float(p)
        out.append(replace(d, class_id=class_id, score=score))
    return out


def class_histogram(items) -> Counter:
    return Counter(int(i.class_id) for i in items)
