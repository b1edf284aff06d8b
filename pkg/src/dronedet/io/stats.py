"""Label statistics over an annotated dataset."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

from ..augmentation import is_tiny
from ..geometry import ImageSize
from .visdrone import CATEGORY_NAMES, EVAL_CLASSES, IGNORED_REGION, OTHERS, VisDroneRecord


@dataclass
class DatasetStats:
    category_counts: Dict[int, int]
    tiny_count: int
    min_px: float
    ref_long_side: int
    per_image: Dict[str, Dict[int, int]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.category_counts.values())

    @property
    def label_count(self) -> int:
        """Object labels, i.e. everything except ignored regions."""
        return self.total - self.category_counts.get(IGNORED_REGION, 0)

    @property
    def eval_counts(self) -> Dict[int, int]:
        return {c: self.category_counts.get(c, 0) for c in EVAL_CLASSES}

    def to_dict(self) -> dict:
        return {
            "category_counts": {CATEGORY_NAMES[c]: n for c, n in sorted(self.category_counts.items())},
            "total_records": self.total,
            "labels": self.label_count,
            "ignored_regions": self.category_counts.get(IGNORED_REGION, 0),
            "others": self.category_counts.get(OTHERS, 0),
            "tiny_labels": self.tiny_count,
            "tiny_rule": {"min_px": self.min_px, "ref_long_side": self.ref_long_side,
                          "size": "max(width, height)"},
            "per_image": {img: {CATEGORY_NAMES[c]: n for c, n in sorted(h.items())}
                          for img, h in sorted(self.per_image.items())},
        }

    def to_text(self) -> str:
        lines = [f"{'category':<18}{'labels':>10}"]
        for c in sorted(self.category_counts):
            lines.append(f"{CATEGORY_NAMES[c]:<18}{self.category_counts[c]:>10}")
        lines.append(f"{'total':<18}{self.total:>10}")
        lines.append(
            f"tiny labels (max side < {self.min_px:g} px at long side {self.ref_long_side}): "
            f"{self.tiny_count} of {self.label_count}"
        )
        return "\n".join(lines) + "\n"


def dataset_stats(
    annotations: Mapping[str, Tuple[ImageSize, Sequence[VisDroneRecord]]],
    min_px: float = 3,
    ref_long_side: int = 1536,
) -> DatasetStats:
    """Per-category counts and the number of tiny object labels.

    ``annotations`` maps image id to ``(image size, records)``. Ignored
    regions are counted per category but never as tiny labels.
    """
    counts: Counter = Counter({c: 0 for c in CATEGORY_NAMES})
    per_image: Dict[str, Dict[int, int]] = {}
    tiny = 0
    for img in sorted(annotations):
        size, records = annotations[img]
        hist: Counter = Counter()
        for r in records:
            hist[r.category] += 1
            if not r.ignore and is_tiny(r.box, size, min_px, ref_long_side):
                tiny += 1
        counts.update(hist)
        per_image[img] = dict(hist)
    return DatasetStats(dict(counts), tiny, min_px, ref_long_side, per_image)
