"""Line-delimited JSON detections.

The first line is a header ``{"schema": "dronedet.detections", "version": 1}``;
each following line holds one detection::

    {"image_id": "0000001_02999_d_0000005", "class_id": 4, "score": 0.91,
     "box": [x1, y1, x2, y2]}

Floats are written with Python's shortest round-trip repr, so reading back
gives the exact same values.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from ..geometry import BBox, ScoredBox

SCHEMA = "dronedet.detections"
VERSION = 1


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_id: int
    score: float
    box: Tuple[float, float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if not all(math.isfinite(v) for v in self.box):
            raise ValueError("box coordinates must be finite")

    def to_scored_box(self) -> ScoredBox:
        return ScoredBox(BBox(*self.box), self.score, self.class_id)

    @classmethod
    def from_scored_box(cls, image_id: str, d: ScoredBox) -> "DetectionRecord":
        return cls(image_id, int(d.class_id), float(d.score), tuple(float(v) for v in d.box.as_tuple()))


class DetectionFormatError(ValueError):
    pass


def write_detections(records: Iterable[DetectionRecord]) -> str:
    lines = [json.dumps({"schema": SCHEMA, "version": VERSION})]
    for r in records:
        lines.append(json.dumps({
            "image_id": r.image_id,
            "class_id": r.class_id,
            "score": r.score,
            "box": list(r.box),
        }))
    return "\n".join(lines) + "\n"


def read_detections(text: str) -> List[DetectionRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DetectionFormatError(f"line {lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise DetectionFormatError(f"line {lineno}: expected a JSON object")
        if "schema" in obj:
            if obj.get("schema") != SCHEMA or obj.get("version") != VERSION:
                raise DetectionFormatError(
                    f"line {lineno}: unsupported schema {obj.get('schema')!r} v{obj.get('version')}"
                )
            continue
        try:
            box = obj["box"]
            if len(box) != 4:
                raise ValueError("box needs 4 coordinates")
            out.append(DetectionRecord(
                str(obj["image_id"]), int(obj["class_id"]), float(obj["score"]),
                tuple(float(v) for v in box),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise DetectionFormatError(f"line {lineno}: bad detection record ({e})") from None
    return out


def read_detections_file(path) -> List[DetectionRecord]:
    return read_detections(Path(path).read_text())


def group_by_image(records: Iterable[DetectionRecord]) -> Dict[str, List[ScoredBox]]:
    out: Dict[str, List[ScoredBox]] = defaultdict(list)
    for r in records:
        out[r.image_id].append(r.to_scored_box())
    return dict(out)


def flatten(by_image: Dict[str, Sequence[ScoredBox]]) -> List[DetectionRecord]:
    """Records sorted by image id, each image's boxes in their given order."""
    return [DetectionRecord.from_scored_box(img, d)
            for img in sorted(by_image) for d in by_image[img]]
