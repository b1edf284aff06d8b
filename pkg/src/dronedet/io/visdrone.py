"""VisDrone-DET annotation files.

One object per line: ``left,top,width,height,score,category,truncation,occlusion``.
Category 0 marks an ignored region and 11 is "others"; 1-10 are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from ..geometry import BBox
from ..evaluation import GroundTruthBox

CATEGORY_NAMES = {
    0: "ignored-regions",
    1: "pedestrian",
    2: "people",
    3: "bicycle",
    4: "car",
    5: "van",
    6: "truck",
    7: "tricycle",
    8: "awning-tricycle",
    9: "bus",
    10: "motor",
    11: "others",
}
# some result tables spell category 6 "trunk"
NAME_ALIASES = {"trunk": 6}
EVAL_CLASSES = tuple(range(1, 11))
IGNORED_REGION = 0
OTHERS = 11


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str, source: Optional[str] = None):
        where = f"{source}: line {lineno}" if source else f"line {lineno}"
        super().__init__(f"{where}: {message}")
        self.lineno = lineno
        self.reason = message


def class_id_for(name: str) -> int:
    name = name.strip().lower()
    if name in NAME_ALIASES:
        return NAME_ALIASES[name]
    for cid, n in CATEGORY_NAMES.items():
        if n == name:
            return cid
    raise KeyError(f"unknown VisDrone category {name!r}")


@dataclass(frozen=True)
class VisDroneRecord:
    bbox_left: int
    bbox_top: int
    bbox_width: int
    bbox_height: int
    score: int
    category: int
    truncation: int
    occlusion: int

    def __post_init__(self):
        for name in ("bbox_left", "bbox_top", "bbox_width", "bbox_height"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.score not in (0, 1):
            raise ValueError(f"score flag must be 0 or 1, got {self.score}")
        if not 0 <= self.category <= 11:
            raise ValueError(f"category {self.category} outside 0-11")
        if not 0 <= self.truncation <= 2:
            raise ValueError(f"truncation {self.truncation} outside 0-2")
        if not 0 <= self.occlusion <= 2:
            raise ValueError(f"occlusion {self.occlusion} outside 0-2")

    @property
    def ignore(self) -> bool:
        return self.category == IGNORED_REGION

    @property
    def evaluated(self) -> bool:
        return self.category in EVAL_CLASSES

    @property
    def box(self) -> BBox:
        return BBox.from_xywh(self.bbox_left, self.bbox_top, self.bbox_width, self.bbox_height)

    def to_line(self) -> str:
        return ",".join(str(v) for v in (
            self.bbox_left, self.bbox_top, self.bbox_width, self.bbox_height,
            self.score, self.category, self.truncation, self.occlusion,
        ))

    def to_ground_truth(self) -> Optional[GroundTruthBox]:
        """Evaluation view: ignored regions flagged, "others" left out."""
        if self.category == OTHERS:
            return None
        return GroundTruthBox(self.box, self.category, ignore=self.ignore)


def parse_visdrone(text: str) -> List[VisDroneRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        # tolerate the trailing comma some VisDrone files carry
        if len(fields) == 9 and fields[-1].strip() == "":
            fields = fields[:8]
        if len(fields) != 8:
            raise ParseError(lineno, f"expected 8 comma-separated fields, got {len(fields)}")
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise ParseError(lineno, f"non-integer field in {line!r}") from None
        try:
            records.append(VisDroneRecord(*values))
        except ValueError as e:
            raise ParseError(lineno, str(e)) from None
    return records


def serialize_visdrone(records) -> str:
    return "".join(r.to_line() + "\n" for r in records)


def read_annotation_dir(path) -> Dict[str, List[VisDroneRecord]]:
    """All ``*.txt`` files under ``path`` keyed by file stem (the image id)."""
    out = {}
    for f in sorted(Path(path).glob("*.txt")):
        try:
            out[f.stem] = parse_visdrone(f.read_text())
        except ParseError as e:
            raise ParseError(e.lineno, e.reason, f.name) from None
    return out
