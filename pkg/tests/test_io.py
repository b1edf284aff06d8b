import numpy as np
import pytest

from dronedet.geometry import BBox, ImageSize, ScoredBox
from dronedet.io.detections import (
    DetectionFormatError,
    DetectionRecord,
    flatten,
    group_by_image,
    read_detections,
    write_detections,
)
from dronedet.io.pnm import PnmError, decode_pnm, encode_pnm, image_size, read_image, write_image
from dronedet.io.stats import dataset_stats
from dronedet.io.visdrone import (
    ParseError,
    VisDroneRecord,
    class_id_for,
    parse_visdrone,
    read_annotation_dir,
    serialize_visdrone,
)


def random_records(rng, n):
    cols = [
        rng.integers(0, 2000, n), rng.integers(0, 1500, n), rng.integers(0, 400, n), rng.integers(0, 400, n),
        rng.integers(0, 2, n), rng.integers(0, 12, n), rng.integers(0, 3, n), rng.integers(0, 3, n),
    ]
    return [VisDroneRecord(*(int(c[i]) for c in cols)) for i in range(n)]


# -- VisDrone ----------------------------------------------------------------------------

def test_parse_known_line():
    (r,) = parse_visdrone("684,8,273,116,0,0,0,0\n")
    assert r.ignore and not r.evaluated
    assert r.box == BBox(684, 8, 957, 124)


def test_parse_car_and_trailing_comma():
    recs = parse_visdrone("1,2,3,4,1,4,0,1,\n\n10,20,5,5,1,11,1,2\n")
    assert [r.category for r in recs] == [4, 11]
    assert recs[0].evaluated and recs[0].to_ground_truth().class_id == 4
    assert recs[1].to_ground_truth() is None


@pytest.mark.parametrize("line,fragment", [
    ("1,2,3,4,1,4,0", "expected 8"),
    ("1,2,3,x,1,4,0,0", "non-integer"),
    ("1,2,3,4,1,12,0,0", "category"),
    ("1,2,-3,4,1,4,0,0", "bbox_width"),
    ("1,2,3,4,1,4,3,0", "truncation"),
])
def test_parse_errors_report_line(line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        parse_visdrone("1,1,1,1,1,1,0,0\n" + line)
    assert info.value.lineno == 2


def test_round_trip_10000(rng):
    recs = random_records(rng, 10_000)
    text = serialize_visdrone(recs)
    assert parse_visdrone(text) == recs
    assert serialize_visdrone(parse_visdrone(text)) == text


def test_class_names():
    assert class_id_for("trunk") == class_id_for("truck") == 6
    assert class_id_for("Awning-Tricycle") == 8
    with pytest.raises(KeyError):
        class_id_for("boat")


def test_read_annotation_dir_names_file(tmp_path):
    (tmp_path / "a.txt").write_text("1,1,1,1,1,1,0,0\n")
    (tmp_path / "b.txt").write_text("oops\n")
    with pytest.raises(ParseError, match="b.txt: line 1"):
        read_annotation_dir(tmp_path)
    (tmp_path / "b.txt").unlink()
    assert list(read_annotation_dir(tmp_path)) == ["a"]


# -- detections JSONL ------------------------------------------------------------------

def test_jsonl_round_trip_lossless(rng):
    recs = [DetectionRecord("img", 3, 0.123456789, (1.0000000001, 2.5, 3.25, 1e-17 + 4))]
    for i in range(200):
        x, y = rng.uniform(0, 1000, 2)
        recs.append(DetectionRecord(f"im{i % 7}", int(rng.integers(0, 10)), float(rng.random()),
                                    (x, y, x + rng.uniform(1, 50), y + rng.uniform(1, 50))))
    assert read_detections(write_detections(recs)) == recs


def test_jsonl_header():
    text = write_detections([])
    assert text.splitlines()[0] == '{"schema": "dronedet.detections", "version": 1}'
    assert read_detections(text) == []
    assert read_detections("") == []


def test_jsonl_errors():
    with pytest.raises(DetectionFormatError, match="line 1"):
        read_detections("{nope")
    with pytest.raises(DetectionFormatError, match="unsupported schema"):
        read_detections('{"schema": "other", "version": 1}')
    with pytest.raises(DetectionFormatError, match="line 2"):
        read_detections('{"schema": "dronedet.detections", "version": 1}\n{"image_id": "a", "score": 0.5}')
    with pytest.raises(DetectionFormatError):
        read_detections('{"image_id": "a", "class_id": 1, "score": 1.5, "box": [0, 0, 1, 1]}')


def test_group_and_flatten():
    by = {"b": [ScoredBox(BBox(0, 0, 1, 1), 0.5, 1)], "a": [ScoredBox(BBox(1, 1, 2, 2), 0.25, 0)]}
    flat = flatten(by)
    assert [r.image_id for r in flat] == ["a", "b"]
    assert group_by_image(flat) == by


# -- PNM ------------------------------------------------------------------------------

def test_ppm_known_bytes():
    img = np.array([[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [10, 20, 30]]], dtype=np.uint8)
    data = encode_pnm(img)
    assert data == b"P6\n2 2\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30])
    assert np.array_equal(decode_pnm(data), img)


def test_ppm_round_trip_bit_exact(rng, tmp_path):
    img = rng.integers(0, 256, size=(37, 53, 3), dtype=np.uint8)
    write_image(tmp_path / "x.ppm", img)
    assert read_image(tmp_path / "x.ppm").tobytes() == img.tobytes()
    assert image_size(tmp_path / "x.ppm") == (53, 37)
    gray = rng.integers(0, 256, size=(5, 4), dtype=np.uint8)
    assert np.array_equal(decode_pnm(encode_pnm(gray)), gray)


def test_ppm_header_comments():
    assert decode_pnm(b"P5 # c\n# more\n1 1\n255\n\x07").tolist() == [[7]]


def test_ppm_truncated():
    with pytest.raises(PnmError, match="unexpected end of pixel data"):
        decode_pnm(b"P6\n2 2\n255\n" + bytes(11))


def test_ppm_bad_magic():
    with pytest.raises(PnmError, match="unsupported image format"):
        decode_pnm(b"\x89PNG\r\n\x1a\n")
    with pytest.raises(PnmError, match="8-bit"):
        decode_pnm(b"P6\n1 1\n65535\n" + bytes(6))


# -- stats -----------------------------------------------------------------------------

def test_dataset_stats():
    recs = parse_visdrone(
        "0,0,4,4,1,4,0,0\n"      # 4 px at 3072 wide -> 2 px at 1536: tiny
        "0,0,6,2,1,1,0,0\n"      # max side 6 -> 3 px: kept
        "0,0,2,2,0,0,0,0\n"      # ignored region, never tiny
        "0,0,50,50,1,11,0,0\n"
    )
    st = dataset_stats({"im": (ImageSize(3072, 1000), recs)})
    assert st.tiny_count == 1
    assert st.total == 4 and st.label_count == 3
    assert st.category_counts[4] == 1 and st.category_counts[0] == 1
    assert st.eval_counts[1] == 1
    d = st.to_dict()
    assert d["tiny_labels"] == 1 and d["per_image"]["im"]["car"] == 1
    assert "1 of 3" in st.to_text()
