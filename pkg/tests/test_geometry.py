import pytest
from hypothesis import given, strategies as st

from dronedet.geometry import (
    BBox,
    ImageSize,
    ScoredBox,
    ViewTransform,
    clip_boxes,
    iou,
    transform_boxes,
)
from conftest import boxes
from oracles import iou_ref


def sb(*coords, score=0.5, cls=0):
    return ScoredBox(BBox(*coords), score, cls)


def test_bbox_fixes_swapped_corners():
    b = BBox(5, 6, 1, 2)
    assert b.as_tuple() == (1, 2, 5, 6)
    assert b.area == 16


def test_iou_identical():
    assert iou(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == 1.0


def test_iou_disjoint():
    assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0


def test_iou_half_overlap():
    # intersection 2, union 6
    assert iou(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_zero_area_boxes():
    assert iou(BBox(1, 1, 1, 1), BBox(1, 1, 1, 1)) == 0.0


@given(boxes(), boxes())
def test_iou_symmetric_and_matches_reference(a, b):
    assert iou(a, b) == iou(b, a)
    assert iou(a, b) == pytest.approx(iou_ref(a.as_tuple(), b.as_tuple()), abs=1e-12)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes(min_size=0.01))
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes(min_size=0.01), boxes(min_size=0.01), st.floats(min_value=0.1, max_value=10))
def test_iou_scale_invariant(a, b, k):
    sa = BBox(a.x1 * k, a.y1 * k, a.x2 * k, a.y2 * k)
    sb_ = BBox(b.x1 * k, b.y1 * k, b.x2 * k, b.y2 * k)
    assert iou(sa, sb_) == pytest.approx(iou(a, b), abs=1e-9)


def test_transform_identity():
    v = ViewTransform(1.0, False, ImageSize(100, 80))
    d = [sb(10, 5, 20, 15)]
    assert transform_boxes(d, v, "forward") == d


def test_transform_mirror():
    v = ViewTransform(1.0, True, ImageSize(100, 80))
    (out,) = transform_boxes([sb(10, 5, 20, 15)], v, "forward")
    assert out.box.as_tuple() == (80, 5, 90, 15)


def test_transform_scale():
    v = ViewTransform(0.5, False, ImageSize(100, 80))
    (out,) = transform_boxes([sb(10, 20, 30, 40, score=0.7, cls=3)], v, "forward")
    assert out.box.as_tuple() == (5, 10, 15, 20)
    assert (out.score, out.class_id) == (0.7, 3)


def test_transform_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        ViewTransform(0.0, False, ImageSize(10, 10))
    with pytest.raises(ValueError):
        ViewTransform(-1.0, True, ImageSize(10, 10))


def test_transform_bad_direction():
    with pytest.raises(ValueError):
        transform_boxes([], ViewTransform(1.0, False, ImageSize(1, 1)), "sideways")


@given(boxes(), st.floats(min_value=0.2, max_value=3.0), st.booleans(),
       st.integers(min_value=1, max_value=4000), st.integers(min_value=1, max_value=4000))
def test_transform_round_trip(b, scale, flip, w, h):
    v = ViewTransform(scale, flip, ImageSize(w, h))
    d = [ScoredBox(b, 0.3, 1)]
    back = transform_boxes(transform_boxes(d, v, "forward"), v, "inverse")
    for x, y in zip(back[0].box.as_tuple(), b.as_tuple()):
        assert x == pytest.approx(y, abs=1e-9)


@given(boxes(), st.integers(min_value=1, max_value=500))
def test_double_flip_is_identity(b, w):
    v = ViewTransform(1.0, True, ImageSize(w, 10))
    twice = v.forward_box(v.forward_box(b))
    for x, y in zip(twice.as_tuple(), b.as_tuple()):
        assert x == pytest.approx(y, abs=1e-9)


def test_clip_inside_unchanged():
    d = [sb(1, 2, 30, 40)]
    assert clip_boxes(d, ImageSize(100, 100)) == d


def test_clip_clamps():
    (out,) = clip_boxes([sb(-5, -5, 10, 10)], ImageSize(100, 100))
    assert out.box.as_tuple() == (0, 0, 10, 10)


def test_clip_drops_outside():
    assert clip_boxes([sb(150, 150, 160, 170)], ImageSize(100, 100)) == []


def test_scored_box_validates():
    with pytest.raises(ValueError):
        sb(0, 0, 1, 1, score=1.5)
    with pytest.raises(ValueError):
        sb(0, 0, 1, 1, cls=-1)
    with pytest.raises(ValueError):
        ImageSize(0, 5)
