import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from dronedet.geometry import BBox, ScoredBox


def random_box(rng, extent=50.0, min_size=1.0, max_size=25.0):
    x1, y1 = rng.uniform(0, extent, size=2)
    w, h = rng.uniform(min_size, max_size, size=2)
    return BBox(x1, y1, x1 + w, y1 + h)


def random_dets(rng, n, classes=2, extent=50.0):
    return [ScoredBox(random_box(rng, extent), float(rng.uniform(0.01, 1.0)), int(rng.integers(0, classes)))
            for _ in range(n)]


def as_tuples(dets):
    return [(d.box.as_tuple(), d.score, d.class_id) for d in dets]


coords = st.floats(min_value=-100, max_value=100, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, min_size=0.0):
    x1, y1 = draw(coords), draw(coords)
    w = draw(st.floats(min_value=min_size, max_value=60))
    h = draw(st.floats(min_value=min_size, max_value=60))
    return BBox(x1, y1, x1 + w, y1 + h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
