import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from kidqn.core import unit
from kidqn.geometry import (
    Rect,
    box_exit_time,
    inside_box,
    overlap_depth,
    penetrates,
    rect_distance,
    segment_clip,
    translation_contact_time,
)

coords = st.floats(5, 35, allow_nan=False)
sizes = st.floats(1, 10, allow_nan=False)
angles = st.floats(0, 360, allow_nan=False)
rects = st.builds(Rect, coords, coords, sizes, sizes, angles)


def test_axis_aligned_corners():
    r = Rect(10, 10, 4, 2, 0)
    assert np.allclose(r.corners(), [[8, 9], [12, 9], [12, 11], [8, 11]])
    assert r.contains([[11.9, 10.9]])[0] and not r.contains([[12.1, 10]])[0]


def test_overlap_and_touching():
    a, b = Rect(0, 0, 2, 2, 0), Rect(2, 0, 2, 2, 0)
    assert overlap_depth(a, b) == pytest.approx(0.0)
    assert not penetrates(a, b)
    assert penetrates(a, Rect(1.5, 0, 2, 2, 0))
    assert rect_distance(a, Rect(5, 0, 2, 2, 0)) == pytest.approx(3.0)


def test_contact_time_head_on():
    a, b = Rect(10, 10, 2, 2, 0), Rect(20, 10, 2, 2, 0)
    assert translation_contact_time(a, b, [1, 0], 50) == pytest.approx(8.0, abs=1e-6)
    assert translation_contact_time(a, b, [-1, 0], 50) == 50
    assert translation_contact_time(a, b, [0, 1], 50) == 50


def test_sliding_along_face_is_free():
    a, b = Rect(10, 10, 2, 2, 0), Rect(12, 10, 2, 2, 0)
    assert translation_contact_time(a, b, [0, 1], 5) == 5


@settings(max_examples=150, deadline=None)
@given(rects, rects, angles, st.floats(0.5, 20))
def test_contact_time_matches_stepping(a, b, heading, max_t):
    assume(not penetrates(a, b, tol=1e-9))
    u = unit(heading)
    t = translation_contact_time(a, b, u, max_t)
    assert 0.0 <= t <= max_t
    # never penetrating before t (small tolerance), and blocked shortly after when t < max_t
    for s in np.linspace(0.0, t, 20):
        assert overlap_depth(a.moved(s * u), b) <= 1e-6
    if t < max_t - 1e-6:
        assert overlap_depth(a.moved(min(t + 0.02, max_t) * u), b) > 0.0


@given(rects, angles)
def test_box_exit_time_keeps_inside(r, heading):
    assume(inside_box(r, 40.0))
    u = unit(heading)
    t = box_exit_time(r, u, 40.0, 30.0)
    assert inside_box(r.moved(t * u), 40.0, tol=1e-9)


def test_segment_clip():
    r = Rect(5, 5, 2, 2, 0)
    t0, t1 = segment_clip([0, 5], [10, 5], r)
    assert (t0, t1) == pytest.approx((0.4, 0.6))
    assert segment_clip([0, 0], [1, 0], r) is None
    assert segment_clip([5, 5], [5, 5.5], r) == (0.0, 1.0)
