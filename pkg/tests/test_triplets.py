import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regrade.transport import solve_transport
from regrade.triplets import (build_triplets, group_by_center, make_triplet, order_radially,
                              sink_centroid, triplets_json)

coord = st.floats(-10, 10, allow_nan=False)


def test_axis_aligned():
    t = make_triplet((0, 0), (1, 0), 0.1, offset_distance=0.5)
    assert (t.offset_wp.x, t.offset_wp.y) == (-0.5, 0.0)
    assert t.heading == 0.0
    assert make_triplet((0, 0), (0, 2), 0.1).heading == pytest.approx(math.pi / 2)


def test_four_node_triplets(four_nodes):
    plan = solve_transport(four_nodes)
    ts = build_triplets(plan)
    assert len(ts) == 3
    for t in ts:
        assert t.heading == pytest.approx(math.atan2(t.sink_wp.y - t.source_wp.y,
                                                     t.sink_wp.x - t.source_wp.x))
    assert len(build_triplets(plan.to_json()["moves"])) == 3


def test_zero_length_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        ts = build_triplets([{"src": [1, 1], "dst": [1, 1], "volume": 0.1},
                             {"src": [0, 0], "dst": [1, 0], "volume": 0.1}])
    assert len(ts) == 1
    assert "zero-length" in caplog.text


def test_bad_offset():
    with pytest.raises(ValueError):
        build_triplets([], offset_distance=0)


def test_radial_order():
    assert order_radially([]) == []
    pts = {"N": (0, 1), "S": (0, -1), "E": (1, 0), "W": (-1, 0)}
    ts = {k: make_triplet(v, (0, 0), 0.1) for k, v in pts.items()}
    out = order_radially([ts["S"], ts["W"], ts["N"], ts["E"]])
    names = [next(k for k, t in ts.items() if t is o) for o in out]
    assert names == ["E", "N", "W", "S"]


def test_radial_tie_nearer_first():
    far = make_triplet((2, 2), (0, 0), 0.1)
    near = make_triplet((1, 1), (0, 0), 0.1)
    assert order_radially([far, near]) == [near, far]


def test_group_by_center():
    a = make_triplet((1, 0), (0.1, 0), 0.1)
    b = make_triplet((11, 0), (10.1, 0), 0.1)
    c = make_triplet((0, 1), (0, 0.1), 0.1)
    out = group_by_center([b, c, a], [(0, 0), (10, 0)])
    assert out == [a, c, b]


def test_sink_centroid(four_nodes):
    plan = solve_transport(four_nodes)
    cx, cy = sink_centroid(plan)
    assert cx == pytest.approx((-2 * 0.3 + 2 * 0.4) / 0.7)
    assert cy == pytest.approx(1.0)


def test_json_keys():
    txt = triplets_json([make_triplet((0, 0), (1, 0), 0.2)])
    assert '"offset"' in txt and '"heading"' in txt and '"volume"' in txt


@settings(max_examples=200, deadline=None)
@given(sx=coord, sy=coord, dx=coord, dy=coord, off=st.floats(0.01, 2))
def test_heading_invariants(sx, sy, dx, dy, off):
    if math.hypot(dx - sx, dy - sy) < 1e-6:
        return
    t = make_triplet((sx, sy), (dx, dy), 0.1, off)
    assert t.offset_wp.heading == t.source_wp.heading == t.sink_wp.heading
    assert t.heading == pytest.approx(math.atan2(dy - sy, dx - sx))
    assert t.offset_wp.x == pytest.approx(sx - off * math.cos(t.heading))
    assert t.offset_wp.y == pytest.approx(sy - off * math.sin(t.heading))
    assert math.hypot(t.offset_wp.x - sx, t.offset_wp.y - sy) == pytest.approx(off)


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(coord, coord), min_size=0, max_size=12), cx=coord, cy=coord)
def test_radial_order_is_permutation_sorted(pts, cx, cy):
    ts = [make_triplet(p, (p[0] + 1, p[1]), 0.1) for p in pts]
    out = order_radially(ts, (cx, cy))
    assert sorted(map(id, out)) == sorted(map(id, ts))
    ang = [math.atan2(t.source_wp.y - cy, t.source_wp.x - cx) % (2 * math.pi) for t in out]
    assert all(a <= b for a, b in zip(ang, ang[1:]))


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(coord, coord), min_size=0, max_size=12))
def test_radial_order_idempotent(pts):
    ts = [make_triplet(p, (p[0], p[1] + 1), 0.1) for p in pts]
    once = order_radially(ts, (0.5, -0.5))
    assert order_radially(once, (0.5, -0.5)) == once
