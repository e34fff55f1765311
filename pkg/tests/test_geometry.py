import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pctpack import oracles
from pctpack.geometry import (BinSpec, Box3, Vec3, contains, convex_vertices, feasible_region, heightmap,
                              intersect, overlaps, region_from_cuts)

BIN = BinSpec(Vec3(10, 10, 10))


def box(x, y, z, w, d, h):
    return Box3(Vec3(x, y, z), Vec3(w, d, h))


def test_face_contact_is_not_overlap():
    a = box(0, 0, 0, 2, 2, 2)
    assert not overlaps(a, box(2, 0, 0, 2, 2, 2))
    assert not overlaps(a, box(0, 0, 2, 1, 1, 1))
    assert overlaps(a, box(1, 1, 1, 2, 2, 2))


def test_box_rejects_bad_sizes():
    with pytest.raises(ValueError):
        box(0, 0, 0, 0, 1, 1)
    with pytest.raises(ValueError):
        box(0, 0, math.nan, 1, 1, 1)


def test_bin_validation():
    with pytest.raises(ValueError):
        BinSpec(Vec3(10, 10, 10), "fuzzy")
    with pytest.raises(ValueError):
        BinSpec(Vec3(10, 10, 10), "discrete", grid_step=3)
    assert BinSpec(Vec3(1, 1, 1), "continuous").eps > 0
    assert BIN.eps == 0


def test_contains_and_intersect():
    assert contains(BIN, box(5, 5, 5, 5, 5, 5))
    assert not contains(BIN, box(6, 0, 0, 5, 1, 1))
    cut = intersect(box(0, 0, 0, 4, 4, 4), box(2, 2, 2, 4, 4, 4))
    assert cut == box(2, 2, 2, 2, 2, 2)
    assert intersect(box(0, 0, 0, 1, 1, 1), box(1, 0, 0, 1, 1, 1)) is None


def test_heightmap_tops():
    hm = heightmap(np.array([[0, 0, 0, 5, 5, 3], [0, 0, 3, 2, 2, 4]], float), BIN)
    assert hm.max_under(0, 2, 0, 2) == 4
    assert hm.max_under(3, 5, 3, 5) == 3
    assert hm.max_under(6, 9, 6, 9) == 0


def test_l_shaped_region_vertices():
    # a 4x4 obstacle in the corner leaves an L; its convex corners are known by hand
    obstacles = np.array([[0, 0, 0, 4, 4, 5]], float)
    reg = feasible_region(0.0, (2, 2), obstacles, BIN)
    got = {v.position for v in convex_vertices(reg)}
    assert got == {(4.0, 0.0), (8.0, 0.0), (8.0, 8.0), (0.0, 8.0), (0.0, 4.0)}


def test_empty_when_footprint_too_large():
    assert feasible_region(0.0, (11, 1), np.zeros((0, 6)), BIN).empty


def test_tight_slot_keeps_a_line():
    # a 2-wide slot between two walls admits positions only along one line
    obstacles = np.array([[0, 0, 0, 4, 10, 10], [6, 0, 0, 10, 10, 10]], float)
    reg = feasible_region(0.0, (2, 2), obstacles, BIN)
    assert not reg.empty
    assert reg.contains_point(4, 3) and not reg.contains_point(4.5, 3)


boxes_st = st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 4), st.integers(1, 4)),
                    max_size=5)


@given(boxes_st, st.integers(1, 5), st.integers(1, 5))
def test_convex_vertices_match_grid_probe(rects, fx, fy):
    arr = np.array([[x, y, 0, min(10, x + w), min(10, y + d), 3] for x, y, w, d in rects], float).reshape(-1, 6)
    reg = feasible_region(0.0, (fx, fy), arr, BIN)
    got = sorted(v.position for v in convex_vertices(reg))
    want = sorted(oracles.brute_convex_vertices((10, 10, 10), (fx, fy, 1), arr, 0.0))
    assert got == want


@given(st.lists(st.tuples(st.floats(0, 6), st.floats(0, 6), st.floats(0.5, 4), st.floats(0.5, 4)), max_size=4))
def test_region_points_avoid_every_cut(cuts):
    cuts = [(x, x + w, y, y + h) for x, y, w, h in cuts]
    reg = region_from_cuts(8.0, 8.0, cuts)
    for x0, x1, y0, y1 in reg.rects:
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        assert 0 <= cx <= 8 and 0 <= cy <= 8
        for a, b, c, d in cuts:
            assert not (a < cx < b and c < cy < d)
