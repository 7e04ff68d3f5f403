import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from granbridge.rle import (
    DimensionMismatch, MalformedRle, RleMask, UnsupportedSegmentation, dilate, mask_area,
    mask_bbox, mask_intersection, mask_iou, mask_union, rle_decode, rle_encode,
)
from oracles import scan_decode, scan_encode


def pixel(h, w, r, c):
    m = np.zeros((h, w), dtype=bool)
    m[r, c] = True
    return m


@st.composite
def mask_pairs(draw, max_side=12):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    a = draw(arrays(bool, (h, w)))
    b = draw(arrays(bool, (h, w)))
    return a, b


def test_encode_examples():
    assert rle_encode(pixel(2, 2, 0, 0)).counts == (0, 1, 3)
    assert scan_encode(pixel(2, 2, 0, 0)) == [0, 1, 3]
    assert rle_encode(np.zeros((3, 3), bool)).counts == (9,)
    assert rle_encode(np.ones((3, 3), bool)).counts == (0, 9)


def test_column_major_order():
    # pixel (row 0, col 1) of a 2x2 mask is third in the scan
    assert rle_encode(pixel(2, 2, 0, 1)).counts == (2, 1, 1)
    assert rle_encode(pixel(2, 3, 1, 0)).counts == (1, 1, 4)


def test_decode_examples():
    assert not rle_decode(RleMask(3, 3, [9])).any()
    got = rle_decode(RleMask(2, 2, [0, 1, 3]))
    np.testing.assert_array_equal(got, scan_decode(2, 2, [0, 1, 3]))
    np.testing.assert_array_equal(got, pixel(2, 2, 0, 0))


@pytest.mark.parametrize("counts", [[0, 10], [8], [0, 0, 9], [4, -1, 6], [3, 0, 6]])
def test_malformed_counts_rejected(counts):
    with pytest.raises(MalformedRle):
        rle_decode(RleMask(3, 3, counts))


def test_json_wire_form():
    r = RleMask.from_json({"size": [2, 2], "counts": [0, 1, 3]})
    assert r == RleMask(2, 2, (0, 1, 3))
    assert r.to_json() == {"size": [2, 2], "counts": [0, 1, 3]}
    with pytest.raises(UnsupportedSegmentation):
        RleMask.from_json({"size": [2, 2], "counts": "a1b2"})
    with pytest.raises(UnsupportedSegmentation):
        RleMask.from_json([[0, 0, 1, 0, 1, 1]])
    with pytest.raises(MalformedRle):
        RleMask.from_json({"size": [2], "counts": [4]})


def test_union_examples():
    a = rle_encode(pixel(2, 2, 0, 0))
    b = rle_encode(pixel(2, 2, 1, 1))
    empty = RleMask.empty(2, 2)
    assert mask_union(a, empty) == a
    assert mask_union(a, a) == a
    # (0,0) and (1,1) are scan positions 0 and 3
    assert mask_union(a, b).counts == (0, 1, 2, 1)
    assert mask_union(a, b).counts == tuple(scan_encode(pixel(2, 2, 0, 0) | pixel(2, 2, 1, 1)))


def test_intersection_examples():
    a = rle_encode(pixel(2, 2, 0, 0))
    b = rle_encode(pixel(2, 2, 1, 1))
    empty = RleMask.empty(2, 2)
    assert mask_intersection(a, empty) == empty
    assert mask_intersection(a, a) == a
    assert mask_intersection(a, b) == empty


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        mask_union(RleMask.empty(2, 2), RleMask.empty(2, 3))
    with pytest.raises(DimensionMismatch):
        mask_iou(RleMask.empty(2, 2), RleMask.empty(3, 2))


def test_area_examples():
    assert mask_area(RleMask.empty(3, 3)) == 0
    assert mask_area(RleMask(3, 3, [0, 9])) == 9
    r = RleMask(2, 2, [0, 1, 3])
    assert mask_area(r) == scan_decode(2, 2, r.counts).sum() == 1


def test_iou_examples():
    a = np.zeros((3, 3), bool)
    a[0, 0:2] = True
    b = np.zeros((3, 3), bool)
    b[0, 1:3] = True
    ra, rb = rle_encode(a), rle_encode(b)
    assert mask_iou(ra, ra) == 1.0
    assert mask_iou(ra, rle_encode(pixel(3, 3, 2, 2))) == 0.0
    assert mask_iou(ra, rb) == pytest.approx((a & b).sum() / (a | b).sum())
    assert mask_iou(ra, rb) == pytest.approx(1 / 3)
    assert mask_iou(RleMask.empty(3, 3), RleMask.empty(3, 3)) == 0.0


def test_dilate_examples():
    m = pixel(5, 5, 2, 2)
    np.testing.assert_array_equal(dilate(m, 0), m)
    d = dilate(m, 1)
    assert d.sum() == 9 and d[1:4, 1:4].all()
    full = np.ones((4, 6), bool)
    np.testing.assert_array_equal(dilate(full, 3), full)
    with pytest.raises(ValueError):
        dilate(m, -1)


def test_dilate_clips_at_border():
    d = dilate(pixel(4, 4, 0, 0), 2)
    assert d.sum() == 9 and d[:3, :3].all()


@given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9))), st.integers(0, 4))
def test_dilate_matches_brute_force(m, r):
    h, w = m.shape
    expected = np.zeros_like(m)
    for y, x in zip(*np.nonzero(m)):
        expected[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1] = True
    got = dilate(m, r)
    np.testing.assert_array_equal(got, expected)
    assert (got | m).sum() == got.sum()


def test_mask_bbox():
    m = np.zeros((6, 8), bool)
    m[2:4, 3:7] = True
    assert mask_bbox(rle_encode(m)).as_tuple() == (3, 2, 7, 4)
    assert mask_bbox(RleMask.empty(3, 3)) is None


@given(arrays(bool, st.tuples(st.integers(1, 16), st.integers(1, 16))))
def test_encode_matches_scan_oracle(m):
    r = rle_encode(m)
    assert list(r.counts) == scan_encode(m)
    np.testing.assert_array_equal(rle_decode(r), m)


@given(mask_pairs())
def test_streaming_ops_match_dense_oracle(pair):
    a, b = pair
    ra, rb = rle_encode(a), rle_encode(b)
    assert list(mask_union(ra, rb).counts) == scan_encode(a | b)
    assert list(mask_intersection(ra, rb).counts) == scan_encode(a & b)
    union = (a | b).sum()
    assert mask_iou(ra, rb) == pytest.approx((a & b).sum() / union if union else 0.0, abs=1e-15)


@given(mask_pairs())
def test_set_algebra_properties(pair):
    a, b = (rle_encode(x) for x in pair)
    u, i = mask_union(a, b), mask_intersection(a, b)
    assert mask_area(u) == mask_area(a) + mask_area(b) - mask_area(i)
    assert u == mask_union(b, a) and i == mask_intersection(b, a)
    assert mask_union(u, a) == u
    assert mask_iou(a, b) == mask_iou(b, a)
    assert mask_iou(a, u) >= mask_iou(a, b)


@given(st.tuples(*(arrays(bool, (5, 7)) for _ in range(3))))
def test_union_associative(masks):
    a, b, c = (rle_encode(m) for m in masks)
    assert mask_union(mask_union(a, b), c) == mask_union(a, mask_union(b, c))
    assert mask_intersection(mask_intersection(a, b), c) == mask_intersection(a, mask_intersection(b, c))
