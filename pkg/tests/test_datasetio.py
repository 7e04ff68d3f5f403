import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from granbridge.bridge import Source, sigmoid
from granbridge.datasetio import (
    Annotation, DatasetDoc, DatasetError, DatasetSyntaxError, DocumentTooLarge, ImageInfo,
    SplitAssignment, UnsupportedFormat, average_objects, compute_stats, detections,
    ground_truth, parse_dataset, split_dataset, split_sizes, teacher_predictions, write_dataset,
)
from granbridge.geometry import Box

FIXTURES = Path(__file__).parent / "fixtures"


def minimal(**overrides):
    doc = {"images": [{"id": 1, "width": 4, "height": 3, "file_name": "x.png"}],
           "annotations": [], "categories": [{"id": 1, "name": "tree"}]}
    doc.update(overrides)
    return json.dumps(doc).encode()


def ann(**kw):
    base = {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2]}
    base.update(kw)
    return base


def doc_with_counts(n_images, n_objects):
    images = [ImageInfo(i, 8, 8) for i in range(1, n_images + 1)]
    anns = [Annotation(k + 1, images[k % n_images].id, 1, (0, 0, 1, 1))
            for k in range(n_objects)]
    return DatasetDoc(images, anns)


def test_minimal_document():
    doc = parse_dataset(minimal())
    assert [i.id for i in doc.images] == [1] and doc.annotations == []


def test_missing_collections_default_empty():
    doc = parse_dataset(b'{"images": [{"id": 1, "width": 1, "height": 1}]}')
    assert doc.categories == [] and doc.annotations == []
    assert write_dataset(doc).startswith(b'{"annotations":[],"categories":[]')


def test_golden_round_trip():
    golden = (FIXTURES / "tiny_gt.json").read_bytes()
    assert write_dataset(parse_dataset(golden)) == golden
    pretty = (FIXTURES / "tiny_gt_pretty.json").read_bytes()
    assert write_dataset(parse_dataset(pretty)) == golden
    doc = parse_dataset(golden)
    assert write_dataset(doc) == write_dataset(doc)
    assert doc.extra == {"info": {"note": "fixture"}}
    assert doc.annotations[0].extra == {"tree_id": 0}
    assert doc.image(3).extra == {"license": 4}


def test_empty_collections_emit_canonically():
    assert write_dataset(DatasetDoc()) == b'{"annotations":[],"categories":[],"images":[]}\n'


def test_missing_image_reference():
    with pytest.raises(DatasetError, match="unknown image_id 42"):
        parse_dataset(minimal(annotations=[ann(image_id=42)]))


@pytest.mark.parametrize("overrides,match", [
    (dict(annotations=[ann(), ann()]), "duplicate annotation id 10"),
    (dict(annotations=[ann(category_id=3)]), "unknown category_id 3"),
    (dict(annotations=[ann(bbox=[0, 0, -1, 2])]), "annotation 10"),
    (dict(annotations=[ann(bbox=[0, 0, 2])]), "annotation 10"),
    (dict(annotations=[ann(score=1.5)]), "annotation 10"),
    (dict(images=[{"id": 1, "width": 0, "height": 3}]), "image 1"),
    (dict(images=[{"id": "a", "width": 1, "height": 3}]), "image id"),
    (dict(annotations=[ann(segmentation={"size": [2, 2], "counts": [4]})]), "does not match image 1"),
    (dict(annotations=[ann(segmentation={"size": [3, 4], "counts": [0, 13]})]), "annotation 10"),
])
def test_invariant_violations(overrides, match):
    with pytest.raises(DatasetError, match=match):
        parse_dataset(minimal(**overrides))


@pytest.mark.parametrize("seg", [
    [[0, 0, 2, 0, 2, 2]],
    {"size": [3, 4], "counts": "PP3"},
])
def test_unsupported_segmentation_names_annotation(seg):
    with pytest.raises(UnsupportedFormat, match="annotation 10"):
        parse_dataset(minimal(annotations=[ann(segmentation=seg)]))


def test_crowd_rejected():
    with pytest.raises(UnsupportedFormat, match="crowd"):
        parse_dataset(minimal(annotations=[ann(iscrowd=1)]))
    assert parse_dataset(minimal(annotations=[ann(iscrowd=0)])).annotations[0].extra == {"iscrowd": 0}


def test_syntax_error_reports_byte_offset():
    bad = '{"images": [], "x": "é", oops}'.encode()
    with pytest.raises(DatasetSyntaxError) as info:
        parse_dataset(bad)
    assert info.value.offset == bad.index(b"oops")
    assert "byte offset" in str(info.value)


def test_size_cap(monkeypatch):
    monkeypatch.setenv("GRANBRIDGE_MAX_DOC_MB", "0.00001")
    with pytest.raises(DocumentTooLarge):
        parse_dataset(minimal())
    monkeypatch.setenv("GRANBRIDGE_MAX_DOC_MB", "1")
    parse_dataset(minimal())


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 50),
                          st.floats(0, 50), st.one_of(st.none(), st.floats(0, 1))),
                max_size=8))
def test_round_trip_is_identity(rows):
    anns = [Annotation(k + 1, 1, 1, (x, y, w, h), score=s) for k, (x, y, w, h, s) in enumerate(rows)]
    doc = DatasetDoc([ImageInfo(1, 100, 100, "a.png")], anns,
                     parse_dataset(minimal()).categories)
    emitted = write_dataset(doc)
    again = parse_dataset(emitted)
    assert write_dataset(again) == emitted
    assert [a.bbox for a in again.annotations] == [a.bbox for a in anns]


def test_conversions():
    doc = parse_dataset((FIXTURES / "tiny_gt.json").read_bytes())
    gts = ground_truth(doc)
    assert gts[0].area == 1 and gts[2].area == 2.0
    assert gts[1].box == Box(0.5, 0, 2.0, 2)
    with pytest.raises(DatasetError, match="annotation 1"):
        detections(doc)
    preds = teacher_predictions(
        DatasetDoc(doc.images, [a for a in doc.annotations if a.id == 2], doc.categories),
        Source.WHOLE)
    assert preds[0].logit == -0.25
    only_score = Annotation(7, 1, 1, (0, 0, 1, 1), score=0.75)
    d = detections(DatasetDoc(doc.images, [only_score], doc.categories))
    assert d[0].score == 0.75
    t = teacher_predictions(DatasetDoc(doc.images, [only_score], doc.categories), Source.TRUNK)
    assert sigmoid(t[0].logit) == pytest.approx(0.75)


# -- splits and stats -------------------------------------------------------------------


@pytest.mark.parametrize("n,expected", [(2000, [1400, 400, 200]), (10, [7, 2, 1]),
                                        (1600, [1120, 320, 160]), (11, [8, 2, 1]), (3, [3, 0, 0])])
def test_split_sizes(n, expected):
    assert split_sizes(n, (0.7, 0.2, 0.1)) == expected


def test_split_dataset_partition_and_determinism():
    doc = doc_with_counts(2000, 0)
    a = split_dataset(doc, seed=3)
    assert (len(a.train), len(a.val), len(a.test)) == (1400, 400, 200)
    assert sorted(a.train + a.val + a.test) == list(range(1, 2001))
    assert split_dataset(doc, seed=3) == a
    assert split_dataset(doc, seed=4) != a
    small = split_dataset(doc_with_counts(10, 0), seed=0)
    assert (len(small.train), len(small.val), len(small.test)) == (7, 2, 1)


def test_split_errors():
    with pytest.raises(DatasetError):
        split_dataset(DatasetDoc())
    with pytest.raises(ValueError):
        split_dataset(doc_with_counts(5, 0), ratios=(0.5, 0.2, 0.1))


@given(st.integers(1, 300), st.integers(0, 2**32))
def test_split_is_partition(n, seed):
    a = split_dataset(doc_with_counts(n, 0), seed=seed)
    ids = a.train + a.val + a.test
    assert sorted(ids) == list(range(1, n + 1))
    assert [len(a.train), len(a.val), len(a.test)] == split_sizes(n, (0.7, 0.2, 0.1))


@pytest.mark.parametrize("objects,images,avg", [
    (14065, 1400, 10.05), (2663, 320, 8.32), (9156, 1120, 8.18), (1974, 200, 9.87),
    (0, 5, 0.0), (0, 0, 0.0),
])
def test_average_objects(objects, images, avg):
    assert average_objects(objects, images) == avg


def test_compute_stats():
    doc = doc_with_counts(10, 23)
    a = split_dataset(doc, seed=1)
    s = compute_stats(doc, a)
    assert sum(x.images for x in s.splits.values()) == s.total.images == 10
    assert sum(x.objects for x in s.splits.values()) == s.total.objects == 23
    assert s.total.avg == 2.3
    assert "total" in s.table()
    with pytest.raises(DatasetError, match="not assigned"):
        compute_stats(doc, SplitAssignment(train=(1, 2), val=(), test=()))
    with pytest.raises(DatasetError, match="both"):
        compute_stats(doc, SplitAssignment(train=tuple(range(1, 11)), val=(1,), test=()))


def test_split_assignment_json():
    a = SplitAssignment((3, 1), (2,), (), seed=9)
    assert a.to_json() == {"seed": 9, "train": [1, 3], "val": [2], "test": []}
    assert SplitAssignment.from_json(a.to_json()) == SplitAssignment((1, 3), (2,), (), seed=9)
