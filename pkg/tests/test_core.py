import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovmot.core import BoundingBox, Detection, Track, TrackState, iou_2d, nms, unit

coords = st.floats(-100, 100, allow_nan=False)
sizes = st.floats(0.5, 50, allow_nan=False)
boxes = st.builds(BoundingBox, coords, coords, sizes, sizes)


def det(x, y, w, h, score, emb=(1.0, 0.0)):
    return Detection(BoundingBox(x, y, w, h), score, np.array(emb))


class TestBoundingBox:
    def test_rejects_non_positive_size(self):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 0, 1)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, 1, -2)

    def test_corner_roundtrip(self):
        b = BoundingBox.from_corners(1, 2, 5, 10)
        assert (b.x, b.y, b.w, b.h) == (3, 6, 4, 8)
        assert b.corners() == (1, 2, 5, 10)


class TestIoU:
    def test_identical(self):
        a = BoundingBox(0, 0, 2, 2)
        assert iou_2d(a, a) == 1.0

    def test_disjoint(self):
        assert iou_2d(BoundingBox(0, 0, 2, 2), BoundingBox(10, 10, 2, 2)) == 0.0

    def test_half_shift(self):
        # intersection 1x2 = 2, union 4 + 4 - 2 = 6
        assert iou_2d(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou_2d(a, b)
        assert v == iou_2d(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes, boxes, coords, coords)
    def test_translation_invariant(self, a, b, dx, dy):
        assert iou_2d(a.translated(dx, dy), b.translated(dx, dy)) == pytest.approx(iou_2d(a, b), abs=1e-9)


class TestNMS:
    def test_identical_boxes_keep_best(self):
        a, b = det(0, 0, 2, 2, 0.8), det(0, 0, 2, 2, 0.9)
        assert nms([a, b], 0.5) == [b]

    def test_disjoint_both_kept(self):
        a, b = det(0, 0, 2, 2, 0.9), det(10, 0, 2, 2, 0.8)
        assert nms([a, b], 0.5) == [a, b]

    def test_chain(self):
        # width 10, shift s: IoU = (10 - s) / (10 + s); s = 2.5 gives 0.6, s = 5 gives 1/3
        a = det(0, 0, 10, 1, 0.9)
        b = det(2.5, 0, 10, 1, 0.8)
        c = det(5, 0, 10, 1, 0.7)
        assert iou_2d(a.box, b.box) == pytest.approx(0.6)
        assert iou_2d(b.box, c.box) == pytest.approx(0.6)
        assert iou_2d(a.box, c.box) == pytest.approx(1 / 3)
        assert nms([a, b, c], 0.5) == [a, c]

    def test_tie_prefers_lower_index(self):
        a, b = det(0, 0, 2, 2, 0.5, (1, 0)), det(0, 0, 2, 2, 0.5, (0, 1))
        assert nms([a, b], 0.5)[0] is a
        assert nms([b, a], 0.5)[0] is b

    def test_class_aware(self):
        a, b = det(0, 0, 2, 2, 0.9), det(0, 0, 2, 2, 0.8)
        assert nms([a, b], 0.5, class_agnostic=False, class_of=[1, 2]) == [a, b]
        assert nms([a, b], 0.5, class_agnostic=False, class_of=[1, 1]) == [a]
        with pytest.raises(ValueError):
            nms([a, b], 0.5, class_agnostic=False)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(boxes, st.floats(0, 1)), max_size=12), st.floats(0.05, 0.95))
    def test_subset_idempotent_and_separated(self, items, thr):
        dets = [Detection(b, s, np.array([1.0, 0.0])) for b, s in items]
        kept = nms(dets, thr)
        assert all(any(k is d for d in dets) for k in kept)
        assert nms(kept, thr) == kept
        for i, p in enumerate(kept):
            for q in kept[i + 1 :]:
                assert iou_2d(p.box, q.box) <= thr


class TestDetection:
    def test_normalised_at_ingest(self):
        d = Detection(BoundingBox(0, 0, 1, 1), 0.5, np.array([3.0, 4.0]), np.array([0.0, 2.0]))
        assert np.linalg.norm(d.appearance) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(d.text_embed, [0, 1])

    def test_score_range(self):
        with pytest.raises(ValueError):
            Detection(BoundingBox(0, 0, 1, 1), 1.5, np.array([1.0]))

    def test_zero_embedding_rejected(self):
        with pytest.raises(ValueError):
            Detection(BoundingBox(0, 0, 1, 1), 0.5, np.zeros(3))

    def test_unit_is_idempotent(self, rng):
        for _ in range(100):
            v = unit(rng.normal(size=16))
            assert np.array_equal(unit(v), v)


def test_track_memory_bounded_and_ordered():
    t = Track(id=0, memory_frames=3)
    for f in range(6):
        t.add_state(f, TrackState(BoundingBox(0, 0, 1, 1), 0.5, 1), np.array([1.0]))
    assert len(t.memory) == 3
    assert [f for f, _ in t.memory] == [3, 4, 5]
    assert t.last_seen == 5
    with pytest.raises(ValueError):
        t.add_state(5, TrackState(BoundingBox(0, 0, 1, 1), 0.5, 1))
