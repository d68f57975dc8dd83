"""Both kernel backends must agree with each other and with scalar references."""
import numpy as np
import pytest

from ovmot import kernels
from ovmot.core import BoundingBox, iou_2d


def random_boxes(rng, n):
    xy = rng.uniform(0, 50, size=(n, 2))
    wh = rng.uniform(1, 30, size=(n, 2))
    return np.hstack([xy, wh])


def test_iou_matrix_matches_scalar(backend, rng):
    iou_matrix = kernels.BACKENDS[backend][0]
    a, b = random_boxes(rng, 7), random_boxes(rng, 5)
    got = iou_matrix(a, b)
    want = np.array([[iou_2d(BoundingBox(*p), BoundingBox(*q)) for q in b] for p in a])
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_iou_matrix_empty(backend):
    iou_matrix = kernels.BACKENDS[backend][0]
    assert iou_matrix(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


def test_nms_backends_agree(rng):
    if "numba" not in kernels.BACKENDS:
        pytest.skip("numba not installed")
    for _ in range(50):
        boxes = random_boxes(rng, 20)
        classes = rng.integers(0, 3, size=20)
        a = kernels.nms_sorted_numpy(boxes, classes, 0.3)
        b = kernels.nms_sorted_numba(boxes, classes, 0.3)
        np.testing.assert_array_equal(a, b)


def test_bisoftmax_backends_agree(rng):
    for _ in range(20):
        det = rng.normal(size=(6, 8))
        trk = rng.normal(size=(4, 8))
        ref = kernels.bisoftmax_numpy(det, trk, 3.0)
        for name, fns in kernels.BACKENDS.items():
            np.testing.assert_allclose(fns[2](det, trk, 3.0), ref, rtol=1e-12, atol=1e-15, err_msg=name)


def test_iou_3d_backends_agree(rng):
    a = random_boxes(rng, 10)
    b = random_boxes(rng, 10)
    a[3, 2:] = 0.0  # absent frames
    b[5, 2:] = 0.0
    ref = kernels.iou_3d_aligned_numpy(a, b)
    for name, fns in kernels.BACKENDS.items():
        assert fns[3](a, b) == pytest.approx(ref, rel=1e-12), name


def test_iou_3d_nothing_present(backend):
    fn = kernels.BACKENDS[backend][3]
    assert fn(np.zeros((2, 4)), np.zeros((2, 4))) == 0.0
