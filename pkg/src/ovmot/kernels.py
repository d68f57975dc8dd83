"""Hot numeric kernels.

Every kernel exists twice: a loop version compiled by numba (``*_numba``,
None when numba is missing) and a vectorised numpy version (``*_numpy``).
The unsuffixed name is whichever backend ``_accel.USE_NUMBA`` selects.

Boxes are ``(n, 4)`` float64 arrays in center format ``[x, y, w, h]``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------------------
# pairwise IoU
# ---------------------------------------------------------------------------

def _iou_matrix_loops(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax1 = a[i, 0] - a[i, 2] / 2.0
        ax2 = a[i, 0] + a[i, 2] / 2.0
        ay1 = a[i, 1] - a[i, 3] / 2.0
        ay2 = a[i, 1] + a[i, 3] / 2.0
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bx1 = b[j, 0] - b[j, 2] / 2.0
            bx2 = b[j, 0] + b[j, 2] / 2.0
            by1 = b[j, 1] - b[j, 3] / 2.0
            by2 = b[j, 1] + b[j, 3] / 2.0
            iw = min(ax2, bx2) - max(ax1, bx1)
            ih = min(ay2, by2) - max(ay1, by1)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + b[j, 2] * b[j, 3] - inter
            if union > 0.0:
                out[i, j] = min(1.0, inter / union)
    return out


def iou_matrix_numpy(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    a1 = a[:, :2] - a[:, 2:] / 2.0
    a2 = a[:, :2] + a[:, 2:] / 2.0
    b1 = b[:, :2] - b[:, 2:] / 2.0
    b2 = b[:, :2] + b[:, 2:] / 2.0
    lo = np.maximum(a1[:, None, :], b1[None, :, :])
    hi = np.minimum(a2[:, None, :], b2[None, :, :])
    wh = hi - lo
    valid = (wh[..., 0] > 0.0) & (wh[..., 1] > 0.0)
    inter = np.where(valid, wh[..., 0] * wh[..., 1], 0.0)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(valid & (union > 0.0), np.minimum(inter / union, 1.0), 0.0)
    return out


iou_matrix_numba = njit(_iou_matrix_loops)


# ---------------------------------------------------------------------------
# greedy NMS over boxes already sorted by descending score
# ---------------------------------------------------------------------------

def _nms_sorted_loops(boxes, classes, thr):
    n = boxes.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not keep[i]:
            continue
        x1 = boxes[i, 0] - boxes[i, 2] / 2.0
        x2 = boxes[i, 0] + boxes[i, 2] / 2.0
        y1 = boxes[i, 1] - boxes[i, 3] / 2.0
        y2 = boxes[i, 1] + boxes[i, 3] / 2.0
        area_i = boxes[i, 2] * boxes[i, 3]
        for j in range(i + 1, n):
            if not keep[j] or classes[j] != classes[i]:
                continue
            iw = min(x2, boxes[j, 0] + boxes[j, 2] / 2.0) - max(x1, boxes[j, 0] - boxes[j, 2] / 2.0)
            ih = min(y2, boxes[j, 1] + boxes[j, 3] / 2.0) - max(y1, boxes[j, 1] - boxes[j, 3] / 2.0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_i + boxes[j, 2] * boxes[j, 3] - inter
            if inter / union > thr:
                keep[j] = False
    return keep


def nms_sorted_numpy(boxes, classes, thr):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes)
    n = boxes.shape[0]
    keep = np.ones(n, dtype=bool)
    if n == 0:
        return keep
    ious = iou_matrix_numpy(boxes, boxes)
    same = classes[:, None] == classes[None, :]
    later = np.arange(n)[None, :] > np.arange(n)[:, None]
    hits = (ious > thr) & same & later
    for i in range(n):
        if keep[i]:
            keep &= ~hits[i]
    return keep


nms_sorted_numba = njit(_nms_sorted_loops)


# ---------------------------------------------------------------------------
# bi-directional softmax
# ---------------------------------------------------------------------------

def _bisoftmax_loops(det, trk, scale):
    n = det.shape[0]
    m = trk.shape[0]
    logits = np.dot(trk, det.T) * scale
    out = np.empty((m, n))
    # softmax over detections for each track
    for t in range(m):
        mx = logits[t, 0]
        for r in range(1, n):
            if logits[t, r] > mx:
                mx = logits[t, r]
        z = 0.0
        for r in range(n):
            e = np.exp(logits[t, r] - mx)
            out[t, r] = e
            z += e
        for r in range(n):
            out[t, r] = 0.5 * out[t, r] / z
    # softmax over tracks for each detection; rows are walked in memory order
    col_max = logits[0].copy()
    for t in range(1, m):
        for r in range(n):
            if logits[t, r] > col_max[r]:
                col_max[r] = logits[t, r]
    col_z = np.zeros(n)
    for t in range(m):
        for r in range(n):
            e = np.exp(logits[t, r] - col_max[r])
            logits[t, r] = e
            col_z[r] += e
    for t in range(m):
        for r in range(n):
            out[t, r] += 0.5 * logits[t, r] / col_z[r]
    return out


def bisoftmax_numpy(det, trk, scale):
    logits = (np.asarray(trk, dtype=np.float64) @ np.asarray(det, dtype=np.float64).T) * scale
    over_det = np.exp(logits - logits.max(axis=1, keepdims=True))
    over_det /= over_det.sum(axis=1, keepdims=True)
    over_trk = np.exp(logits - logits.max(axis=0, keepdims=True))
    over_trk /= over_trk.sum(axis=0, keepdims=True)
    return 0.5 * over_det + 0.5 * over_trk


bisoftmax_numba = njit(_bisoftmax_loops)


# ---------------------------------------------------------------------------
# spatio-temporal IoU over frame-aligned box sequences
# ---------------------------------------------------------------------------

def _iou_3d_aligned_loops(a, b):
    # rows with w == 0 or h == 0 mean "absent in this frame"
    inter_sum = 0.0
    union_sum = 0.0
    for t in range(a.shape[0]):
        area_a = a[t, 2] * a[t, 3]
        area_b = b[t, 2] * b[t, 3]
        inter = 0.0
        if area_a > 0.0 and area_b > 0.0:
            iw = min(a[t, 0] + a[t, 2] / 2.0, b[t, 0] + b[t, 2] / 2.0) - max(
                a[t, 0] - a[t, 2] / 2.0, b[t, 0] - b[t, 2] / 2.0
            )
            ih = min(a[t, 1] + a[t, 3] / 2.0, b[t, 1] + b[t, 3] / 2.0) - max(
                a[t, 1] - a[t, 3] / 2.0, b[t, 1] - b[t, 3] / 2.0
            )
            if iw > 0.0 and ih > 0.0:
                inter = iw * ih
        inter_sum += inter
        union_sum += area_a + area_b - inter
    if union_sum <= 0.0:
        return 0.0
    return inter_sum / union_sum


def iou_3d_aligned_numpy(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    lo = np.maximum(a[:, :2] - a[:, 2:] / 2.0, b[:, :2] - b[:, 2:] / 2.0)
    hi = np.minimum(a[:, :2] + a[:, 2:] / 2.0, b[:, :2] + b[:, 2:] / 2.0)
    wh = hi - lo
    ok = (wh[:, 0] > 0.0) & (wh[:, 1] > 0.0) & (area_a > 0.0) & (area_b > 0.0)
    inter = np.where(ok, wh[:, 0] * wh[:, 1], 0.0)
    union_sum = float(np.sum(area_a + area_b - inter))
    if union_sum <= 0.0:
        return 0.0
    return float(np.sum(inter)) / union_sum


iou_3d_aligned_numba = njit(_iou_3d_aligned_loops)


if USE_NUMBA:
    iou_matrix = iou_matrix_numba
    nms_sorted = nms_sorted_numba
    bisoftmax = bisoftmax_numba
    iou_3d_aligned = iou_3d_aligned_numba
else:
    iou_matrix = iou_matrix_numpy
    nms_sorted = nms_sorted_numpy
    bisoftmax = bisoftmax_numpy
    iou_3d_aligned = iou_3d_aligned_numpy


BACKENDS = {"numpy": (iou_matrix_numpy, nms_sorted_numpy, bisoftmax_numpy, iou_3d_aligned_numpy)}
if iou_matrix_numba is not None:
    BACKENDS["numba"] = (iou_matrix_numba, nms_sorted_numba, bisoftmax_numba, iou_3d_aligned_numba)


def warmup():
    """Trigger JIT compilation of the numba kernels (no-op without numba)."""
    if iou_matrix_numba is None:
        return
    boxes = np.array([[0.0, 0.0, 2.0, 2.0], [1.0, 0.0, 2.0, 2.0]])
    iou_matrix_numba(boxes, boxes)
    nms_sorted_numba(boxes, np.zeros(2, dtype=np.int64), 0.5)
    emb = np.eye(2)
    bisoftmax_numba(emb, emb, 1.0)
    iou_3d_aligned_numba(boxes, boxes)
