"""TETA and Track-mAP evaluation with base/novel split reporting."""
from collections import defaultdict
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .core import Track, boxes_to_array

SPLITS = ("all", "base", "novel")
ASSOC_MODES = ("hota_style", "tpl_only")


@dataclass(frozen=True)
class TetaConfig:
    loc_iou_thr: float = 0.5
    assoc_counts: str = "hota_style"

    def __post_init__(self):
        if not 0.0 < self.loc_iou_thr <= 1.0:
            raise ValueError("loc_iou_thr must lie in (0, 1]")
        if self.assoc_counts not in ASSOC_MODES:
            raise ValueError(f"assoc_counts must be one of {ASSOC_MODES}")


@dataclass
class TetaScores:
    loc_a: float = 0.0
    assoc_a: float = 0.0
    cls_a: float = 0.0
    teta: float = 0.0
    tpl: int = 0
    fpl: int = 0
    fnl: int = 0
    tpc: int = 0
    fpc: int = 0
    fnc: int = 0
    # one (TPA, FPA, FNA) triple per TPL, in canonical TPL order
    assoc_terms: list = field(default_factory=list)
    empty: bool = False

    def as_dict(self):
        return {
            "TETA": self.teta,
            "LocA": self.loc_a,
            "AssocA": self.assoc_a,
            "ClsA": self.cls_a,
            "TPL": self.tpl,
            "FPL": self.fpl,
            "FNL": self.fnl,
            "TPC": self.tpc,
            "FPC": self.fpc,
            "FNC": self.fnc,
            "empty": self.empty,
        }


@dataclass
class TrackMapScores:
    # threshold -> {class_id: AP}
    per_class: dict = field(default_factory=dict)
    per_threshold: dict = field(default_factory=dict)
    map50: float | None = None
    map75: float | None = None
    map: float = 0.0
    empty: bool = False

    def as_dict(self):
        return {
            "mAP": self.map,
            "mAP50": self.map50,
            "mAP75": self.map75,
            "per_threshold": {f"{t:g}": v for t, v in self.per_threshold.items()},
            "per_class": {f"{t:g}": {str(c): ap for c, ap in sorted(v.items())} for t, v in self.per_class.items()},
            "empty": self.empty,
        }


@dataclass(frozen=True)
class PredRow:
    """One predicted box: a track state flattened for evaluation."""

    video: str
    frame: int
    track_id: int
    box: object
    class_id: int
    score: float = 1.0


def pred_rows(tracks):
    rows = []
    for t in tracks:
        for frame, s in t.states.items():
            rows.append(PredRow(t.video, frame, t.id, s.box, s.class_id, s.score))
    return rows


def _score_ratio(num, den):
    return num / den if den > 0 else 0.0


def _finish(s):
    s.teta = (s.loc_a + s.assoc_a + s.cls_a) / 3.0
    return s


# ---------------------------------------------------------------------------
# per-frame matching
# ---------------------------------------------------------------------------

def match_frame(preds, gts, thr):
    """Maximum-total-IoU one-to-one matching among pairs with IoU >= ``thr``.

    ``preds`` and ``gts`` are sequences of ``(box, id)`` (only the box is
    used). Returns sorted ``(pred_index, gt_index, iou)`` triples.
    """
    if len(preds) == 0 or len(gts) == 0:
        return []
    ious = kernels.iou_matrix(
        np.ascontiguousarray(boxes_to_array([p[0] for p in preds])),
        np.ascontiguousarray(boxes_to_array([g[0] for g in gts])),
    )
    weights = np.where(ious >= thr, ious, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    out = [(int(r), int(c), float(ious[r, c])) for r, c in zip(rows, cols) if weights[r, c] > 0.0]
    return sorted(out)


def _group(rows):
    by_frame = defaultdict(list)
    for r in rows:
        by_frame[(r.video, r.frame)].append(r)
    return by_frame


def _gt_rows(gt):
    return [PredRow(a.video, a.frame, a.track_id, a.box, a.class_id, 1.0) for a in gt]


def _check_videos(preds, gts):
    gt_videos = {g.video for g in gts}
    stray = sorted({p.video for p in preds} - gt_videos)
    if gts and stray:
        raise ValueError(f"predictions reference videos absent from the ground truth: {stray}")


def _canonical(rows):
    return sorted(rows, key=lambda r: (r.video, r.frame, r.track_id, r.box.x, r.box.y, r.box.w, r.box.h))


def _localise(preds, gts, thr):
    """Class-agnostic matching over all frames -> (tpl pairs, unmatched preds, unmatched gts)."""
    p_by = _group(preds)
    g_by = _group(gts)
    tpl, fpl, fnl = [], [], []
    for key in sorted(set(p_by) | set(g_by)):
        ps = _canonical(p_by.get(key, []))
        gs = _canonical(g_by.get(key, []))
        pairs = match_frame([(p.box, p.track_id) for p in ps], [(g.box, g.track_id) for g in gs], thr)
        mp = {i for i, _, _ in pairs}
        mg = {j for _, j, _ in pairs}
        tpl.extend((ps[i], gs[j]) for i, j, _ in pairs)
        fpl.extend(p for i, p in enumerate(ps) if i not in mp)
        fnl.extend(g for j, g in enumerate(gs) if j not in mg)
    return tpl, fpl, fnl


def _assoc_terms(tpl, fpl, fnl, hota_style):
    pair_count = defaultdict(int)
    pred_tpl = defaultdict(int)
    gt_tpl = defaultdict(int)
    for p, g in tpl:
        pk, gk = (p.video, p.track_id), (g.video, g.track_id)
        pair_count[(pk, gk)] += 1
        pred_tpl[pk] += 1
        gt_tpl[gk] += 1
    pred_unmatched = defaultdict(int)
    gt_unmatched = defaultdict(int)
    if hota_style:
        for p in fpl:
            pred_unmatched[(p.video, p.track_id)] += 1
        for g in fnl:
            gt_unmatched[(g.video, g.track_id)] += 1
    terms = []
    for p, g in tpl:
        pk, gk = (p.video, p.track_id), (g.video, g.track_id)
        tpa = pair_count[(pk, gk)]
        fpa = pred_tpl[pk] - tpa + pred_unmatched[pk]
        fna = gt_tpl[gk] - tpa + gt_unmatched[gk]
        terms.append((tpa, fpa, fna))
    return terms


def _scores_for(tpl, fpl, fnl, terms, keep_gt, keep_pred):
    idx = [i for i, (_, g) in enumerate(tpl) if keep_gt(g.class_id)]
    n_fpl = sum(1 for p in fpl if keep_pred(p.class_id))
    n_fnl = sum(1 for g in fnl if keep_gt(g.class_id))
    s = TetaScores(tpl=len(idx), fpl=n_fpl, fnl=n_fnl)
    s.empty = s.tpl + s.fpl + s.fnl == 0
    s.loc_a = _score_ratio(s.tpl, s.tpl + s.fpl + s.fnl)
    s.assoc_terms = [terms[i] for i in idx]
    if idx:
        s.assoc_a = math.fsum(a / (a + b + c) for a, b, c in s.assoc_terms) / len(idx)
    correct = sum(1 for i in idx if tpl[i][0].class_id == tpl[i][1].class_id)
    wrong = len(idx) - correct
    # a mislabelled TPL is a false positive for the predicted class and a
    # false negative for the true class
    s.tpc, s.fpc, s.fnc = correct, wrong, wrong
    s.cls_a = _score_ratio(s.tpc, s.tpc + s.fpc + s.fnc)
    return _finish(s)


def _split_filters(vocab, split):
    if split == "all":
        return (lambda c: True), (lambda c: True)
    ids = vocab.split_ids(split)
    return (lambda c: c in ids), (lambda c: c in ids)


def teta(tracks, gt, vocab=None, cfg=TetaConfig()):
    """TETA with its LocA / AssocA / ClsA components.

    Returns ``{"all": TetaScores, "base": ..., "novel": ...}``; the split
    entries are present only when a vocabulary is given. ``tracks`` may be
    :class:`Track` objects or :class:`PredRow` records.
    """
    preds = _as_rows(tracks)
    gts = _gt_rows(gt)
    _check_videos(preds, gts)
    tpl, fpl, fnl = _localise(preds, gts, cfg.loc_iou_thr)
    terms = _assoc_terms(tpl, fpl, fnl, cfg.assoc_counts == "hota_style")
    out = {}
    for split in SPLITS if vocab is not None else ("all",):
        keep_gt, keep_pred = _split_filters(vocab, split)
        out[split] = _scores_for(tpl, fpl, fnl, terms, keep_gt, keep_pred)
    return out


def _as_rows(tracks):
    tracks = list(tracks)
    if tracks and isinstance(tracks[0], Track):
        return pred_rows(tracks)
    return tracks


# ---------------------------------------------------------------------------
# spatio-temporal IoU and Track-mAP
# ---------------------------------------------------------------------------

def _frame_boxes(obj):
    if isinstance(obj, Track):
        return {f: s.box for f, s in obj.states.items()}
    if isinstance(obj, dict):
        return obj
    return {a.frame: a.box for a in obj}


def iou_3d(pred, gt):
    """Summed per-frame intersection over summed per-frame union.

    ``pred`` and ``gt`` are tracks, ``{frame: box}`` dicts, or sequences of
    annotations. A frame covered by one side only adds that box's area to
    the union.
    """
    a = _frame_boxes(pred)
    b = _frame_boxes(gt)
    frames = sorted(set(a) | set(b))
    if not frames:
        return 0.0
    arr_a = np.zeros((len(frames), 4))
    arr_b = np.zeros((len(frames), 4))
    for i, f in enumerate(frames):
        if f in a:
            arr_a[i] = a[f].as_list()
        if f in b:
            arr_b[i] = b[f].as_list()
    return float(kernels.iou_3d_aligned(arr_a, arr_b))


@dataclass
class _Tube:
    video: str
    track_id: int
    class_id: int
    score: float
    boxes: dict


def _pred_tubes(tracks):
    if tracks and isinstance(tracks[0], Track):
        return [
            _Tube(t.video, t.id, t.class_id, t.confidence if t.confidence else t.mean_score(), _frame_boxes(t))
            for t in tracks
        ]
    groups = defaultdict(list)
    for r in tracks:
        groups[(r.video, r.track_id)].append(r)
    tubes = []
    for (video, tid), rows in groups.items():
        classes = [r.class_id for r in rows]
        cls = max(sorted(set(classes)), key=classes.count)
        tubes.append(_Tube(video, tid, cls, math.fsum(r.score for r in rows) / len(rows), {r.frame: r.box for r in rows}))
    return tubes


def _gt_tubes(gt):
    groups = defaultdict(list)
    for a in gt:
        groups[(a.video, a.track_id)].append(a)
    tubes = []
    for (video, tid), annos in groups.items():
        classes = [a.class_id for a in annos]
        cls = max(sorted(set(classes)), key=classes.count)
        tubes.append(_Tube(video, tid, cls, 1.0, {a.frame: a.box for a in annos}))
    return tubes


def average_precision(tp_flags, n_gt):
    """All-point interpolated AP from TP/FP flags in ranked order."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=np.float64))
    if tp.size == 0:
        return 0.0
    recall = np.concatenate([[0.0], tp / n_gt])
    precision = np.concatenate([[0.0], tp / np.maximum(tp + fp, 1e-300)])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * envelope[1:]))


def track_map(tracks, gt, vocab=None, thresholds=(0.5, 0.75), class_filter="all"):
    """Track-level average precision per class using spatio-temporal IoU.

    Predictions of a class are ranked by track confidence and greedily
    matched to the unmatched ground-truth track of that class (same video)
    with the highest IoU at or above the threshold. mAP is the mean over
    classes present in the ground truth; ``map`` averages over thresholds.
    """
    tracks = list(tracks)
    preds = _pred_tubes(tracks)
    gts = _gt_tubes(list(gt))
    _check_videos(preds, gts)
    if class_filter != "all":
        if vocab is None:
            raise ValueError("a vocabulary is needed to filter by split")
        allowed = vocab.split_ids(class_filter)
        gts = [g for g in gts if g.class_id in allowed]
    classes = sorted({g.class_id for g in gts})
    out = TrackMapScores(empty=not classes)
    ious = {}
    for thr in thresholds:
        per_class = {}
        for c in classes:
            cg = [g for g in gts if g.class_id == c]
            cp = sorted(
                (p for p in preds if p.class_id == c),
                key=lambda p: (-p.score, p.video, p.track_id),
            )
            used = set()
            flags = []
            for p in cp:
                best, best_iou = None, -1.0
                for gi, g in enumerate(cg):
                    if gi in used or g.video != p.video:
                        continue
                    key = (p.video, p.track_id, g.track_id)
                    if key not in ious:
                        ious[key] = iou_3d(p.boxes, g.boxes)
                    v = ious[key]
                    if v >= thr and v > best_iou:
                        best, best_iou = gi, v
                if best is None:
                    flags.append(0)
                else:
                    used.add(best)
                    flags.append(1)
            per_class[c] = average_precision(flags, len(cg))
        out.per_class[thr] = per_class
        out.per_threshold[thr] = math.fsum(per_class.values()) / len(per_class) if per_class else 0.0
    for thr, v in out.per_threshold.items():
        if thr == 0.5:
            out.map50 = v
        elif thr == 0.75:
            out.map75 = v
    if out.per_threshold:
        out.map = math.fsum(out.per_threshold.values()) / len(out.per_threshold)
    return out
