"""Brute-force TETA for tiny instances.

Independent of :mod:`ovmot.metrics`: its own IoU, exhaustive enumeration
of every one-to-one matching per frame, and direct counting over lists.
Used as a test oracle only.
"""
import math

from .core import Track
from .metrics import TetaConfig, TetaScores

MAX_TRACKS = 4
MAX_FRAMES = 6


def _iou(a, b):
    ax1, ax2 = a.x - a.w / 2.0, a.x + a.w / 2.0
    ay1, ay2 = a.y - a.h / 2.0, a.y + a.h / 2.0
    bx1, bx2 = b.x - b.w / 2.0, b.x + b.w / 2.0
    by1, by2 = b.y - b.h / 2.0, b.y + b.h / 2.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0.0 else 0.0


def _all_matchings(n_pred, n_gt, allowed):
    """Yield every partial matching as a tuple of (pred, gt) pairs."""

    def rec(i, used):
        if i == n_pred:
            yield ()
            return
        yield from rec(i + 1, used)
        for j in range(n_gt):
            if j not in used and (i, j) in allowed:
                for rest in rec(i + 1, used | {j}):
                    yield ((i, j),) + rest

    yield from rec(0, frozenset())


def _best_matching(preds, gts, thr):
    ious = {}
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = _iou(p["box"], g["box"])
            if v >= thr and v > 0.0:
                ious[(i, j)] = v
    best, best_total = (), -1.0
    for m in _all_matchings(len(preds), len(gts), ious):
        total = math.fsum(ious[pair] for pair in m)
        if total > best_total:
            best, best_total = m, total
    return best


def _records(tracks):
    out = []
    for t in tracks:
        if isinstance(t, Track):
            for f, s in t.states.items():
                out.append({"video": t.video, "frame": f, "tid": t.id, "box": s.box, "cls": s.class_id})
        else:
            out.append({"video": t.video, "frame": t.frame, "tid": t.track_id, "box": t.box, "cls": t.class_id})
    return out


def _sort_key(r):
    return (r["video"], r["frame"], r["tid"], r["box"].x, r["box"].y, r["box"].w, r["box"].h)


def brute_force_teta(tracks, gt, vocab=None, cfg=TetaConfig()):
    preds = _records(list(tracks))
    gts = [{"video": a.video, "frame": a.frame, "tid": a.track_id, "box": a.box, "cls": a.class_id} for a in gt]
    videos = {g["video"] for g in gts}
    if gts and any(p["video"] not in videos for p in preds):
        raise ValueError("predictions reference videos absent from the ground truth")
    for side in (preds, gts):
        for v in {r["video"] for r in side}:
            ids = {r["tid"] for r in side if r["video"] == v}
            frames = {r["frame"] for r in side if r["video"] == v}
            if len(ids) > MAX_TRACKS or len(frames) > MAX_FRAMES:
                raise ValueError("instance too large for brute-force enumeration")

    keys = sorted({(r["video"], r["frame"]) for r in preds + gts})
    tpl, fpl, fnl = [], [], []
    for key in keys:
        ps = sorted((p for p in preds if (p["video"], p["frame"]) == key), key=_sort_key)
        gs = sorted((g for g in gts if (g["video"], g["frame"]) == key), key=_sort_key)
        m = _best_matching(ps, gs, cfg.loc_iou_thr)
        for i, j in sorted(m):
            tpl.append((ps[i], gs[j]))
        fpl += [p for i, p in enumerate(ps) if all(i != a for a, _ in m)]
        fnl += [g for j, g in enumerate(gs) if all(j != b for _, b in m)]

    hota = cfg.assoc_counts == "hota_style"
    terms = []
    for p, g in tpl:
        same_p = [x for x in tpl if x[0]["video"] == p["video"] and x[0]["tid"] == p["tid"]]
        same_g = [x for x in tpl if x[1]["video"] == g["video"] and x[1]["tid"] == g["tid"]]
        tpa = sum(1 for x in same_p if x[1]["tid"] == g["tid"])
        fpa = len(same_p) - tpa
        fna = len(same_g) - tpa
        if hota:
            fpa += sum(1 for x in fpl if x["video"] == p["video"] and x["tid"] == p["tid"])
            fna += sum(1 for x in fnl if x["video"] == g["video"] and x["tid"] == g["tid"])
        terms.append((tpa, fpa, fna))

    splits = ["all"] if vocab is None else ["all", "base", "novel"]
    out = {}
    for split in splits:
        if split == "all":
            member = lambda c: True  # noqa: E731
        else:
            ids = {c.class_id for c in vocab.classes if c.split == split}
            member = lambda c, ids=ids: c in ids  # noqa: E731
        chosen = [k for k, (_, g) in enumerate(tpl) if member(g["cls"])]
        s = TetaScores()
        s.tpl = len(chosen)
        s.fpl = len([p for p in fpl if member(p["cls"])])
        s.fnl = len([g for g in fnl if member(g["cls"])])
        s.empty = s.tpl + s.fpl + s.fnl == 0
        total = s.tpl + s.fpl + s.fnl
        s.loc_a = s.tpl / total if total else 0.0
        s.assoc_terms = [terms[k] for k in chosen]
        if chosen:
            s.assoc_a = math.fsum(a / (a + b + c) for a, b, c in s.assoc_terms) / len(chosen)
        s.tpc = len([k for k in chosen if tpl[k][0]["cls"] == tpl[k][1]["cls"]])
        s.fpc = s.fnc = s.tpl - s.tpc
        den = s.tpc + s.fpc + s.fnc
        s.cls_a = s.tpc / den if den else 0.0
        s.teta = (s.loc_a + s.assoc_a + s.cls_a) / 3.0
        out[split] = s
    return out
