"""Appearance-only association: bi-softmax matching, track memory, temporal voting."""
from collections import Counter
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .core import BACKGROUND_ID, TrackState, Track, boxes_to_array, nms_indices
from .vocab import ClassifierConfig, classify


@dataclass(frozen=True)
class AssociationConfig:
    """Inference thresholds.

    ``beta`` gates the bi-softmax match score, ``beta_obj`` the detection
    score needed to continue an existing track, ``gamma`` the score needed to
    start a new one. ``cosine_gate`` is a second, conjunctive match filter.
    ``match_temperature`` divides the embedding dot products inside the
    bi-softmax; with unit-norm embeddings and a temperature of 1 the best
    attainable score falls below 0.5 once four or more objects are present.
    """

    beta: float = 0.5
    beta_obj: float = 0.3
    gamma: float = 1e-4
    memory_frames: int = 10
    cosine_gate: float = 0.3
    nms_iou: float = 0.5
    class_agnostic_nms: bool = True
    match_temperature: float = 0.07

    def __post_init__(self):
        for name in ("beta", "beta_obj", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not -1.0 <= self.cosine_gate <= 1.0:
            raise ValueError("cosine_gate must lie in [-1, 1]")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ValueError("nms_iou must lie in (0, 1]")
        if self.memory_frames <= 0:
            raise ValueError("memory_frames must be positive")
        if not self.match_temperature > 0:
            raise ValueError("match_temperature must be positive")


@dataclass
class TrackStore:
    """All tracks of one video. Ids are handed out sequentially and never reused."""

    video: str = ""
    tracks: dict = field(default_factory=dict)
    next_id: int = 0
    last_frame: int = -1

    def active(self, frame, memory_frames):
        """Tracks still matchable at ``frame``: absent for at most ``memory_frames`` frames."""
        return [t for t in self.tracks.values() if frame - t.last_seen - 1 <= memory_frames]

    def create(self, memory_frames):
        track = Track(id=self.next_id, video=self.video, memory_frames=memory_frames)
        self.tracks[track.id] = track
        self.next_id += 1
        return track


@dataclass
class FrameAssignment:
    """Outcome per input detection index."""

    matched: dict = field(default_factory=dict)
    created: dict = field(default_factory=dict)
    discarded: list = field(default_factory=list)
    suppressed: list = field(default_factory=list)

    def track_of(self, det_index):
        if det_index in self.matched:
            return self.matched[det_index]
        return self.created.get(det_index)


def cosine(q1, q2):
    a = np.asarray(q1, dtype=np.float64).ravel()
    b = np.asarray(q2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("cosine needs vectors of equal dimension")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def bisoftmax_scores(dets, tracks, scale=1.0):
    """Bi-softmax matrix ``s[track, det]``.

    ``s = 0.5 * (softmax over detections + softmax over tracks)`` of the
    dot products ``q_det . q_track`` (multiplied by ``scale``).
    """
    if len(dets) == 0 or len(tracks) == 0:
        return np.zeros((len(tracks), len(dets)))
    det = np.ascontiguousarray(np.asarray(dets, dtype=np.float64).reshape(len(dets), -1))
    trk = np.ascontiguousarray(np.asarray(tracks, dtype=np.float64).reshape(len(tracks), -1))
    if det.shape[1] != trk.shape[1]:
        raise ValueError("detection and track embeddings must share a dimension")
    return kernels.bisoftmax(det, trk, float(scale))


def associate_frame(store, dets, frame, cfg=AssociationConfig(), classes=None, class_confs=None):
    """Associate one frame of detections into ``store`` (mutated in place).

    ``classes``/``class_confs`` optionally give the per-detection class label
    and its probability; they feed class-aware NMS and the voting history.
    """
    dets = list(dets)
    if frame <= store.last_frame:
        raise ValueError(f"frame {frame} is not after the last processed frame {store.last_frame}")
    store.last_frame = frame
    report = FrameAssignment()
    if not dets:
        return report
    if classes is None:
        classes = [BACKGROUND_ID] * len(dets)

    nms_classes = None if cfg.class_agnostic_nms else classes
    kept = nms_indices(boxes_to_array([d.box for d in dets]), [d.score for d in dets], cfg.nms_iou, nms_classes)
    kept_set = set(kept)
    report.suppressed = [i for i in range(len(dets)) if i not in kept_set]
    # kept is already in descending-score order; all later float work follows it
    order = kept

    active = sorted(store.active(frame, cfg.memory_frames), key=lambda t: t.id)
    if active:
        det_emb = np.vstack([dets[i].appearance for i in order])
        trk_emb = np.vstack([t.latest_embedding() for t in active])
        scores = bisoftmax_scores(det_emb, trk_emb, 1.0 / cfg.match_temperature)
        cosines = trk_emb @ det_emb.T
    consumed = set()

    for col, i in enumerate(order):
        det = dets[i]
        target = None
        if active:
            best, best_s = None, -math.inf
            for row, track in enumerate(active):
                if row in consumed:
                    continue
                if scores[row, col] > best_s:
                    best, best_s = row, scores[row, col]
            if (
                best is not None
                and best_s > cfg.beta
                and cosines[best, col] > cfg.cosine_gate
                and det.score > cfg.beta_obj
            ):
                consumed.add(best)
                target = active[best]
                report.matched[i] = target.id
        if target is None:
            if det.score > cfg.gamma:
                target = store.create(cfg.memory_frames)
                report.created[i] = target.id
            else:
                report.discarded.append(i)
                continue
        conf = None if class_confs is None else class_confs[i]
        target.add_state(frame, TrackState(det.box, det.score, classes[i]), det.appearance, conf)
    return report


def temporal_vote(track):
    """Majority class over the track's per-frame classifications.

    Ties go to the higher mean class confidence, then to the lower class id.
    Returns ``(class_id, track_confidence)`` where the confidence is the mean
    detection score over the track's states.
    """
    history = track.class_history
    if not history:
        raise ValueError(f"track {track.id} has no class history")
    counts = Counter(c for _, c, _ in history)
    confs = {}
    for _, c, p in history:
        confs.setdefault(c, []).append(p)
    mean_conf = {c: math.fsum(v) / len(v) for c, v in confs.items()}
    winner = min(counts, key=lambda c: (-counts[c], -mean_conf[c], c))
    if track.states:
        confidence = track.mean_score()
    else:
        confidence = mean_conf[winner]
    return winner, confidence


def _finalise(track):
    if track.class_history:
        cls, conf = temporal_vote(track)
    else:
        cls, conf = BACKGROUND_ID, track.mean_score()
    track.class_id = cls
    track.confidence = conf
    for f, s in list(track.states.items()):
        if s.class_id != cls:
            track.states[f] = TrackState(s.box, s.score, cls)


def track_video(frames, vocab=None, cls_cfg=ClassifierConfig(), assoc_cfg=AssociationConfig(), video=None):
    """Run the full inference loop over one video.

    ``frames`` is a sequence of ``(frame_index, detections)`` pairs or plain
    detection lists (then the position is the frame index). Returns the
    tracks with at least one state, ordered by id, with classes fixed by
    temporal voting.
    """
    store = TrackStore(video="" if video is None else video)
    for pos, item in enumerate(frames):
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], (int, np.integer)):
            frame, dets = int(item[0]), list(item[1])
        else:
            frame, dets = pos, list(item)
        if video is None and dets:
            store.video = dets[0].video
        classes = [BACKGROUND_ID] * len(dets)
        confs = [None] * len(dets)
        if vocab is not None:
            for i, d in enumerate(dets):
                if d.text_embed is not None:
                    probs, cid = classify(d.text_embed, vocab, cls_cfg)
                    classes[i] = cid
                    confs[i] = float(probs[vocab.index_of(cid)])
        associate_frame(store, dets, frame, assoc_cfg, classes, None if vocab is None else confs)
    out = []
    for tid in sorted(store.tracks):
        track = store.tracks[tid]
        if not track.states:
            continue
        _finalise(track)
        out.append(track)
    return out


__all__ = [
    "AssociationConfig",
    "TrackStore",
    "FrameAssignment",
    "cosine",
    "bisoftmax_scores",
    "associate_frame",
    "temporal_vote",
    "track_video",
]
