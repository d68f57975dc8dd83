"""Shared value types and box-level primitives (IoU, NMS)."""
from collections import deque
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels

BACKGROUND_ID = -1


def unit(vec):
    """L2-normalise ``vec``; vectors already unit-norm to 1e-12 pass through untouched."""
    v = np.array(vec, dtype=np.float64).ravel()
    norm = float(np.sqrt(np.dot(v, v)))
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError("cannot normalise a zero or non-finite vector")
    if abs(norm - 1.0) > 1e-12:
        v = v / norm
    v.flags.writeable = False
    return v


def _frozen_array(vec):
    v = np.array(vec, dtype=np.float64).ravel()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center format: ``(x, y)`` is the center, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box coordinate {name} must be finite")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self):
        return self.w * self.h

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    def as_list(self):
        return [self.x, self.y, self.w, self.h]

    def translated(self, dx, dy):
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    @classmethod
    def from_corners(cls, x1, y1, x2, y2):
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def corners(self):
        return (self.x - self.w / 2.0, self.y - self.h / 2.0, self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True, eq=False)
class Detection:
    box: BoundingBox
    score: float
    appearance: np.ndarray
    text_embed: np.ndarray | None = None
    frame: int = 0
    video: str = ""

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")
        if self.frame < 0:
            raise ValueError("frame index must be non-negative")
        object.__setattr__(self, "appearance", unit(self.appearance))
        if self.text_embed is not None:
            object.__setattr__(self, "text_embed", unit(self.text_embed))

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        same_text = (self.text_embed is None and other.text_embed is None) or (
            self.text_embed is not None
            and other.text_embed is not None
            and np.array_equal(self.text_embed, other.text_embed)
        )
        return (
            self.box == other.box
            and self.score == other.score
            and self.frame == other.frame
            and self.video == other.video
            and np.array_equal(self.appearance, other.appearance)
            and same_text
        )

    __hash__ = object.__hash__


@dataclass(frozen=True)
class TrackState:
    box: BoundingBox
    score: float
    class_id: int = BACKGROUND_ID


@dataclass(frozen=True)
class Annotation:
    track_id: int
    video: str
    frame: int
    box: BoundingBox
    class_id: int


@dataclass(eq=False)
class Track:
    """One tracked identity.

    ``states`` maps frame index to :class:`TrackState` and is appended in
    strictly increasing frame order. ``memory`` keeps the most recent
    ``(frame, embedding)`` pairs up to ``memory_frames`` entries.
    """

    id: int
    video: str = ""
    memory_frames: int = 10
    states: dict = field(default_factory=dict)
    memory: deque = field(default=None)
    class_history: list = field(default_factory=list)
    class_id: int = BACKGROUND_ID
    confidence: float = 0.0

    def __post_init__(self):
        if self.memory_frames <= 0:
            raise ValueError("memory_frames must be positive")
        if self.memory is None:
            self.memory = deque(maxlen=self.memory_frames)

    @property
    def last_seen(self):
        return next(reversed(self.states)) if self.states else -1

    @property
    def frames(self):
        return list(self.states)

    def add_state(self, frame, state, embedding=None, class_conf=None):
        if self.states and frame <= self.last_seen:
            raise ValueError(f"track {self.id}: frame {frame} not after last seen {self.last_seen}")
        self.states[frame] = state
        if embedding is not None:
            self.memory.append((frame, embedding))
        if class_conf is not None:
            self.class_history.append((frame, state.class_id, class_conf))

    def latest_embedding(self):
        return self.memory[-1][1]

    def mean_score(self):
        return math.fsum(s.score for s in self.states.values()) / len(self.states)


def iou_2d(a, b):
    """IoU of two :class:`BoundingBox` objects (center convention)."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (a.area + b.area - inter))


def boxes_to_array(boxes):
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.as_list() for b in boxes], dtype=np.float64)


def score_order(scores):
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def nms_indices(boxes, scores, iou_thr, classes=None):
    """Greedy NMS over arrays; returns surviving indices in descending-score order."""
    n = len(scores)
    if n == 0:
        return []
    order = score_order(list(scores))
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)[order]
    if classes is None:
        cls = np.zeros(n, dtype=np.int64)
    else:
        cls = np.asarray(classes, dtype=np.int64)[order]
    keep = kernels.nms_sorted(np.ascontiguousarray(arr), cls, float(iou_thr))
    return [order[i] for i in range(n) if keep[i]]


def nms(dets, iou_thr, class_agnostic=True, class_of=None):
    """Greedy non-maximum suppression.

    Detections are visited by descending score (ties: lower input index
    first) and any later detection with IoU above ``iou_thr`` against a
    survivor is dropped. With ``class_agnostic=False``, ``class_of`` gives one
    class id per detection (sequence aligned with ``dets`` or a callable) and
    suppression only happens within a class.
    """
    dets = list(dets)
    classes = None
    if not class_agnostic:
        if class_of is None:
            raise ValueError("class-aware NMS needs class_of")
        classes = [class_of(d) for d in dets] if callable(class_of) else list(class_of)
        if len(classes) != len(dets):
            raise ValueError("class_of must supply one class per detection")
    keep = nms_indices(boxes_to_array([d.box for d in dets]), [d.score for d in dets], iou_thr, classes)
    return [dets[i] for i in keep]
