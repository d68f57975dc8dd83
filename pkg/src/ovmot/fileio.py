"""File formats: detection/track JSONL, vocabulary and ground-truth JSON, raw latent grids.

Floats are written with Python's shortest round-trip repr, so reading a
written file gives back bit-identical values.
"""
from dataclasses import dataclass
import json
import struct

import numpy as np

from .core import Annotation, BoundingBox, Detection
from .metrics import PredRow
from .vocab import ClassVocabulary, VocabClass

GRID_MAGIC = b"OVTG"
_HEADER = struct.Struct("<4sIII")


class InputError(ValueError):
    """Malformed input; the CLI maps it to exit code 2."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class SemanticError(ValueError):
    """Well-formed but inconsistent input (dimension or id mismatch); exit code 3."""


@dataclass
class FrameRecord:
    video: str
    frame: int
    detections: list


# ---------------------------------------------------------------------------
# box conventions
# ---------------------------------------------------------------------------

def xyxy_to_box(x1, y1, x2, y2):
    return BoundingBox.from_corners(x1, y1, x2, y2)


def tlwh_to_box(left, top, w, h):
    return BoundingBox(left + w / 2.0, top + h / 2.0, w, h)


def box_to_tlwh(box):
    return [box.x - box.w / 2.0, box.y - box.h / 2.0, box.w, box.h]


# ---------------------------------------------------------------------------
# field helpers
# ---------------------------------------------------------------------------

def _dumps(obj, **kw):
    return json.dumps(obj, allow_nan=False, **kw)


def _int(obj, key, ctx):
    v = obj.get(key) if isinstance(obj, dict) else None
    if isinstance(v, bool) or not isinstance(v, int):
        raise InputError(f"field {key!r} must be an integer", **ctx)
    return v


def _num(obj, key, ctx):
    v = obj.get(key) if isinstance(obj, dict) else None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"field {key!r} must be a number", **ctx)
    return float(v)


def _str(obj, key, ctx):
    v = obj.get(key) if isinstance(obj, dict) else None
    if not isinstance(v, str):
        raise InputError(f"field {key!r} must be a string", **ctx)
    return v


def _vec(v, key, ctx):
    if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise InputError(f"field {key!r} must be a non-empty list of numbers", **ctx)
    return np.array(v, dtype=np.float64)


def _box(v, ctx):
    if not isinstance(v, list) or len(v) != 4:
        raise InputError("bbox must be [x, y, w, h]", **ctx)
    try:
        return BoundingBox(*(float(x) for x in _vec(v, "bbox", ctx)))
    except ValueError as e:
        raise InputError(str(e), **ctx) from None


def _floats(arr):
    return [float(x) for x in np.asarray(arr).ravel()]


def _open_lines(path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                yield n, line


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise InputError(f"invalid JSON: {e.msg}", line=e.lineno, path=path) from None


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

def detection_to_json(d):
    out = {"bbox": d.box.as_list(), "score": d.score, "embed": _floats(d.appearance)}
    if d.text_embed is not None:
        out["text_embed"] = _floats(d.text_embed)
    return out


def write_detections(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {"video": r.video, "frame": r.frame, "detections": [detection_to_json(d) for d in r.detections]}
            fh.write(_dumps(row) + "\n")


def read_detections(path):
    """Parse a detection JSONL file into :class:`FrameRecord` objects (file order)."""
    records = []
    last_frame = {}
    dims = {}
    for n, line in _open_lines(path):
        ctx = {"line": n, "path": path}
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputError(f"invalid JSON: {e.msg}", **ctx) from None
        if not isinstance(obj, dict):
            raise InputError("each line must be a JSON object", **ctx)
        video = _str(obj, "video", ctx)
        frame = _int(obj, "frame", ctx)
        if frame < 0:
            raise InputError("frame must be non-negative", **ctx)
        if video in last_frame and frame <= last_frame[video]:
            raise InputError(f"frames of video {video!r} must be strictly increasing", **ctx)
        last_frame[video] = frame
        raw = obj.get("detections")
        if not isinstance(raw, list):
            raise InputError("field 'detections' must be a list", **ctx)
        dets = []
        for item in raw:
            if not isinstance(item, dict):
                raise InputError("each detection must be an object", **ctx)
            box = _box(item.get("bbox"), ctx)
            score = _num(item, "score", ctx)
            emb = _vec(item.get("embed"), "embed", ctx)
            text = item.get("text_embed")
            text = None if text is None else _vec(text, "text_embed", ctx)
            for key, vec in (("embed", emb), ("text_embed", text)):
                if vec is None:
                    continue
                if dims.setdefault(key, vec.shape[0]) != vec.shape[0]:
                    raise InputError(f"{key} dimension {vec.shape[0]} differs from {dims[key]}", **ctx)
            try:
                dets.append(Detection(box, score, emb, text, frame, video))
            except ValueError as e:
                raise InputError(str(e), **ctx) from None
        records.append(FrameRecord(video, frame, dets))
    return records


def group_by_video(records):
    """``{video: [(frame, detections), ...]}`` preserving first-appearance order."""
    out = {}
    for r in records:
        out.setdefault(r.video, []).append((r.frame, r.detections))
    return out


def records_from_scenario(scenario):
    return [FrameRecord(v, f, dets) for v, frames in scenario.detections.items() for f, dets in frames]


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

def vocab_to_json(vocab):
    return {
        "background_embed": _floats(vocab.background_embed),
        "classes": [
            {"id": c.class_id, "name": c.name, "embed": _floats(c.embed), "split": c.split} for c in vocab.classes
        ],
    }


def write_vocab(path, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(vocab_to_json(vocab), indent=1) + "\n")


def vocab_from_json(obj, path=None):
    ctx = {"path": path}
    if not isinstance(obj, dict) or not isinstance(obj.get("classes"), list):
        raise InputError("vocabulary must be an object with a 'classes' list", **ctx)
    bg = _vec(obj.get("background_embed"), "background_embed", ctx)
    classes = []
    for c in obj["classes"]:
        split = c.get("split", "base") if isinstance(c, dict) else None
        try:
            classes.append(VocabClass(_int(c, "id", ctx), _str(c, "name", ctx), _vec(c.get("embed"), "embed", ctx), split))
        except InputError:
            raise
        except ValueError as e:
            raise InputError(str(e), **ctx) from None
    try:
        return ClassVocabulary(classes, bg)
    except ValueError as e:
        raise InputError(str(e), **ctx) from None


def read_vocab(path):
    return vocab_from_json(_load_json(path), path)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def write_ground_truth(path, annotations, categories):
    obj = {
        "annotations": [
            {
                "track_id": a.track_id,
                "video": a.video,
                "frame": a.frame,
                "bbox": a.box.as_list(),
                "category_id": a.class_id,
            }
            for a in annotations
        ],
        "categories": [{"id": cid, "name": name} for cid, name in categories],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(obj, indent=1) + "\n")


def read_ground_truth(path):
    """Return ``(annotations, categories)`` with categories as ``(id, name)`` pairs."""
    obj = _load_json(path)
    ctx = {"path": path}
    if not isinstance(obj, dict) or not isinstance(obj.get("annotations"), list):
        raise InputError("ground truth must be an object with an 'annotations' list", **ctx)
    cats = [(_int(c, "id", ctx), _str(c, "name", ctx)) for c in obj.get("categories", [])]
    annos = []
    seen = set()
    for a in obj["annotations"]:
        anno = Annotation(
            _int(a, "track_id", ctx), _str(a, "video", ctx), _int(a, "frame", ctx), _box(a.get("bbox"), ctx),
            _int(a, "category_id", ctx),
        )
        key = (anno.video, anno.track_id, anno.frame)
        if key in seen:
            raise InputError(f"duplicate annotation for track {anno.track_id} at frame {anno.frame}", **ctx)
        seen.add(key)
        annos.append(anno)
    return annos, cats


def categories_from_vocab(vocab):
    return [(c.class_id, c.name) for c in vocab.classes]


# ---------------------------------------------------------------------------
# tracks
# ---------------------------------------------------------------------------

def track_rows(tracks):
    """Flatten tracks into output rows ordered by (video order, frame, track id)."""
    video_order = {}
    for t in tracks:
        video_order.setdefault(t.video, len(video_order))
    rows = [
        PredRow(t.video, f, t.id, s.box, s.class_id, s.score) for t in tracks for f, s in t.states.items()
    ]
    return sorted(rows, key=lambda r: (video_order[r.video], r.frame, r.track_id))


def write_tracks(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(
                _dumps(
                    {
                        "video": r.video,
                        "frame": r.frame,
                        "track_id": r.track_id,
                        "bbox": r.box.as_list(),
                        "score": r.score,
                        "category_id": r.class_id,
                    }
                )
                + "\n"
            )


def read_tracks(path):
    rows = []
    seen = set()
    for n, line in _open_lines(path):
        ctx = {"line": n, "path": path}
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise InputError(f"invalid JSON: {e.msg}", **ctx) from None
        row = PredRow(
            _str(obj, "video", ctx), _int(obj, "frame", ctx), _int(obj, "track_id", ctx), _box(obj.get("bbox"), ctx),
            _int(obj, "category_id", ctx), _num(obj, "score", ctx),
        )
        key = (row.video, row.frame, row.track_id)
        if key in seen:
            raise InputError(f"duplicate row for track {row.track_id} at frame {row.frame}", **ctx)
        seen.add(key)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# latent grids
# ---------------------------------------------------------------------------

def write_grid(path, grid):
    """Raw grid: 16-byte header (``OVTG``, u32 width, height, channels) + f32 LE row-major."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRID_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise InputError("grid file too short for its header", path=path)
    magic, w, h, c = _HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise InputError("not an OVTG grid file", path=path)
    body = data[_HEADER.size :]
    if len(body) != 4 * w * h * c:
        raise InputError(f"grid payload has {len(body)} bytes, expected {4 * w * h * c}", path=path)
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError("grid contains non-finite values", path=path)
    return arr


def read_png(path):
    """8-bit PNG -> float grid in [-1, 1] with shape (height, width, channels)."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr / 127.5 - 1.0


def write_png(path, grid):
    from PIL import Image

    arr = np.asarray(grid, dtype=np.float64)
    px = np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    if px.shape[2] == 1:
        px = px[:, :, 0]
    Image.fromarray(px).save(path)


def load_grid(path):
    return read_png(path) if str(path).lower().endswith(".png") else read_grid(path)


def save_grid(path, grid):
    if str(path).lower().endswith(".png"):
        write_png(path, grid)
    else:
        write_grid(path, grid)
