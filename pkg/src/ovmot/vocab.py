"""Open-vocabulary classification over user-supplied text embeddings."""
from dataclasses import dataclass, field
import math

import numpy as np

from .core import BACKGROUND_ID, unit

BASE = "base"
NOVEL = "novel"


@dataclass(frozen=True, eq=False)
class VocabClass:
    class_id: int
    name: str
    embed: np.ndarray
    split: str = BASE

    def __post_init__(self):
        if self.class_id == BACKGROUND_ID:
            raise ValueError(f"class id {BACKGROUND_ID} is reserved for background")
        if self.split not in (BASE, NOVEL):
            raise ValueError(f"split must be 'base' or 'novel', got {self.split!r}")
        object.__setattr__(self, "embed", unit(self.embed))

    def __eq__(self, other):
        if not isinstance(other, VocabClass):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and self.name == other.name
            and self.split == other.split
            and np.array_equal(self.embed, other.embed)
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class ClassVocabulary:
    """Ordered class embeddings plus the background embedding.

    Affinity vectors put background at index 0 and then follow ``classes``
    in order.
    """

    classes: tuple
    background_embed: np.ndarray
    _matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        bg = unit(self.background_embed)
        object.__setattr__(self, "background_embed", bg)
        ids = [c.class_id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise ValueError("class ids must be unique")
        for c in self.classes:
            if c.embed.shape != bg.shape:
                raise ValueError(
                    f"class {c.class_id} embedding has dimension {c.embed.shape[0]}, expected {bg.shape[0]}"
                )
        mat = np.vstack([bg] + [c.embed for c in self.classes])
        mat.flags.writeable = False
        object.__setattr__(self, "_matrix", mat)

    def __eq__(self, other):
        if not isinstance(other, ClassVocabulary):
            return NotImplemented
        return self.classes == other.classes and np.array_equal(self.background_embed, other.background_embed)

    __hash__ = object.__hash__

    @property
    def dim(self):
        return self.background_embed.shape[0]

    @property
    def ids(self):
        """Label ids in affinity order (background first)."""
        return [BACKGROUND_ID] + [c.class_id for c in self.classes]

    def index_of(self, class_id):
        for i, cid in enumerate(self.ids):
            if cid == class_id:
                return i
        raise KeyError(class_id)

    def split_of(self, class_id):
        for c in self.classes:
            if c.class_id == class_id:
                return c.split
        return None

    def split_ids(self, split):
        if split == "all":
            return {c.class_id for c in self.classes}
        return {c.class_id for c in self.classes if c.split == split}

    def __contains__(self, class_id):
        return any(c.class_id == class_id for c in self.classes)


@dataclass(frozen=True)
class ClassifierConfig:
    temperature: float = 0.07

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True, eq=False)
class DistillSample:
    text_pred: np.ndarray
    image_pred: np.ndarray
    image_teacher: np.ndarray
    label: int = BACKGROUND_ID


def class_affinities(t_hat, vocab):
    """Cosine similarity of ``t_hat`` to ``[background, class_1, ...]``."""
    t = np.asarray(t_hat, dtype=np.float64).ravel()
    if t.shape[0] != vocab.dim:
        raise ValueError(f"text embedding has dimension {t.shape[0]}, vocabulary uses {vocab.dim}")
    norm = np.linalg.norm(t)
    if norm == 0:
        raise ValueError("text embedding must be non-zero")
    z = vocab._matrix @ (t / norm)
    return np.clip(z, -1.0, 1.0)


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def classify(t_hat, vocab, cfg=ClassifierConfig()):
    """Temperature softmax over affinities.

    Returns ``(probs, class_id)``; ``class_id`` is ``BACKGROUND_ID`` when the
    background entry wins. Ties go to the lower index.
    """
    z = class_affinities(t_hat, vocab)
    probs = np.exp(_log_softmax(z / cfg.temperature))
    probs /= probs.sum()
    return probs, vocab.ids[int(np.argmax(z))]


def loss_text(batch, vocab, cfg=ClassifierConfig()):
    batch = list(batch)
    if not batch:
        raise ValueError("loss_text needs a non-empty batch")
    terms = []
    for sample in batch:
        try:
            idx = vocab.index_of(sample.label)
        except KeyError:
            raise ValueError(f"label {sample.label} is not in the vocabulary") from None
        logp = _log_softmax(class_affinities(sample.text_pred, vocab) / cfg.temperature)
        terms.append(-logp[idx])
    return math.fsum(terms) / len(terms)


def loss_image(batch):
    """Batch mean of the per-sample L1 norm ``|image_pred - image_teacher|_1``."""
    batch = list(batch)
    if not batch:
        raise ValueError("loss_image needs a non-empty batch")
    terms = []
    for sample in batch:
        pred = np.asarray(sample.image_pred, dtype=np.float64)
        teacher = np.asarray(sample.image_teacher, dtype=np.float64)
        if pred.shape != teacher.shape:
            raise ValueError("image_pred and image_teacher must share a shape")
        terms.append(float(np.sum(np.abs(pred - teacher))))
    return math.fsum(terms) / len(terms)
