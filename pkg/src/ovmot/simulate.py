"""Synthetic tracking scenarios with known identities, used as an end-to-end oracle."""
from dataclasses import dataclass, field

import numpy as np

from .association import AssociationConfig, track_video
from .core import Annotation, BoundingBox, Detection
from .metrics import TetaConfig, teta, track_map
from .vocab import BASE, NOVEL, ClassifierConfig, ClassVocabulary, VocabClass

LANE_HEIGHT = 100.0
MAX_BOX_HEIGHT = 80.0


@dataclass(frozen=True)
class ScenarioConfig:
    videos: int = 1
    frames_per_video: int = 20
    identities_per_video: int = 8
    embed_dim: int = 32
    text_dim: int = 16
    classes: int = 4
    embed_noise: float = 0.0
    text_noise: float = 0.05
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    box_jitter: float = 0.0
    occlusion_windows: tuple = ()
    seed: int = 0
    max_cos: float = 0.3
    min_score: float = 0.5
    fp_min_score: float = 1e-4

    def __post_init__(self):
        for name in ("videos", "frames_per_video", "identities_per_video", "embed_dim", "text_dim", "classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("fn_rate", "fp_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("embed_noise", "text_noise", "box_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        object.__setattr__(self, "occlusion_windows", tuple(tuple(int(v) for v in w) for w in self.occlusion_windows))


@dataclass
class Scenario:
    ground_truth: list
    detections: dict  # video -> list of (frame, [Detection])
    vocab: ClassVocabulary
    identity_latents: dict = field(default_factory=dict)  # (video, identity) -> unit vector
    config: ScenarioConfig | None = None

    @property
    def videos(self):
        return list(self.detections)


def _sphere(rng, n, dim):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def near_orthogonal(rng, n, dim, max_cos=0.3, max_tries=2000):
    """``n`` random unit vectors with all pairwise ``|cos| <= max_cos``.

    Candidates are drawn one at a time and redrawn when they violate the
    bound against the vectors accepted so far.
    """
    out = []
    for _ in range(n):
        for _ in range(max_tries):
            cand = _sphere(rng, 1, dim)[0]
            if all(abs(float(cand @ v)) <= max_cos for v in out):
                out.append(cand)
                break
        else:
            raise ValueError(
                f"cannot place {n} vectors in dimension {dim} with pairwise |cos| <= {max_cos}"
            )
    return np.array(out)


def make_vocab(rng, classes, dim, max_cos=0.3):
    embeds = near_orthogonal(rng, classes + 1, dim, max_cos)
    n_base = (classes + 1) // 2
    entries = [
        VocabClass(c, f"class_{c}", embeds[c + 1], BASE if c < n_base else NOVEL) for c in range(classes)
    ]
    return ClassVocabulary(entries, embeds[0])


def _occluded(cfg, identity, frame):
    return any(i == identity and start <= frame < start + length for i, start, length in cfg.occlusion_windows)


def _noisy_unit(rng, vec, sigma):
    if sigma == 0:
        return vec.copy()
    v = vec + sigma * rng.standard_normal(vec.shape)
    return v / np.linalg.norm(v)


def _video(cfg, vocab, video, rng):
    n_ids = cfg.identities_per_video
    latents = near_orthogonal(rng, n_ids, cfg.embed_dim, cfg.max_cos)
    classes = rng.integers(0, cfg.classes, size=n_ids)
    widths = rng.uniform(30.0, 120.0, size=n_ids)
    heights = rng.uniform(30.0, MAX_BOX_HEIGHT, size=n_ids)
    x0 = rng.uniform(100.0, 1100.0, size=n_ids)
    vx = rng.uniform(-8.0, 8.0, size=n_ids)
    # one horizontal lane per identity keeps distinct objects from overlapping
    lanes = (np.arange(n_ids) + 0.5) * LANE_HEIGHT
    annos = []
    frames = []
    for f in range(cfg.frames_per_video):
        dets = []
        for i in range(n_ids):
            if _occluded(cfg, i, f):
                continue
            box = BoundingBox(float(x0[i] + vx[i] * f), float(lanes[i]), float(widths[i]), float(heights[i]))
            annos.append(Annotation(i, video, f, box, int(classes[i])))
            if cfg.fn_rate > 0 and rng.random() < cfg.fn_rate:
                continue
            if cfg.box_jitter > 0:
                j = rng.normal(0.0, cfg.box_jitter, size=4)
                box = BoundingBox(box.x + j[0], box.y + j[1], max(box.w + j[2], 1.0), max(box.h + j[3], 1.0))
            dets.append(
                Detection(
                    box,
                    float(rng.uniform(cfg.min_score, 1.0)),
                    _noisy_unit(rng, latents[i], cfg.embed_noise),
                    _noisy_unit(rng, vocab.classes[int(classes[i])].embed, cfg.text_noise),
                    f,
                    video,
                )
            )
        if cfg.fp_rate > 0:
            for _ in range(int(rng.binomial(n_ids, cfg.fp_rate))):
                box = BoundingBox(
                    float(rng.uniform(0.0, 1280.0)),
                    float(rng.uniform(0.0, n_ids * LANE_HEIGHT)),
                    float(rng.uniform(20.0, 120.0)),
                    float(rng.uniform(20.0, MAX_BOX_HEIGHT)),
                )
                dets.append(
                    Detection(
                        box,
                        float(rng.uniform(cfg.fp_min_score, 1.0)),
                        _sphere(rng, 1, cfg.embed_dim)[0],
                        _sphere(rng, 1, cfg.text_dim)[0],
                        f,
                        video,
                    )
                )
        frames.append((f, dets))
    return annos, frames, {(video, i): latents[i] for i in range(n_ids)}


def generate_scenario(cfg):
    """Build a deterministic scenario from ``cfg``.

    Identities move on straight lines in separate lanes; appearance is the
    identity latent plus Gaussian noise, re-normalised. Per-video streams
    use independent child seeds.
    """
    root = np.random.SeedSequence(cfg.seed)
    vocab_seq, *video_seqs = root.spawn(cfg.videos + 1)
    vocab = make_vocab(np.random.default_rng(vocab_seq), cfg.classes, cfg.text_dim, cfg.max_cos)
    gt, dets, latents = [], {}, {}
    for v, seq in enumerate(video_seqs):
        name = f"video_{v:03d}"
        annos, frames, lat = _video(cfg, vocab, name, np.random.default_rng(seq))
        gt.extend(annos)
        dets[name] = frames
        latents.update(lat)
    return Scenario(gt, dets, vocab, latents, cfg)


def track_scenario(scenario, assoc_cfg=AssociationConfig(), cls_cfg=ClassifierConfig()):
    tracks = []
    for video, frames in scenario.detections.items():
        tracks.extend(track_video(frames, scenario.vocab, cls_cfg, assoc_cfg, video=video))
    return tracks


def run_end_to_end(cfg, assoc_cfg=AssociationConfig(), teta_cfg=TetaConfig(), cls_cfg=ClassifierConfig()):
    """generate -> track -> evaluate against the scenario's own ground truth."""
    scenario = generate_scenario(cfg)
    tracks = track_scenario(scenario, assoc_cfg, cls_cfg)
    return teta(tracks, scenario.ground_truth, scenario.vocab, teta_cfg), track_map(
        tracks, scenario.ground_truth, scenario.vocab
    )
