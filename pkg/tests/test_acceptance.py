"""Exit criteria of the build, one test per criterion.

A pass/fail line per criterion is printed in the terminal summary.
"""
import json
import time

import numpy as np
import pytest

from builders import (
    empty_fixture,
    id_swap_fixture,
    perfect_fixture,
    random_detection_records,
    random_ground_truth,
    random_tiny_instance,
    random_track_rows,
    random_vocabulary,
    tiny_vocab,
)
from ovmot import fileio, kernels
from ovmot.association import AssociationConfig, bisoftmax_scores, track_video
from ovmot.cli import main
from ovmot.core import BoundingBox, Detection
from ovmot.hallucination import (
    HallucConfig,
    NoiseSchedule,
    forward_noise_step,
    forward_noise_to,
    masked_denoise,
    reverse_from,
    toy_denoiser,
)
from ovmot.losses import check_aux_pair, check_track_instance, random_aux_pair, random_instance
from ovmot.metrics import teta
from ovmot.reference import brute_force_teta
from ovmot.simulate import ScenarioConfig, run_end_to_end
from ovmot.vocab import ClassifierConfig, ClassVocabulary, VocabClass, class_affinities, classify

E = np.e


@pytest.mark.acceptance(1, "metric oracle equivalence")
def test_metric_oracle_equivalence():
    t0 = time.perf_counter()
    vocab = tiny_vocab()
    for fixture in (perfect_fixture, empty_fixture, id_swap_fixture):
        preds, gt = fixture()
        assert teta(preds, gt, vocab) == brute_force_teta(preds, gt, vocab)
    assert teta(*perfect_fixture())["all"].teta == 1.0
    empty = teta(*empty_fixture())["all"]
    assert empty.loc_a == 0.0 and empty.teta == 0.0
    assert teta(*id_swap_fixture())["all"].assoc_a == pytest.approx(1 / 3, abs=1e-15)
    rng = np.random.default_rng(1)
    for _ in range(50):
        preds, gt = random_tiny_instance(rng)
        assert teta(preds, gt, vocab) == brute_force_teta(preds, gt, vocab)
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.acceptance(2, "perfect-pipeline fixed point")
def test_perfect_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out-dir", str(sim), "--seed", "0", "--videos", "5", "--frames", "20", "--identities", "8"]) == 0
    kernels.warmup()
    t0 = time.perf_counter()
    tracks, report = tmp_path / "tracks.jsonl", tmp_path / "report.json"
    vocab = str(sim / "vocab.json")
    assert main(["track", "--detections", str(sim / "detections.jsonl"), "--vocab", vocab, "--out", str(tracks)]) == 0
    assert main(["eval", "--tracks", str(tracks), "--gt", str(sim / "gt.json"), "--vocab", vocab, "--report", str(report)]) == 0
    elapsed = time.perf_counter() - t0
    rep = json.loads(report.read_text())
    for split, scores in rep["teta"].items():
        if scores["empty"]:
            continue
        for key in ("LocA", "AssocA", "ClsA", "TETA"):
            assert abs(scores[key] - 1.0) <= 1e-9, (split, key, scores[key])
    for split, scores in rep["trackmap"].items():
        if not scores["empty"]:
            assert abs(scores["mAP"] - 1.0) <= 1e-9, (split, scores)
    assert not rep["teta"]["all"]["empty"]
    assert elapsed < 5.0


@pytest.mark.acceptance(3, "gradient verification")
def test_gradient_verification():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_track = max(check_track_instance(random_instance(rng, max_dim=8, max_pos=3, max_neg=5), 1e-4) for _ in range(100))
    worst_aux = max(check_aux_pair(random_aux_pair(rng, max_dim=8), 1e-4) for _ in range(100))
    assert worst_track < 1e-4
    assert worst_aux < 1e-4
    assert time.perf_counter() - t0 < 5.0


def _gap_tracks(absent):
    q = np.array([0.0, 1.0, 0.0])
    visible = [1, 2, 3, 4 + absent]
    frames = [(f, [Detection(BoundingBox(50, 50, 20, 20), 0.9, q, frame=f)]) for f in visible]
    return track_video(frames, assoc_cfg=AssociationConfig(memory_frames=10))


@pytest.mark.acceptance(4, "re-identification across occlusion gaps")
def test_reidentification():
    assert len(_gap_tracks(10)) == 1
    assert len(_gap_tracks(11)) == 2
    keep, _ = run_end_to_end(ScenarioConfig(occlusion_windows=((3, 4, 10),)))
    split, _ = run_end_to_end(ScenarioConfig(occlusion_windows=((3, 4, 11),)))
    assert keep["all"].assoc_a == 1.0
    assert split["all"].assoc_a < 1.0


@pytest.mark.acceptance(5, "bi-softmax contract")
def test_bisoftmax_contract():
    rng = np.random.default_rng(5)
    for name, (_, _, bisoftmax, _) in kernels.BACKENDS.items():
        for _ in range(1000):
            n, m, d = (int(v) for v in rng.integers(1, 9, size=3))
            dets = rng.normal(size=(n, d))
            trks = rng.normal(size=(m, d))
            dets /= np.linalg.norm(dets, axis=1, keepdims=True)
            trks /= np.linalg.norm(trks, axis=1, keepdims=True)
            s = bisoftmax(dets, trks, 1.0)
            assert s.shape == (m, n)
            assert np.all(s > 0.0) and np.all(s <= 1.0), name
            one = bisoftmax(dets[:1], trks[:1], 1.0)
            assert one[0, 0] == 1.0, name
    s = bisoftmax_scores([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]])
    assert abs(s[0, 0] - 0.8655) < 1e-4
    assert abs(s[0, 1] - 0.6345) < 1e-4


@pytest.mark.acceptance(6, "hallucination loop")
def test_hallucination_loop():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    # (a) composite equals the foreground branch on the mask at every masked step
    ref = rng.uniform(-1, 1, size=(32, 32, 4))
    mask = np.zeros((32, 32))
    mask[5:20, 8:30] = 1.0
    on = mask.astype(bool)
    steps = []

    def check(k, x, fg, gen):
        assert np.array_equal(x[on], fg[on])
        steps.append(k)

    masked_denoise(ref, mask, toy_denoiser(np.zeros_like(ref)), cfg=HallucConfig(seed=1), on_step=check)
    assert len(steps) > 0
    # (b) deterministic reverse pass from pure noise reaches the target
    sched = NoiseSchedule.linear(0.75, 50)
    target = rng.uniform(-1, 1, size=(32, 32, 4))
    out = reverse_from(rng.standard_normal(target.shape), toy_denoiser(target), sched, rng, deterministic=True)
    assert np.max(np.abs(out - target)) < 1e-3
    # (c) iterated forward steps and the closed form share their moments
    x0 = np.full((100, 100, 1), 0.7)
    k = 10
    iterated = x0
    for j in range(1, k + 1):
        iterated = forward_noise_step(iterated, j, sched, rng)
    closed = forward_noise_to(x0, k, sched, rng)
    ab = sched.alpha_bar(k)
    mean, var, n = np.sqrt(ab) * 0.7, 1.0 - ab, x0.size
    for sample in (iterated, closed):
        assert abs(sample.mean() - mean) < 3 * np.sqrt(var / n)
        assert abs(sample.var(ddof=1) - var) < 3 * var * np.sqrt(2.0 / (n - 1))
    se_diff = np.sqrt(2 * var / n)
    assert abs(iterated.mean() - closed.mean()) < 3 * se_diff
    assert time.perf_counter() - t0 < 30.0


@pytest.mark.acceptance(7, "classification properties")
def test_classification_properties():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        d = int(rng.integers(2, 17))
        n = int(rng.integers(1, 8))
        vocab = ClassVocabulary([VocabClass(i, f"c{i}", rng.normal(size=d)) for i in range(n)], rng.normal(size=d))
        t = rng.normal(size=d)
        winners = set()
        for lam in (0.01, 0.07, 1.0):
            probs, cid = classify(t, vocab, ClassifierConfig(lam))
            assert abs(probs.sum() - 1.0) <= 1e-9
            winners.add(cid)
        assert len(winners) == 1
        scale = float(rng.uniform(1e-3, 1e3))
        np.testing.assert_allclose(class_affinities(scale * t, vocab), class_affinities(t, vocab), atol=1e-12)


def _run(args):
    assert main(args) == 0


@pytest.mark.acceptance(8, "determinism and round-trip")
def test_determinism_and_roundtrip(tmp_path):
    runs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        sim = d / "sim"
        _run(["simulate", "--out-dir", str(sim), "--seed", "8", "--videos", "2", "--embed-noise", "0.3", "--fn-rate", "0.1", "--fp-rate", "0.2", "--jitter", "2"])
        _run(["track", "--detections", str(sim / "detections.jsonl"), "--vocab", str(sim / "vocab.json"), "--out", str(d / "t.jsonl")])
        _run(["eval", "--tracks", str(d / "t.jsonl"), "--gt", str(sim / "gt.json"), "--vocab", str(sim / "vocab.json"), "--report", str(d / "r.json")])
        fileio.write_grid(d / "in.ovtg", np.linspace(-1, 1, 24 * 24 * 2).reshape(24, 24, 2))
        _run(["hallucinate", "--input", str(d / "in.ovtg"), "--output", str(d / "out.ovtg"), "--seed", "8"])
        runs.append(d)
    for name in ("sim/detections.jsonl", "sim/gt.json", "sim/vocab.json", "t.jsonl", "r.json", "out.ovtg"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name

    rng = np.random.default_rng(8)
    path = tmp_path / "x"
    for _ in range(500):
        recs = random_detection_records(rng)
        fileio.write_detections(path, recs)
        assert fileio.read_detections(path) == recs
        vocab = random_vocabulary(rng)
        fileio.write_vocab(path, vocab)
        assert fileio.vocab_to_json(fileio.read_vocab(path)) == fileio.vocab_to_json(vocab)
        annos, cats = random_ground_truth(rng)
        fileio.write_ground_truth(path, annos, cats)
        assert fileio.read_ground_truth(path) == (annos, cats)
        rows = random_track_rows(rng)
        fileio.write_tracks(path, rows)
        assert fileio.read_tracks(path) == rows


@pytest.mark.acceptance(9, "association degrades monotonically with embedding noise")
def test_noise_monotonicity():
    means = []
    for sigma in (0.0, 0.2, 0.5, 1.0):
        vals = [run_end_to_end(ScenarioConfig(embed_noise=sigma, seed=s))[0]["all"].assoc_a for s in range(20)]
        means.append(float(np.mean(vals)))
    assert all(b <= a for a, b in zip(means, means[1:])), means
    assert means[0] == 1.0
