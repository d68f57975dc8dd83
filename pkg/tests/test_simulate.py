import numpy as np
import pytest

from ovmot.association import AssociationConfig
from ovmot.simulate import ScenarioConfig, generate_scenario, near_orthogonal, run_end_to_end


def test_noiseless_detections_reproduce_gt():
    sc = generate_scenario(ScenarioConfig(videos=2, frames_per_video=5, identities_per_video=4))
    det_boxes = sorted(
        (video, f, d.box.x, d.box.y, d.box.w, d.box.h) for video, frames in sc.detections.items() for f, dets in frames for d in dets
    )
    gt_boxes = sorted((a.video, a.frame, a.box.x, a.box.y, a.box.w, a.box.h) for a in sc.ground_truth)
    assert det_boxes == gt_boxes
    for (video, i), latent in sc.identity_latents.items():
        assert np.linalg.norm(latent) == pytest.approx(1.0)


def test_identity_latents_near_orthogonal():
    sc = generate_scenario(ScenarioConfig(identities_per_video=12, embed_dim=32))
    lat = np.array(list(sc.identity_latents.values()))
    gram = lat @ lat.T - np.eye(len(lat))
    assert np.abs(gram).max() <= 0.3


def test_same_seed_identical():
    cfg = ScenarioConfig(videos=2, embed_noise=0.3, fn_rate=0.2, fp_rate=0.2, box_jitter=1.0, seed=4)
    a, b = generate_scenario(cfg), generate_scenario(cfg)
    assert a.ground_truth == b.ground_truth
    assert a.detections == b.detections


def test_different_seed_differs():
    a = generate_scenario(ScenarioConfig(seed=1))
    b = generate_scenario(ScenarioConfig(seed=2))
    assert a.ground_truth != b.ground_truth


def test_false_negative_rate_binomial():
    cfg = ScenarioConfig(videos=1, frames_per_video=1250, identities_per_video=8, embed_dim=16, fn_rate=0.5, seed=3)
    sc = generate_scenario(cfg)
    n = len(sc.ground_truth)
    assert n == 10_000
    kept = sum(len(d) for _, d in sc.detections["video_000"])
    dropped = n - kept
    assert abs(dropped - n * 0.5) <= 3 * np.sqrt(n * 0.25)


def test_false_positive_scores_respect_floor():
    sc = generate_scenario(ScenarioConfig(fp_rate=1.0, seed=6))
    scores = [d.score for _, dets in sc.detections["video_000"] for d in dets]
    assert len(scores) == 2 * 20 * 8
    assert min(scores) >= 1e-4


def test_occlusion_removes_states():
    sc = generate_scenario(ScenarioConfig(occlusion_windows=((2, 5, 4),)))
    frames = sorted(a.frame for a in sc.ground_truth if a.track_id == 2)
    assert frames == [f for f in range(20) if not 5 <= f < 9]


def test_infeasible_orthogonality():
    with pytest.raises(ValueError):
        near_orthogonal(np.random.default_rng(0), 20, 2, 0.3, max_tries=200)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(fn_rate=1.5)
    with pytest.raises(ValueError):
        ScenarioConfig(embed_noise=-1)


class TestEndToEnd:
    def test_noiseless_fixed_point(self):
        scores, tm = run_end_to_end(ScenarioConfig(videos=2))
        s = scores["all"]
        assert (s.loc_a, s.assoc_a, s.cls_a, s.teta) == (1.0, 1.0, 1.0, 1.0)
        assert tm.map == 1.0

    def test_short_occlusion_reidentified(self):
        scores, _ = run_end_to_end(ScenarioConfig(occlusion_windows=((0, 5, 10),)))
        assert scores["all"].assoc_a == 1.0

    def test_long_occlusion_splits(self):
        scores, _ = run_end_to_end(ScenarioConfig(occlusion_windows=((0, 5, 11),)))
        assert scores["all"].assoc_a < 1.0

    def test_memory_setting_governs_split(self):
        cfg = ScenarioConfig(occlusion_windows=((0, 5, 6),))
        assert run_end_to_end(cfg, AssociationConfig(memory_frames=6))[0]["all"].assoc_a == 1.0
        assert run_end_to_end(cfg, AssociationConfig(memory_frames=5))[0]["all"].assoc_a < 1.0

    def test_deterministic_metrics(self):
        cfg = ScenarioConfig(embed_noise=0.4, fn_rate=0.1, fp_rate=0.1, box_jitter=2.0, seed=12)
        a, b = run_end_to_end(cfg), run_end_to_end(cfg)
        assert a[0]["all"].as_dict() == b[0]["all"].as_dict()
        assert a[1].as_dict() == b[1].as_dict()
