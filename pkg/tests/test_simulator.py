from dataclasses import replace

import pytest

from adaptive_feeding.core import BBox
from adaptive_feeding.evaluation import dataset_map
from adaptive_feeding.labeling import Label, label_images, label_stats
from adaptive_feeding.simulator import (
    DetectorProfile,
    SceneConfig,
    default_profiles,
    generate_scenes,
    paired_benchmark,
    quantize,
    simulate_detector,
    size_bucket,
)

PERFECT = DetectorProfile(
    "perfect", recall_by_size=(1.0, 1.0, 1.0), localization_noise=0.0, false_positive_rate=0.0,
    tp_score_std=0.0,
)  # fmt: skip


def test_same_seed_same_scenes():
    cfg = SceneConfig(n_images=30, seed=4)
    assert generate_scenes(cfg) == generate_scenes(cfg)
    assert generate_scenes(cfg) != generate_scenes(replace(cfg, seed=5))


def test_empty_and_fixed_counts():
    assert generate_scenes(SceneConfig(n_images=0)) == []
    scenes = generate_scenes(SceneConfig(n_images=20, fixed_objects=3))
    assert all(len(im.objects) == 3 for im in scenes)
    assert [im.image_id for im in scenes[:2]] == ["img000000", "img000001"]


def test_boxes_inside_image_and_quantized():
    for im in generate_scenes(SceneConfig(n_images=50, seed=1)):
        for o in im.objects:
            assert 0 <= o.bbox.xmin < o.bbox.xmax <= im.width
            assert 0 <= o.bbox.ymin < o.bbox.ymax <= im.height
            assert all(quantize(v) == v for v in o.bbox.as_tuple())


def test_perfect_profile_scores_one():
    cfg = SceneConfig(n_images=40, seed=2)
    scenes = generate_scenes(cfg)
    run = simulate_detector(scenes, PERFECT, seed=0, scene_cfg=cfg)
    assert dataset_map(run, scenes)[0] == 1.0


def test_zero_recall_no_false_positives_is_empty():
    cfg = SceneConfig(n_images=20)
    blind = replace(PERFECT, recall_by_size=(0.0, 0.0, 0.0))
    run = simulate_detector(generate_scenes(cfg), blind, seed=0, scene_cfg=cfg)
    assert all(dets == () for dets in run.detections.values())


def test_identical_profiles_make_every_image_easy():
    fast, _, gen = default_profiles()
    b = paired_benchmark(SceneConfig(n_images=60), fast, replace(fast, detector_id="twin"), gen)
    assert b.basic.detections == b.partner.detections
    assert all(lab.label is Label.EASY for lab in label_images(b.basic, b.partner, b.images))


def test_higher_recall_only_adds_detections():
    fast, _, _ = default_profiles()
    cfg = SceneConfig(n_images=60, seed=3)
    scenes = generate_scenes(cfg)
    lo = simulate_detector(scenes, fast, 1, cfg)
    hi = simulate_detector(scenes, replace(fast, recall_by_size=(0.9, 0.95, 0.99)), 1, cfg)
    for i in lo.detections:
        assert set(lo.detections[i]) <= set(hi.detections[i])


def test_per_image_latency_and_fps():
    fast, _, _ = default_profiles()
    run = simulate_detector(generate_scenes(SceneConfig(n_images=5)), fast, 0)
    assert set(run.latency_ms.values()) == {21.7}
    assert run.fps == pytest.approx(1000 / 21.7)


def test_size_buckets():
    cfg = SceneConfig(min_size=10, max_size=40)
    lo, hi = cfg.size_thresholds()
    assert (lo, hi) == (20, 30)
    assert [size_bucket(BBox(0, 0, s, s), cfg) for s in (15, 25, 35)] == [0, 1, 2]


def test_small_objects_raise_hard_fraction():
    fast, accurate, gen = default_profiles()

    def hard_ratio(frac):
        b = paired_benchmark(SceneConfig(n_images=300, small_fraction=frac, seed=9), fast, accurate, gen)
        return label_stats(label_images(b.basic, b.partner, b.images)).hard_ratio

    assert hard_ratio(0.8) > hard_ratio(0.0)


def test_pinned_defaults_give_easy_majority():
    b = paired_benchmark(SceneConfig(n_images=500, seed=0), *default_profiles())
    ratio = label_stats(label_images(b.basic, b.partner, b.images)).easy_ratio
    assert 0.6 <= ratio <= 0.95


def test_profile_validation():
    with pytest.raises(ValueError):
        DetectorProfile("x", recall_by_size=(0.5, 1.2, 0.9))
    with pytest.raises(ValueError):
        SceneConfig(min_size=50, max_size=10)
