import itertools
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_feeding.core import BBox, Detection, DetectorRun, GtObject, ImageRecord
from adaptive_feeding.evaluation import (
    FP,
    IGNORED,
    TP,
    ApConfig,
    EmptyDatasetError,
    Interpolation,
    UndefinedAPError,
    average_precision,
    dataset_map,
    image_mapi,
    match_detections,
    pr_curve,
)
from helpers import micro_instance, oracle_inputs
from oracles import greedy_replay, voc_ap_oracle

ELEVEN = ApConfig(interpolation=Interpolation.ELEVEN_POINT)
ALL = ApConfig(interpolation=Interpolation.ALL_POINT)


def det(score, x0, y0, x1, y1, cls=0):
    return Detection(cls, score, BBox(x0, y0, x1, y1))


def gt(x0, y0, x1, y1, cls=0, difficult=False):
    return GtObject(cls, BBox(x0, y0, x1, y1), difficult)


def run_of(images, dets_by_image):
    return DetectorRun("r", {im.image_id: tuple(dets_by_image.get(im.image_id, ())) for im in images})


class TestMatching:
    def test_duplicate_is_false_positive(self):
        m = match_detections([det(0.9, 0, 0, 10, 10), det(0.8, 0, 0, 10, 10)], [gt(0, 0, 10, 10)])
        assert m.flags == (TP, FP)

    def test_argmax_gt_taken_means_fp_even_if_other_gt_free(self):
        # second detection overlaps the taken box most, the free box only a little
        gts = [gt(0, 0, 10, 10), gt(4, 0, 14, 10)]
        m = match_detections([det(0.9, 0, 0, 10, 10), det(0.8, 1, 0, 11, 10)], gts)
        assert m.flags == (TP, FP)

    def test_threshold_is_inclusive(self):
        # IoU exactly 0.5
        m = match_detections([det(0.9, 0, 0, 10, 10)], [gt(0, 0, 20, 10)])
        assert m.flags == (TP,)
        m = match_detections([det(0.9, 0, 0, 10, 10)], [gt(0, 0, 20, 10)], ApConfig(iou_threshold=0.51))
        assert m.flags == (FP,)

    def test_difficult_match_is_ignored(self):
        m = match_detections([det(0.9, 0, 0, 10, 10)], [gt(0, 0, 10, 10, difficult=True)])
        assert m.flags == (IGNORED,)
        assert m.n_positives == 0
        m = match_detections(
            [det(0.9, 0, 0, 10, 10)], [gt(0, 0, 10, 10, difficult=True)], ApConfig(ignore_difficult=False)
        )
        assert m.flags == (TP,) and m.n_positives == 1

    def test_ties_break_by_position(self):
        a, b = det(0.5, 5, 0, 15, 10), det(0.5, 0, 0, 10, 10)
        m = match_detections([a, b], [gt(0, 0, 10, 10)])
        assert m.ranked == (b, a)
        assert m.flags == (TP, FP)

    def test_three_dets_two_gts_against_replay_of_every_tie_order(self):
        names = {TP: "tp", FP: "fp", IGNORED: "ign"}
        rng = random.Random(0)
        for _ in range(200):
            gts = [gt(x, y, x + 6, y + 6) for x, y in ((rng.randint(0, 6), rng.randint(0, 6)) for _ in range(2))]
            dets = [det(0.5, x, y, x + 6, y + 6) for x, y in ((rng.randint(0, 8), rng.randint(0, 8)) for _ in range(3))]
            gt_boxes = [(g.bbox.as_tuple(), g.difficult) for g in gts]
            replays = {}
            for perm in itertools.permutations(dets):
                key = tuple(d.bbox.as_tuple() for d in perm)
                replays[key] = greedy_replay(list(key), gt_boxes)
            for perm in itertools.permutations(dets):
                m = match_detections(list(perm), gts)
                # documented order among equal scores: xmin, then ymin
                expect_order = tuple(sorted((d.bbox.as_tuple() for d in dets), key=lambda b: (b[0], b[1])))
                assert tuple(d.bbox.as_tuple() for d in m.ranked) == expect_order
                assert [names[f] for f in m.flags] == replays[expect_order]

    def test_mixed_classes_rejected(self):
        with pytest.raises(ValueError):
            match_detections([det(0.5, 0, 0, 1, 1, 0), det(0.5, 0, 0, 1, 1, 1)], [])


class TestAveragePrecision:
    def test_hand_example(self):
        # ranks: TP, FP, TP with 2 positives -> P = 1, 1/2, 2/3 at R = 1/2, 1/2, 1
        curve = pr_curve([TP, FP, TP], 2)
        assert average_precision(curve, ALL) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)
        assert average_precision(curve, ELEVEN) == pytest.approx((6 * 1 + 5 * 2 / 3) / 11)

    def test_no_detections_is_zero(self):
        assert average_precision(pr_curve([], 3), ELEVEN) == 0.0

    def test_undefined_without_positives(self):
        with pytest.raises(UndefinedAPError):
            average_precision(pr_curve([FP], 0))

    def test_ignored_rows_dropped_from_curve(self):
        assert np.array_equal(pr_curve([TP, IGNORED, FP], 1).tp, [1, 1])

    @pytest.mark.parametrize("interp", list(Interpolation))
    def test_matches_exact_oracle(self, interp):
        for seed in range(300):
            images, dets = micro_instance(seed)
            by_img = {}
            for i, d in dets:
                by_img.setdefault(images[i].image_id, []).append(d)
            got, _ = dataset_map(run_of(images, by_img), images, ApConfig(interpolation=interp))
            assert got == pytest.approx(voc_ap_oracle(*oracle_inputs(images, dets), interp.value), abs=1e-12)


@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_permutation_invariance(seed, shuffler):
    images, dets = micro_instance(seed)
    shuffled = list(dets)
    shuffler.shuffle(shuffled)

    def mp(pairs):
        by_img = {}
        for i, d in pairs:
            by_img.setdefault(images[i].image_id, []).append(d)
        return dataset_map(run_of(images, by_img), images, ALL)[0]

    assert mp(dets) == mp(shuffled)


@given(st.integers(0, 10_000), st.sampled_from(list(Interpolation)))
def test_trailing_false_positive_never_raises_ap(seed, interp):
    images, dets = micro_instance(seed)
    extra = (0, Detection(0, 0.0, BBox(39, 39, 40, 40)))
    cfg = ApConfig(interpolation=interp)

    def mp(pairs):
        by_img = {}
        for i, d in pairs:
            by_img.setdefault(images[i].image_id, []).append(d)
        return dataset_map(run_of(images, by_img), images, cfg)[0]

    assert mp(dets + [extra]) <= mp(dets)


@given(st.integers(0, 10_000))
def test_single_image_mapi_equals_dataset_map(seed):
    images, dets = micro_instance(seed)
    image = images[0]
    mine = [d for i, d in dets if i == 0]
    if not any(not g.difficult for g in image.objects):
        return
    run = DetectorRun("r", {image.image_id: tuple(mine)})
    assert image_mapi(mine, image).p_value == dataset_map(run, [image])[0]


def test_perfect_detector_scores_one():
    rng = random.Random(3)
    images = []
    for n in range(20):
        objs = tuple(
            GtObject(rng.randrange(5), BBox(x, y, x + 20, y + 30))
            for x, y in ((rng.randint(0, 400), rng.randint(0, 300)) for _ in range(rng.randint(1, 4)))
        )
        images.append(ImageRecord(f"i{n}", 500, 375, objs))
    run = DetectorRun("gt", {im.image_id: tuple(Detection(o.class_id, 1.0, o.bbox) for o in im.objects) for im in images})
    for cfg in (ELEVEN, ALL):
        assert dataset_map(run, images, cfg)[0] == 1.0
        assert all(image_mapi(run.detections[im.image_id], im, cfg).p_value == 1.0 for im in images)


def test_mapi_two_classes_one_missed():
    image = ImageRecord("a", 100, 100, (gt(0, 0, 10, 10, cls=0), gt(20, 20, 40, 40, cls=1)))
    res = image_mapi([det(0.9, 0, 0, 10, 10, cls=0), det(0.9, 50, 50, 60, 60, cls=2)], image)
    assert res.s_classes == 2
    assert res.p_value == 0.5
    assert res.class_ap == {0: 1.0, 1: 0.0}


def test_mapi_no_objects_is_zero():
    assert image_mapi([det(0.9, 0, 0, 1, 1)], ImageRecord("e", 10, 10, ())).p_value == 0.0


def test_dataset_map_averages_present_classes_and_missing_images_count_as_empty():
    images = [
        ImageRecord("a", 100, 100, (gt(0, 0, 10, 10, cls=0),)),
        ImageRecord("b", 100, 100, (gt(0, 0, 10, 10, cls=1),)),
    ]
    run = DetectorRun("r", {"a": (det(0.9, 0, 0, 10, 10, cls=0),)})
    m, per_class = dataset_map(run, images)
    assert per_class == {0: 1.0, 1: 0.0}
    assert m == 0.5


def test_dataset_map_without_positives_raises():
    with pytest.raises(EmptyDatasetError):
        dataset_map(DetectorRun("r", {}), [ImageRecord("a", 10, 10, ())])
