import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moto_helmet import (
    Box,
    ClassStats,
    MatchResult,
    PRPoint,
    Role,
    ScoredDetection,
    average_precision,
    binary_counts,
    match_detections,
    naive_helmet_baseline,
    precision_recall,
)
from moto_helmet.metrics import ConfusionMatrix4, binary_classification_pr

from _oracles import max_matching_tp, trapezoid_area


def det(x, y, w, h, score):
    return ScoredDetection(Box(x, y, w, h), score, "test")


# Small random matching instances shared by several properties.
def matching_instances():
    coord = st.integers(0, 40)
    side = st.integers(1, 30)
    box = st.builds(lambda x, y, w, h: Box(float(x), float(y), float(w), float(h)),
                    coord, coord, side, side)
    scored = st.builds(
        lambda b, s: ScoredDetection(b, s, "p"),
        box, st.floats(0, 1, allow_nan=False),
    )
    return st.tuples(st.lists(scored, max_size=6), st.lists(box, max_size=6))


class TestMatching:
    def test_exact_match(self):
        r = match_detections([det(0, 0, 10, 10, 0.9)], [Box(0, 0, 10, 10)])
        assert (r.tp, r.fp, r.fn) == (1, 0, 0)
        assert r.matched_pairs[0][:2] == (0, 0)

    def test_no_detections(self):
        r = match_detections([], [Box(0, 0, 1, 1)] * 3)
        assert (r.tp, r.fp, r.fn) == (0, 0, 3)

    def test_no_gt(self):
        r = match_detections([det(0, 0, 1, 1, 0.5)], [])
        assert (r.tp, r.fp, r.fn) == (1 - 1, 1, 0)

    def test_greedy_order_by_score(self):
        gt = [Box(0, 0, 10, 10)]
        low_first = [det(2, 0, 10, 10, 0.8), det(0, 0, 10, 10, 0.9)]
        r = match_detections(low_first, gt)
        assert (r.tp, r.fp) == (1, 1)
        # The 0.9 detection (index 1) takes the GT.
        assert r.matched_pairs[0][:2] == (1, 0)

    def test_below_iou_threshold_no_match(self):
        r = match_detections([det(5, 0, 10, 10, 0.9)], [Box(0, 0, 10, 10)])
        assert (r.tp, r.fp, r.fn) == (0, 1, 1)  # IoU 1/3 < 0.5

    def test_iou_exactly_at_threshold_matches(self):
        r = match_detections([det(0, 0, 10, 5, 0.9)], [Box(0, 0, 10, 10)], iou_threshold=0.5)
        assert r.tp == 1

    def test_score_tie_keeps_input_order(self):
        gt = [Box(0, 0, 10, 10)]
        dets = [det(0, 0, 10, 10, 0.5), det(0, 0, 10, 10, 0.5)]
        r = match_detections(dets, gt)
        assert r.matched_pairs[0][:2] == (0, 0)

    def test_determinism(self):
        dets = [det(0, 0, 10, 10, 0.7), det(3, 3, 10, 10, 0.7), det(5, 5, 10, 10, 0.2)]
        gts = [Box(1, 1, 10, 10), Box(4, 4, 10, 10)]
        a = match_detections(dets, gts)
        b = match_detections(dets, gts)
        assert a.matched_pairs == b.matched_pairs

    def test_addition_merges_counts(self):
        total = MatchResult(1, 2, 3) + MatchResult(4, 5, 6)
        assert (total.tp, total.fp, total.fn) == (5, 7, 9)
        assert total.matched_pairs == ()

    @given(matching_instances())
    @settings(max_examples=200)
    def test_count_identities(self, instance):
        dets, gts = instance
        r = match_detections(dets, gts)
        assert r.tp == len(r.matched_pairs)
        assert r.tp + r.fp == len(dets)
        assert r.tp + r.fn == len(gts)
        det_ids = [p[0] for p in r.matched_pairs]
        gt_ids = [p[1] for p in r.matched_pairs]
        assert len(set(det_ids)) == len(det_ids)
        assert len(set(gt_ids)) == len(gt_ids)
        assert all(p[2] >= 0.5 for p in r.matched_pairs)

    @given(matching_instances())
    @settings(max_examples=200)
    def test_greedy_bounded_by_exhaustive(self, instance):
        dets, gts = instance
        r = match_detections(dets, gts)
        assert r.tp <= max_matching_tp([d.box for d in dets], gts, 0.5)

    @given(matching_instances(), st.floats(0.1, 10))
    @settings(max_examples=200)
    def test_scale_invariance(self, instance, k):
        dets, gts = instance
        scaled_dets = [
            ScoredDetection(Box(d.box.x * k, d.box.y * k, d.box.w * k, d.box.h * k), d.score, d.prompt)
            for d in dets
        ]
        scaled_gts = [Box(g.x * k, g.y * k, g.w * k, g.h * k) for g in gts]
        a = match_detections(dets, gts)
        b = match_detections(scaled_dets, scaled_gts)
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)


class TestPrecisionRecall:
    def test_balanced(self):
        assert precision_recall(5, 5, 5) == (0.5, 0.5)

    def test_undefined_precision(self):
        assert precision_recall(0, 0, 7) == (None, 0.0)

    def test_undefined_recall(self):
        assert precision_recall(0, 4, 0) == (0.0, None)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            precision_recall(-1, 0, 0)


class TestAveragePrecision:
    def test_single_point_zero(self):
        assert average_precision([PRPoint(0.5, 1.0, 1.0)]) == 0.0

    def test_constant_precision_closed_form(self):
        pts = [PRPoint(0.3, 0.75, 0.2), PRPoint(0.2, 0.75, 0.5), PRPoint(0.1, 0.75, 0.9)]
        assert average_precision(pts) == pytest.approx(0.75 * (0.9 - 0.2))

    def test_order_invariance(self):
        pts = [PRPoint(0.1, 0.2, 0.9), PRPoint(0.5, 0.9, 0.1), PRPoint(0.3, 0.5, 0.4)]
        assert average_precision(pts) == average_precision(list(reversed(pts)))

    def test_matches_oracle_formula(self):
        pts = [PRPoint(0.4, 0.8, 0.3), PRPoint(0.3, 0.6, 0.5), PRPoint(0.2, 0.5, 0.8)]
        assert average_precision(pts) == pytest.approx(
            trapezoid_area([(p.recall, p.precision) for p in pts])
        )

    def test_undefined_dropped_with_warning(self, caplog):
        pts = [PRPoint(0.9, None, 0.0), PRPoint(0.3, 0.6, 0.5), PRPoint(0.2, 0.5, 0.8)]
        with caplog.at_level("WARNING"):
            ap = average_precision(pts)
        assert ap == pytest.approx(trapezoid_area([(0.5, 0.6), (0.8, 0.5)]))
        assert any("undefined" in r.message for r in caplog.records)

    def test_all_undefined_raises(self):
        with pytest.raises(ValueError, match="no defined"):
            average_precision([PRPoint(0.9, None, None)])
        with pytest.raises(ValueError, match="no defined"):
            average_precision([])


class TestBaselineAndBinary:
    def test_naive_baseline_props(self):
        stats = ClassStats(driver=3, passenger1=1, passenger2=0, child=0,
                           helmeted=3, unhelmeted=1)
        point = naive_helmet_baseline(stats)
        assert point.precision == pytest.approx(0.75)
        assert point.recall == 1.0

    def test_all_helmeted(self):
        stats = ClassStats(driver=2, helmeted=2, unhelmeted=0)
        point = naive_helmet_baseline(stats)
        assert (point.precision, point.recall) == (1.0, 1.0)

    def test_none_helmeted(self):
        stats = ClassStats(driver=2, helmeted=0, unhelmeted=2)
        point = naive_helmet_baseline(stats)
        assert (point.precision, point.recall) == (0.0, 1.0)

    def test_no_people_rejected(self):
        with pytest.raises(ValueError):
            naive_helmet_baseline(ClassStats())

    def test_binary_counts_example(self):
        assert binary_counts([True, False, True], [True, True, False]) == (1, 1, 1)

    def test_binary_pr_perfect(self):
        point = binary_classification_pr([True, False, True], [True, False, True])
        assert (point.precision, point.recall) == (1.0, 1.0)

    def test_binary_length_mismatch(self):
        with pytest.raises(ValueError):
            binary_counts([True], [True, False])

    def test_all_true_reduces_to_baseline(self):
        actual = [True] * 3 + [False] * 1
        point = binary_classification_pr([True] * 4, actual)
        stats = ClassStats(driver=4, helmeted=3, unhelmeted=1)
        base = naive_helmet_baseline(stats)
        assert point.precision == pytest.approx(base.precision)
        assert point.recall == base.recall


class TestConfusionMatrix:
    def test_perfect_diagonal(self):
        m = ConfusionMatrix4()
        for role in (Role.DRIVER, Role.PASSENGER1, Role.PASSENGER2, Role.CHILD):
            m.add(role, role, n=5)
        assert m.accuracy() == 1.0
        assert np.trace(m.counts) == 20

    def test_single_wrong(self):
        m = ConfusionMatrix4()
        m.add(Role.DRIVER, Role.CHILD)
        assert m.accuracy() == 0.0

    def test_always_driver_on_table_proportions(self):
        m = ConfusionMatrix4()
        m.add(Role.DRIVER, Role.DRIVER, n=32889)
        m.add(Role.PASSENGER1, Role.DRIVER, n=4796)
        m.add(Role.PASSENGER2, Role.DRIVER, n=78)
        m.add(Role.CHILD, Role.DRIVER, n=48)
        assert m.accuracy() == pytest.approx(32889 / 37811, abs=1e-4)

    def test_empty_undefined(self):
        assert ConfusionMatrix4().accuracy() is None

    def test_motorcycle_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix4().add(Role.MOTORCYCLE, Role.DRIVER)
