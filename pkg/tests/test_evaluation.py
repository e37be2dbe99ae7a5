import itertools
import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from surroundslot import formats
from surroundslot.evaluation import (
    EvalReport,
    average_precision,
    evaluate,
    evaluate_scenes,
    f1_score,
    match_detections,
)
from surroundslot.geometry import Detection, SlotClass, validate_slot

DATA = Path(__file__).parent / "data"


def rect(k, dx=0.0):
    x = 3.0 * k + dx
    return validate_slot([(x, 2.0), (x + 2.0, 2.0), (x, 6.0), (x + 2.0, 6.0)])


def brute_force_ap(flags, n_gt):
    """All-point AP from exact fractions: for each new recall level, the best
    precision reached at that recall or beyond."""
    tp = fp = 0
    points = []
    for f in flags:
        tp += f
        fp += not f
        points.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    ap, prev = Fraction(0), Fraction(0)
    for r in sorted({r for r, _ in points}):
        if r > prev:
            ap += (r - prev) * max(p for rr, p in points if rr >= r)
            prev = r
    return float(ap)


@pytest.fixture
def mixed():
    return formats.read_detections(DATA / "mixed_detections.json"), formats.read_labels(DATA / "mixed_labels.json")


class TestMatching:
    def test_exact(self):
        gts = [(rect(k), SlotClass.REGULAR) for k in range(3)]
        res = match_detections([Detection(p, c, 1.0) for p, c in gts], gts)
        assert res.flags == [True] * 3 and res.fn == 0

    def test_wrong_class(self):
        report = evaluate([Detection(rect(0), SlotClass.EV, 0.9)], [(rect(0), SlotClass.REGULAR)])
        assert report.per_class[SlotClass.EV].fp == 1
        assert report.per_class[SlotClass.REGULAR].fn == 1

    def test_three_detection_fixture(self):
        gts = [(rect(k), SlotClass.REGULAR) for k in range(3)]
        dets = [
            Detection(rect(0), SlotClass.REGULAR, 0.9),
            Detection(rect(5), SlotClass.REGULAR, 0.8),
            Detection(rect(1), SlotClass.REGULAR, 0.7),
        ]
        res = match_detections(dets, gts)
        assert res.flags == [True, False, True]
        assert (res.tp, res.fp, res.fn) == (2, 1, 1)
        m = evaluate(dets, gts).per_class[SlotClass.REGULAR]
        assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)

    def test_threshold_inclusive(self):
        # A shift of a third of the width gives IoU exactly 1/2.
        gt = validate_slot([(0, 0), (3, 0), (0, 4), (3, 4)])
        det = validate_slot([(1, 0), (4, 0), (1, 4), (4, 4)])
        assert match_detections([Detection(det, SlotClass.EV, 0.5)], [(gt, SlotClass.EV)], 0.5).flags == [True]

    def test_stable_ties(self):
        gts = [(rect(0), SlotClass.REGULAR)]
        first = Detection(rect(0, 0.1), SlotClass.REGULAR, 0.5)
        second = Detection(rect(0), SlotClass.REGULAR, 0.5)
        assert match_detections([first, second], gts).flags == [True, False]

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            match_detections([], [], 0.0)


class TestAveragePrecision:
    def test_five_ninths(self):
        assert abs(average_precision([True, False, True], 3) - 5 / 9) <= 1e-12

    def test_perfect(self):
        assert average_precision([True] * 4, 4) == 1.0

    def test_vacuous(self):
        assert average_precision([], 0) == 1.0
        assert average_precision([False], 0) == 0.0
        assert average_precision([], 3) == 0.0

    def test_eleven_point(self):
        assert average_precision([True, False, True], 3, "11-point") == pytest.approx((4 * 1 + 3 * 2 / 3) / 11)

    def test_brute_force(self):
        rng = np.random.default_rng(50)
        for _ in range(300):
            n = int(rng.integers(1, 15))
            flags = [bool(f) for f in rng.integers(0, 2, n)]
            n_gt = sum(flags) + int(rng.integers(0, 4))
            if n_gt == 0:
                continue
            assert average_precision(flags, n_gt) == pytest.approx(brute_force_ap(flags, n_gt), abs=1e-12)

    def test_swapping_fp_ahead_never_helps(self):
        rng = np.random.default_rng(51)
        for _ in range(300):
            flags = [bool(f) for f in rng.integers(0, 2, 10)]
            n_gt = sum(flags) + 1
            for i, j in itertools.combinations(range(10), 2):
                if flags[i] and not flags[j]:
                    swapped = list(flags)
                    swapped[i], swapped[j] = swapped[j], swapped[i]
                    assert average_precision(swapped, n_gt) <= average_precision(flags, n_gt) + 1e-12

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            average_precision([True], 1, "coco")


class TestReport:
    def test_perfect(self):
        gts = [(rect(k), c) for k, c in enumerate(SlotClass)]
        report = evaluate([Detection(p, c, 1.0) for p, c in gts], gts)
        for _, m in report.rows():
            assert (m.precision, m.recall, m.f1, m.ap) == (1.0, 1.0, 1.0, 1.0)

    def test_no_detections(self):
        report = evaluate([], [(rect(0), SlotClass.REGULAR)])
        m = report.per_class[SlotClass.REGULAR]
        assert (m.precision, m.recall, m.ap) == (0.0, 0.0, 0.0)
        assert report.per_class[SlotClass.EV].ap == 1.0

    def test_mixed_fixture(self, mixed):
        dets, gts = mixed
        assert (len(dets), len(gts)) == (12, 10)
        report = evaluate(dets, gts)
        expected = {
            SlotClass.REGULAR: (1 / 2, 3 / 5, 6 / 11, 13 / 25, 3, 3, 2),
            SlotClass.HANDICAPPED: (1, 2 / 3, 4 / 5, 2 / 3, 2, 0, 1),
            SlotClass.EV: (1 / 2, 1, 2 / 3, 2 / 3, 2, 2, 0),
        }
        for c, (p, r, f1, ap, tp, fp, fn) in expected.items():
            m = report.per_class[c]
            assert (m.tp, m.fp, m.fn) == (tp, fp, fn)
            np.testing.assert_allclose([m.precision, m.recall, m.f1, m.ap], [p, r, f1, ap], atol=1e-12)
        o = report.overall
        assert (o.tp, o.fp, o.fn) == (7, 5, 3)
        np.testing.assert_allclose([o.precision, o.recall, o.f1], [7 / 12, 7 / 10, 7 / 11], atol=1e-12)
        assert report.mean_ap == pytest.approx((13 / 25 + 4 / 3) / 3, abs=1e-12)

    def test_golden_text(self, mixed):
        assert evaluate(*mixed).to_text() == (DATA / "golden_report.txt").read_text()

    def test_json_round_trip(self, mixed):
        report = evaluate(*mixed)
        doc = json.loads(json.dumps(report.to_dict()))
        assert EvalReport.from_dict(doc) == report

    def test_invariants(self, mixed):
        dets, gts = mixed
        report = evaluate(dets, gts)
        for c in SlotClass:
            m = report.per_class[c]
            assert m.tp + m.fn == sum(1 for _, g in gts if g is c)
            for v in (m.precision, m.recall, m.f1, m.ap):
                assert 0.0 <= v <= 1.0
        assert report.mean_ap == sum(report.per_class[c].ap for c in SlotClass) / 3

    def test_monotone_confidence_transform(self, mixed):
        dets, gts = mixed
        squashed = [Detection(d.polygon, d.slot_class, d.confidence ** 3) for d in dets]
        a, b = evaluate(dets, gts), evaluate(squashed, gts)
        assert [m.ap for _, m in a.rows()] == [m.ap for _, m in b.rows()]

    def test_duplicate_of_tp_adds_one_fp(self, mixed):
        dets, gts = mixed
        before = evaluate(dets, gts).per_class[SlotClass.HANDICAPPED]
        dup = Detection(dets[6].polygon, dets[6].slot_class, 0.01)
        after = evaluate(dets + [dup], gts).per_class[SlotClass.HANDICAPPED]
        assert after.fp == before.fp + 1 and after.recall == before.recall

    def test_scenes_do_not_cross_match(self):
        gts = [(rect(0), SlotClass.REGULAR)]
        det = [Detection(rect(0), SlotClass.REGULAR, 0.9)]
        report = evaluate_scenes([(det, []), ([], gts)])
        m = report.per_class[SlotClass.REGULAR]
        assert (m.tp, m.fp, m.fn) == (0, 1, 1)

    def test_f1(self):
        assert f1_score(0.0, 0.0) == 0.0
        assert f1_score(0.5, 1.0) == pytest.approx(2 / 3)
