"""Class-aware detection metrics: precision, recall, F1 and AP at an IoU threshold.

Matching is greedy by descending confidence and one-to-one: each detection
takes the unmatched ground-truth slot of its own class with the highest IoU
and counts as a true positive when that IoU reaches the threshold.

Degenerate conventions: with nothing to find and nothing found a class
scores 1 on every metric; otherwise an empty denominator scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .geometry import SLOT_CLASSES, Detection, SlotClass, SlotPolygon, polygon_iou, sort_by_confidence

GroundTruth = Tuple[SlotPolygon, SlotClass]
ROW_NAMES = {SlotClass.REGULAR: "Regular", SlotClass.HANDICAPPED: "Handicapped", SlotClass.EV: "EV"}


@dataclass(frozen=True)
class MatchResult:
    """TP flags in confidence order, plus the detections in that order."""

    flags: List[bool]
    confidences: List[float]
    n_gt: int
    matched_gt: List[int] = field(default_factory=list)  # gt index per TP, -1 for FP

    @property
    def tp(self) -> int:
        return sum(self.flags)

    @property
    def fp(self) -> int:
        return len(self.flags) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5) -> MatchResult:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    taken = [False] * len(gts)
    flags, confs, matched = [], [], []
    for det in sort_by_confidence(dets):
        best, best_iou = -1, -1.0
        for i, (poly, cls) in enumerate(gts):
            if taken[i] or cls != det.slot_class:
                continue
            iou = polygon_iou(det.polygon, poly)
            if iou > best_iou:
                best, best_iou = i, iou
        hit = best >= 0 and best_iou >= iou_threshold
        if hit:
            taken[best] = True
        flags.append(hit)
        confs.append(det.confidence)
        matched.append(best if hit else -1)
    return MatchResult(flags=flags, confidences=confs, n_gt=len(gts), matched_gt=matched)


def precision_recall_curve(flags: Sequence[bool], n_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=float))
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
    return recall, precision


def average_precision(flags: Sequence[bool], n_gt: int, method: str = "all-point") -> float:
    """Area under the precision envelope for confidence-ordered TP/FP flags."""
    if n_gt < 0:
        raise ValueError("n_gt must be non-negative")
    if n_gt == 0:
        return 1.0 if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    recall, precision = precision_recall_curve(flags, n_gt)
    if method == "11-point":
        return float(np.mean([
            precision[recall >= t].max() if np.any(recall >= t) else 0.0
            for t in np.linspace(0.0, 1.0, 11)
        ]))
    if method != "all-point":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def _ratio(num: int, den: int, vacuous: bool) -> float:
    if den > 0:
        return num / den
    return 1.0 if vacuous else 0.0


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    ap: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    per_class: Dict[SlotClass, ClassMetrics]
    overall: ClassMetrics  # micro-averaged P/R/F1; ap field holds mean_ap
    mean_ap: float
    iou_threshold: float
    curves: Dict[SlotClass, Tuple[List[float], List[float]]] = field(default_factory=dict, compare=False)

    def rows(self) -> List[Tuple[str, ClassMetrics]]:
        return [(ROW_NAMES[c], self.per_class[c]) for c in SLOT_CLASSES] + [("All", self.overall)]

    def to_text(self) -> str:
        header = f"{'Class':<12}{'Precision':>10}{'Recall':>10}{'F1':>10}{'AP @ ' + format(self.iou_threshold, 'g'):>10}"
        lines = [header]
        for name, m in self.rows():
            lines.append(f"{name:<12}{m.precision:>10.3f}{m.recall:>10.3f}{m.f1:>10.3f}{m.ap:>10.3f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def cell(m: ClassMetrics) -> dict:
            return {"precision": m.precision, "recall": m.recall, "f1": m.f1, "ap": m.ap,
                    "tp": m.tp, "fp": m.fp, "fn": m.fn}

        return {
            "format_version": 1,
            "iou_threshold": self.iou_threshold,
            "classes": {c.value: cell(self.per_class[c]) for c in SLOT_CLASSES},
            "all": cell(self.overall),
            "mean_ap": self.mean_ap,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        def metrics(d: dict) -> ClassMetrics:
            return ClassMetrics(**{k: d[k] for k in ("precision", "recall", "f1", "ap", "tp", "fp", "fn")})

        return cls(
            per_class={c: metrics(doc["classes"][c.value]) for c in SLOT_CLASSES},
            overall=metrics(doc["all"]),
            mean_ap=doc["mean_ap"],
            iou_threshold=doc["iou_threshold"],
        )


def _class_metrics(flags: Sequence[bool], n_gt: int, method: str) -> ClassMetrics:
    tp = int(sum(flags))
    fp = len(flags) - tp
    fn = n_gt - tp
    vacuous = n_gt == 0 and len(flags) == 0
    p = _ratio(tp, tp + fp, vacuous)
    r = _ratio(tp, n_gt, vacuous)
    return ClassMetrics(p, r, f1_score(p, r), average_precision(flags, n_gt, method), tp, fp, fn)


def evaluate_scenes(
    scenes: Sequence[Tuple[Sequence[Detection], Sequence[GroundTruth]]],
    iou_threshold: float = 0.5,
    method: str = "all-point",
) -> EvalReport:
    """Pool matches over several scenes (matching never crosses scenes)."""
    pooled: Dict[SlotClass, List[Tuple[float, bool]]] = {c: [] for c in SLOT_CLASSES}
    n_gt = {c: 0 for c in SLOT_CLASSES}
    for dets, gts in scenes:
        for c in SLOT_CLASSES:
            res = match_detections(
                [d for d in dets if d.slot_class == c], [g for g in gts if g[1] == c], iou_threshold
            )
            pooled[c].extend(zip(res.confidences, res.flags))
            n_gt[c] += res.n_gt

    per_class, curves = {}, {}
    for c in SLOT_CLASSES:
        # Stable sort keeps scene order among equal confidences.
        ordered = sorted(pooled[c], key=lambda cf: -cf[0])
        flags = [f for _, f in ordered]
        per_class[c] = _class_metrics(flags, n_gt[c], method)
        rec, prec = precision_recall_curve(flags, n_gt[c])
        curves[c] = (rec.tolist(), prec.tolist())

    tp = sum(m.tp for m in per_class.values())
    fp = sum(m.fp for m in per_class.values())
    fn = sum(m.fn for m in per_class.values())
    total_gt = tp + fn
    vacuous = total_gt == 0 and tp + fp == 0
    p = _ratio(tp, tp + fp, vacuous)
    r = _ratio(tp, total_gt, vacuous)
    mean_ap = sum(per_class[c].ap for c in SLOT_CLASSES) / len(SLOT_CLASSES)
    overall = ClassMetrics(p, r, f1_score(p, r), mean_ap, tp, fp, fn)
    return EvalReport(per_class, overall, mean_ap, iou_threshold, curves)


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5,
             method: str = "all-point") -> EvalReport:
    return evaluate_scenes([(dets, gts)], iou_threshold, method)
