"""Finite-difference checks of the analytic IoU and loss gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import SurroundSlotError
from .geometry import SLOT_CLASSES, SlotPolygon, check_general_position, polygon_iou, polygon_iou_grad, validate_slot
from .losses import ClassProbs, PredictionTarget, loss_terms, pack_prediction, with_prediction

FD_STEP = 1e-6
REL_TOL = 1e-4
ABS_FLOOR = 1e-7
# Margin keeping +-h perturbations clear of clipping-topology changes.
SAMPLE_MARGIN = 1e-3


def random_slot(rng: np.random.Generator, scale: float = 1.0) -> SlotPolygon:
    """Random strictly convex quadrilateral of roughly unit size."""
    while True:
        center = rng.uniform(-0.4, 0.4, 2) * scale
        angles = np.sort(rng.uniform(0.0, 2 * math.pi, 4))
        radii = rng.uniform(0.35, 0.8, 4) * scale
        ring = center + radii[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
        try:
            return validate_slot([ring[0], ring[1], ring[3], ring[2]])
        except SurroundSlotError:
            continue


def random_general_pair(rng: np.random.Generator, margin: float = SAMPLE_MARGIN) -> Tuple[SlotPolygon, SlotPolygon]:
    while True:
        a, b = random_slot(rng), random_slot(rng)
        try:
            check_general_position(a, b, eps=margin)
        except SurroundSlotError:
            continue
        if polygon_iou(a, b) > 0.0:
            return a, b


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros(len(x))
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst ratio of |analytic - numeric| to the allowed per-component error."""
    allowed = np.maximum(REL_TOL * np.abs(numeric), ABS_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / allowed))


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    trials: int
    worst: float  # <= 1 means every component met the tolerance

    @property
    def passed(self) -> bool:
        return self.worst <= 1.0


def check_iou_gradient(trials: int, seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        a, b = random_general_pair(rng)
        numeric = central_difference(lambda x: polygon_iou(validate_slot(x.reshape(4, 2)), b), a.corners.reshape(-1))
        worst = max(worst, gradient_error(polygon_iou_grad(a, b).reshape(-1), numeric))
    return GradcheckResult("iou", trials, worst)


def random_prediction_target(rng: np.random.Generator) -> PredictionTarget:
    a, b = random_general_pair(rng)
    probs = ClassProbs(*rng.uniform(0.05, 0.95, 3))
    return PredictionTarget(
        pred_polygon=a,
        pred_probs=probs,
        pred_objectness=float(rng.uniform(0.05, 0.95)),
        target_polygon=b,
        target_class=SLOT_CLASSES[int(rng.integers(3))],
        object_present=True,
    )


def check_loss_gradient(trials: int, seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        pt = random_prediction_target(rng)
        x0 = pack_prediction(pt)
        numeric = central_difference(lambda x: loss_terms(with_prediction(pt, x), with_grad=False).total, x0)
        worst = max(worst, gradient_error(loss_terms(pt).grad, numeric))
    return GradcheckResult("loss_total", trials, worst)
