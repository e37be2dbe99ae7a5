"""Composite detection loss: polygon IoU + per-class BCE + objectness.

All terms are unit-weighted. Gradients are analytic and returned over the
twelve predicted scalars in this order: eight corner coordinates (slot order,
x then y per corner), the three class probabilities (regular, handicapped,
ev), then objectness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import (
    SLOT_CLASSES,
    SlotClass,
    SlotPolygon,
    polygon_iou,
    polygon_iou_grad,
    validate_slot,
)

BCE_EPS = 1e-7
N_PARAMS = 12


@dataclass(frozen=True)
class ClassProbs:
    """Independent per-class probabilities (not a simplex)."""

    regular: float
    handicapped: float
    ev: float

    def __post_init__(self) -> None:
        for name in ("regular", "handicapped", "ev"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"class probability {name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.regular, self.handicapped, self.ev])

    @classmethod
    def one_hot(cls, slot_class: SlotClass) -> "ClassProbs":
        return cls(*(1.0 if c is slot_class else 0.0 for c in SLOT_CLASSES))


@dataclass(frozen=True, eq=False)
class PredictionTarget:
    pred_polygon: SlotPolygon
    pred_probs: ClassProbs
    pred_objectness: float
    target_polygon: Optional[SlotPolygon] = None
    target_class: Optional[SlotClass] = None
    object_present: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.pred_objectness <= 1.0:
            raise ValueError(f"objectness {self.pred_objectness} outside [0, 1]")
        if self.object_present and (self.target_polygon is None or self.target_class is None):
            raise ValueError("object-present targets need a polygon and a class")

    def target_onehot(self) -> np.ndarray:
        return np.array([1.0 if c is self.target_class else 0.0 for c in SLOT_CLASSES])


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    polygon_iou: float
    bce: float
    obj: float
    total: float
    grad: np.ndarray  # (12,)


def loss_bce(p: float, y: float) -> float:
    pc = min(max(p, BCE_EPS), 1.0 - BCE_EPS)
    return -(y * math.log(pc) + (1.0 - y) * math.log(1.0 - pc))


def loss_bce_grad(p: float, y: float) -> float:
    """dL/dp; zero where the clamp is active."""
    if p < BCE_EPS or p > 1.0 - BCE_EPS:
        return 0.0
    return -y / p + (1.0 - y) / (1.0 - p)


def loss_polygon_iou(pred: SlotPolygon, gt: SlotPolygon) -> float:
    return 1.0 - polygon_iou(pred, gt)


def loss_polygon_iou_grad(pred: SlotPolygon, gt: SlotPolygon) -> np.ndarray:
    """Gradient of ``1 - IoU`` w.r.t. predicted corners, shape (4, 2)."""
    return -polygon_iou_grad(pred, gt)


def loss_terms(pt: PredictionTarget, with_grad: bool = True) -> LossBreakdown:
    grad = np.zeros(N_PARAMS)
    if not pt.object_present:
        obj = loss_bce(pt.pred_objectness, 0.0)
        grad[11] = loss_bce_grad(pt.pred_objectness, 0.0)
        return LossBreakdown(0.0, 0.0, obj, 0.0 + 0.0 + obj, grad)

    poly = loss_polygon_iou(pt.pred_polygon, pt.target_polygon)
    probs = pt.pred_probs.as_array()
    onehot = pt.target_onehot()
    bce = 0.0
    for p, y in zip(probs, onehot):
        bce += loss_bce(float(p), float(y))
    obj = loss_bce(pt.pred_objectness, 1.0)
    if with_grad:
        grad[:8] = loss_polygon_iou_grad(pt.pred_polygon, pt.target_polygon).reshape(-1)
        grad[8:11] = [loss_bce_grad(float(p), float(y)) for p, y in zip(probs, onehot)]
        grad[11] = loss_bce_grad(pt.pred_objectness, 1.0)
    return LossBreakdown(poly, bce, obj, poly + bce + obj, grad)


def loss_total(pt: PredictionTarget) -> float:
    return loss_terms(pt, with_grad=False).total


def loss_total_grad(pt: PredictionTarget) -> np.ndarray:
    return loss_terms(pt).grad


def pack_prediction(pt: PredictionTarget) -> np.ndarray:
    """The twelve predicted scalars in gradient order."""
    return np.concatenate([
        pt.pred_polygon.corners.reshape(-1),
        pt.pred_probs.as_array(),
        [pt.pred_objectness],
    ])


def with_prediction(pt: PredictionTarget, params) -> PredictionTarget:
    """Copy of ``pt`` with the predicted scalars replaced by ``params``."""
    p = np.asarray(params, dtype=float)
    return PredictionTarget(
        pred_polygon=validate_slot(p[:8].reshape(4, 2), unit=pt.pred_polygon.unit),
        pred_probs=ClassProbs(*map(float, p[8:11])),
        pred_objectness=float(p[11]),
        target_polygon=pt.target_polygon,
        target_class=pt.target_class,
        object_present=pt.object_present,
    )
