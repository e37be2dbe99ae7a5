"""Quadrilateral parking-slot geometry.

A slot is stored in *slot order*: entrance-left, entrance-right, end-left,
end-right. That is a "Z" sweep, not a polygon ring; the ring used for area
and clipping is (entrance-left, entrance-right, end-right, end-left),
canonicalized to counterclockwise. "Left" is as seen when driving into the
slot through the entrance edge.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateArea, NonConvex, NonSmoothConfiguration

CONVEXITY_EPS = 1e-12
GENERAL_POSITION_EPS = 1e-9

# Slot-order indices visited by the ring EL -> ER -> endR -> endL.
_RING_FROM_SLOT = (0, 1, 3, 2)


class SlotClass(enum.Enum):
    REGULAR = "regular"
    HANDICAPPED = "handicapped"
    EV = "ev"

    @classmethod
    def parse(cls, name: str) -> "SlotClass":
        return cls(name.strip().lower())


SLOT_CLASSES = tuple(SlotClass)


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def signed_area(ring) -> float:
    pts = np.asarray(ring, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(ring) -> float:
    """Absolute shoelace area; degenerate rings give 0."""
    pts = np.asarray(ring, dtype=float)
    if len(pts) < 3:
        return 0.0
    return abs(signed_area(pts))


@dataclass(frozen=True, eq=False)
class SlotPolygon:
    """Validated convex quadrilateral slot. Build with :func:`validate_slot`."""

    corners: np.ndarray  # (4, 2) in slot order
    unit: str = "vehicle_m"
    ring_index: Tuple[int, int, int, int] = _RING_FROM_SLOT

    @property
    def ring(self) -> np.ndarray:
        """Counterclockwise vertex ring, shape (4, 2)."""
        return self.corners[list(self.ring_index)]

    @property
    def area(self) -> float:
        return signed_area(self.ring)

    @property
    def entrance(self) -> np.ndarray:
        return self.corners[:2]

    @property
    def centroid(self) -> np.ndarray:
        ring = self.ring
        x, y = ring[:, 0], ring[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        c = x * yn - xn * y
        a = 0.5 * c.sum()
        return np.array([((x + xn) * c).sum(), ((y + yn) * c).sum()]) / (6.0 * a)

    def flat(self) -> List[float]:
        return [float(v) for v in self.corners.reshape(-1)]

    def bounds(self) -> Tuple[float, float, float, float]:
        lo = self.corners.min(axis=0)
        hi = self.corners.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def transformed(self, fn) -> "SlotPolygon":
        """Apply a point map ``(N, 2) -> (N, 2)`` to the corners and revalidate."""
        return validate_slot(fn(self.corners), unit=self.unit)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SlotPolygon):
            return NotImplemented
        return self.unit == other.unit and np.array_equal(self.corners, other.corners)

    def __repr__(self) -> str:
        return f"SlotPolygon({self.flat()}, unit={self.unit!r})"


def validate_slot(corners, unit: str = "vehicle_m") -> SlotPolygon:
    """Check slot-order corners and return the validated polygon.

    Raises DegenerateArea for repeated corners or zero area and NonConvex for
    reflex, collinear or crossing rings.
    """
    pts = np.array(corners, dtype=float).reshape(4, 2)
    if not np.isfinite(pts).all():
        raise DegenerateArea(f"non-finite corner coordinates {pts.tolist()}")
    ring = pts[list(_RING_FROM_SLOT)]
    edges = np.roll(ring, -1, axis=0) - ring
    if np.any(np.hypot(edges[:, 0], edges[:, 1]) <= CONVEXITY_EPS):
        raise DegenerateArea("two consecutive slot corners coincide")
    area = signed_area(ring)
    if abs(area) <= CONVEXITY_EPS:
        raise DegenerateArea("slot has zero area")
    nxt = np.roll(edges, -1, axis=0)
    turns = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    if np.any(np.abs(turns) <= CONVEXITY_EPS) or not (np.all(turns > 0) or np.all(turns < 0)):
        raise NonConvex(f"slot ring {ring.tolist()} is not strictly convex")
    index = _RING_FROM_SLOT if area > 0 else tuple(reversed(_RING_FROM_SLOT))
    pts.setflags(write=False)
    return SlotPolygon(corners=pts, unit=unit, ring_index=index)


def canonical_ring(ring) -> np.ndarray:
    pts = np.asarray(ring, dtype=float)
    return pts[::-1].copy() if signed_area(pts) < 0 else pts


# ---------------------------------------------------------------------------
# Clipping with optional forward-mode derivatives
# ---------------------------------------------------------------------------


def _clip(subject, clip, jacobians=None):
    """Sutherland-Hodgman: clip CCW ``subject`` by CCW convex ``clip``.

    ``jacobians`` optionally carries d(vertex)/d(parameters) per subject
    vertex, shape (2, P) each; the clip polygon is treated as constant.
    Returns (points, jacobians-or-None).
    """
    pts = [(float(x), float(y)) for x, y in subject]
    jac = list(jacobians) if jacobians is not None else None
    n = len(clip)
    for i in range(n):
        if not pts:
            break
        c0x, c0y = float(clip[i][0]), float(clip[i][1])
        ex = float(clip[(i + 1) % n][0]) - c0x
        ey = float(clip[(i + 1) % n][1]) - c0y
        side = [_cross(ex, ey, px - c0x, py - c0y) for px, py in pts]
        out_pts, out_jac = [], []
        m = len(pts)
        for j in range(m):
            k = j - 1  # previous vertex, wraps to the end
            s_in, e_in = side[k] >= 0.0, side[j] >= 0.0
            if e_in != s_in:
                ds, de = side[k], side[j]
                t = ds / (ds - de)
                (sx, sy), (qx, qy) = pts[k], pts[j]
                out_pts.append((sx + t * (qx - sx), sy + t * (qy - sy)))
                if jac is not None:
                    Js, Je = jac[k], jac[j]
                    dds = ex * Js[1] - ey * Js[0]
                    dde = ex * Je[1] - ey * Je[0]
                    dt = (ds * dde - de * dds) / (ds - de) ** 2
                    d = np.array([qx - sx, qy - sy])[:, None]
                    out_jac.append(Js + t * (Je - Js) + d * dt[None, :])
            if e_in:
                out_pts.append(pts[j])
                if jac is not None:
                    out_jac.append(jac[j])
        pts = out_pts
        jac = out_jac if jac is not None else None
    return pts, jac


def convex_intersection(subject, clip) -> np.ndarray:
    """Intersection ring of two convex polygons; shape (0, 2) when disjoint."""
    a = canonical_ring(subject)
    b = canonical_ring(clip)
    pts, _ = _clip(a, b)
    if len(pts) < 3:
        return np.zeros((0, 2))
    return np.array(pts)


def _bbox_disjoint(a: SlotPolygon, b: SlotPolygon) -> bool:
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    return ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0


def _ring_key(p: SlotPolygon):
    return tuple(p.ring.reshape(-1))


def intersection_area(a: SlotPolygon, b: SlotPolygon) -> float:
    if a.unit != b.unit:
        raise ValueError(f"cannot compare polygons in {a.unit!r} and {b.unit!r}")
    if _bbox_disjoint(a, b):
        return 0.0
    # Fixed operand order keeps the result exactly symmetric.
    if _ring_key(b) < _ring_key(a):
        a, b = b, a
    pts, _ = _clip(a.ring, b.ring)
    return polygon_area(pts) if len(pts) >= 3 else 0.0


def polygon_iou(a: SlotPolygon, b: SlotPolygon) -> float:
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def _area_gradient(ring, jac) -> Tuple[float, np.ndarray]:
    """Signed shoelace area of ``ring`` and its gradient through ``jac``."""
    pts = np.asarray(ring, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    xp, yp = np.roll(x, 1), np.roll(y, 1)
    area = 0.5 * float(np.dot(x, yn) - np.dot(xn, y))
    J = np.stack(jac)  # (n, 2, P)
    grad = 0.5 * ((yn - yp) @ J[:, 0, :] + (xp - xn) @ J[:, 1, :])
    return area, grad


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(a + t * ab - p)))


def check_general_position(a: SlotPolygon, b: SlotPolygon, eps: float = GENERAL_POSITION_EPS) -> None:
    """Raise NonSmoothConfiguration if a vertex of one ring touches an edge of the other."""
    for p_ring, q_ring in ((a.ring, b.ring), (b.ring, a.ring)):
        for p in p_ring:
            for i in range(4):
                d = _point_segment_distance(p, q_ring[i], q_ring[(i + 1) % 4])
                if d < eps:
                    raise NonSmoothConfiguration(
                        f"vertex {p.tolist()} lies within {d:.3g} of an edge of the other polygon"
                    )


def polygon_iou_grad(a: SlotPolygon, b: SlotPolygon) -> np.ndarray:
    """Analytic d IoU(a, b) / d(corners of a), shape (4, 2) in slot order."""
    check_general_position(a, b)
    seeds = []
    for slot_idx in a.ring_index:
        J = np.zeros((2, 8))
        J[0, 2 * slot_idx] = 1.0
        J[1, 2 * slot_idx + 1] = 1.0
        seeds.append(J)
    area_a, grad_a = _area_gradient(a.ring, seeds)
    area_b = b.area
    pts, jac = _clip(a.ring, b.ring, seeds)
    if len(pts) < 3:
        return np.zeros((4, 2))
    inter, grad_i = _area_gradient(pts, jac)
    if inter <= 0.0:
        return np.zeros((4, 2))
    union = area_a + area_b - inter
    grad = (grad_i * union - inter * (grad_a - grad_i)) / (union * union)
    return grad.reshape(4, 2)


def shoelace_gradient(p: SlotPolygon) -> np.ndarray:
    """d area / d(corners), shape (4, 2) in slot order."""
    seeds = []
    for slot_idx in p.ring_index:
        J = np.zeros((2, 8))
        J[0, 2 * slot_idx] = 1.0
        J[1, 2 * slot_idx + 1] = 1.0
        seeds.append(J)
    return _area_gradient(p.ring, seeds)[1].reshape(4, 2)


# ---------------------------------------------------------------------------
# Detections and suppression
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Detection:
    polygon: SlotPolygon
    slot_class: SlotClass
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.polygon == other.polygon
            and self.slot_class == other.slot_class
            and self.confidence == other.confidence
        )

    __hash__ = object.__hash__


def sort_by_confidence(items: Sequence, key=lambda d: d.confidence) -> list:
    """Confidence-descending order; equal confidences keep input order."""
    return sorted(items, key=lambda d: -key(d))


def polygon_nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Class-aware greedy non-maximum suppression."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    kept: List[Detection] = []
    for det in sort_by_confidence(detections):
        if all(
            polygon_iou(det.polygon, k.polygon) < iou_threshold
            for k in kept
            if k.slot_class == det.slot_class
        ):
            kept.append(det)
    return kept


def corner_distance(a: SlotPolygon, b: SlotPolygon) -> float:
    """Largest distance between corresponding slot-order corners."""
    return float(np.max(np.hypot(*(a.corners - b.corners).T)))


def ring_match_distance(a: SlotPolygon, b: SlotPolygon) -> float:
    """Largest corner distance under the best cyclic alignment of the two rings."""
    ra, rb = a.ring, b.ring
    return min(
        float(np.max(np.hypot(*(ra - np.roll(rb, s, axis=0)).T))) for s in range(4)
    )

