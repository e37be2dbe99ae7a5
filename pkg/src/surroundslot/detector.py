"""Classical marking-based slot detector for synthetic BEV images.

Any callable ``(bev_image) -> list[Detection]`` can stand in for
:func:`detect`; this one reads painted markings only:

1. marking mask: near-neutral pixels at least ``marking_contrast`` brighter
   than the local ground (blurred far strokes stay in the mask);
2. slot interiors: enclosed components of the non-marking area;
3. four sides per interior from a polygon approximation of its outline,
   each refit as a principal-axis line on the boundary pixels;
4. every side moved onto the centerline of the adjacent marking stroke,
   corners taken as intersections of consecutive centerlines;
5. the entrance is the unshared edge nearest the vehicle;
6. class from the mean color of the central patch;
7. confidence = share of the ring lying on marking pixels, then NMS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import cv2
import numpy as np

from .errors import SurroundSlotError
from .geometry import Detection, SlotClass, polygon_nms, validate_slot
from .plane import BevSpec



@dataclass(frozen=True)
class DetectorConfig:
    marking_contrast: float = 45.0
    background_window_m: float = 1.0
    min_segment_px: int = 40
    corner_merge_px: float = 4.0
    symbol_margin: float = 60.0
    nms_iou: float = 0.5
    min_confidence: float = 0.2
    line_width_m: float = 0.12
    min_slot_area_m2: float = 2.0
    max_slot_area_m2: float = 40.0
    class_patch_m: float = 0.5

    def __post_init__(self) -> None:
        for name in ("marking_contrast", "background_window_m", "min_segment_px", "corner_merge_px", "symbol_margin",
                     "line_width_m", "min_slot_area_m2", "max_slot_area_m2", "class_patch_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in [0, 1], got {self.nms_iou}")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")


def marking_mask(image: np.ndarray, cfg: DetectorConfig, bev: BevSpec = BevSpec()) -> np.ndarray:
    """Painted-line pixels: the darkest channel clears the local ground level.

    Using the minimum channel keeps saturated symbol colors out of the mask.
    The background is a box mean over covered pixels only, so the black
    uncovered region does not make nearby ground look bright.
    """
    low = image.min(axis=-1).astype(np.float32)
    valid = np.any(image > 0, axis=-1).astype(np.float32)
    k = max(3, int(round(cfg.background_window_m / bev.meters_per_px)) | 1)
    num = cv2.boxFilter(low * valid, -1, (k, k), normalize=False, borderType=cv2.BORDER_CONSTANT)
    den = cv2.boxFilter(valid, -1, (k, k), normalize=False, borderType=cv2.BORDER_CONSTANT)
    background = num / np.maximum(den, 1.0)
    return (valid > 0) & (low - background >= cfg.marking_contrast)


# ---------------------------------------------------------------------------
# Line fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Line:
    """Infinite line through ``point`` along unit ``direction`` (pixel coords)."""

    point: np.ndarray
    direction: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.point) @ self.normal

    def along(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.point) @ self.direction

    def shifted(self, offset: float) -> "Line":
        return Line(self.point + offset * self.normal, self.direction)


def fit_line(pts: np.ndarray, weights: Optional[np.ndarray] = None) -> Line:
    """Total-least-squares line: centroid plus principal axis."""
    w = np.ones(len(pts)) if weights is None else weights
    c = (pts * w[:, None]).sum(axis=0) / w.sum()
    d = pts - c
    cov = (d * w[:, None]).T @ d
    evals, evecs = np.linalg.eigh(cov)
    return Line(c, evecs[:, np.argmax(evals)])


def intersect(a: Line, b: Line) -> Optional[np.ndarray]:
    m = np.column_stack([a.direction, -b.direction])
    if abs(np.linalg.det(m)) < 1e-9:
        return None
    s = np.linalg.solve(m, b.point - a.point)
    return a.point + s[0] * a.direction


# ---------------------------------------------------------------------------
# Interior regions to quadrilaterals
# ---------------------------------------------------------------------------


def _quad_outline(component: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Outline points and indices of four polygon-approximation corners."""
    contours, _ = cv2.findContours(component.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        return None
    contour = max(contours, key=len)
    perimeter = cv2.arcLength(contour, True)
    for frac in (0.02, 0.03, 0.015, 0.04, 0.05, 0.01):
        approx = cv2.approxPolyDP(contour, frac * perimeter, True)
        if len(approx) == 4 and cv2.isContourConvex(approx):
            pts = contour[:, 0, :].astype(float)
            idx = [int(np.argmin(np.hypot(*(pts - a[0]).T))) for a in approx]
            return pts, np.array(idx)
    return None


def _side_points(outline: np.ndarray, i0: int, i1: int, trim: float) -> np.ndarray:
    n = len(outline)
    idx = np.arange(i0, i1 + (n if i1 < i0 else 0) + 1) % n
    k = int(len(idx) * trim)
    return outline[idx[k:len(idx) - k]] if len(idx) - 2 * k >= 2 else outline[idx]


def _centerline(side: Line, interior_center: np.ndarray, mask_pts: np.ndarray,
                extent: Tuple[float, float], lw_px: float, min_pts: int) -> Line:
    """Move an interior boundary line onto the middle of the adjacent stroke."""
    # Orient the normal away from the interior.
    if side.signed_distance(interior_center[None])[0] > 0:
        side = Line(side.point, -side.direction)
    dist = side.signed_distance(mask_pts)
    along = side.along(mask_pts)
    sel = (dist > -1.0) & (dist <= lw_px + 4.0) & (along >= extent[0]) & (along <= extent[1])
    if sel.sum() < min_pts:
        return side.shifted(lw_px / 2.0)
    return fit_line(mask_pts[sel])


@dataclass
class _Candidate:
    ring_px: np.ndarray  # (4, 2) pixel corners
    component: int


def _candidates(image: np.ndarray, mask: np.ndarray, cfg: DetectorConfig, bev: BevSpec) -> List[_Candidate]:
    s = bev.meters_per_px
    lw_px = cfg.line_width_m / s
    # Close sub-line-width gaps in far, undersampled strokes before
    # separating interiors; the raw mask still drives the centerline fits.
    k = max(3, int(math.ceil(lw_px)) | 1)
    closed = cv2.morphologyEx(mask.astype(np.uint8), cv2.MORPH_CLOSE,
                              cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (k, k)))
    free = (closed == 0).astype(np.uint8)
    n, labels, stats, centroids = cv2.connectedComponentsWithStats(free, connectivity=4)
    uncovered = np.all(image == 0, axis=-1)
    h, w = mask.shape
    min_area = cfg.min_slot_area_m2 / (s * s)
    max_area = cfg.max_slot_area_m2 / (s * s)
    mv, mu = np.nonzero(mask)
    mask_pts = np.column_stack([mu, mv]).astype(float)

    out = []
    for k in range(1, n):
        x, y, bw, bh, area = stats[k]
        if not min_area <= area <= max_area:
            continue
        if x == 0 or y == 0 or x + bw >= w or y + bh >= h:
            continue
        comp = labels[y:y + bh, x:x + bw] == k
        if uncovered[y:y + bh, x:x + bw][comp].mean() > 0.01:
            continue
        found = _quad_outline(comp)
        if found is None:
            continue
        outline, corner_idx = found
        outline = outline + np.array([x, y])
        order = np.argsort(corner_idx)
        corner_idx = corner_idx[order]
        center = centroids[k]
        near = (
            (mask_pts[:, 0] >= x - 2 * lw_px) & (mask_pts[:, 0] <= x + bw + 2 * lw_px)
            & (mask_pts[:, 1] >= y - 2 * lw_px) & (mask_pts[:, 1] <= y + bh + 2 * lw_px)
        )
        local = mask_pts[near]
        lines = []
        for j in range(4):
            pts = _side_points(outline, corner_idx[j], corner_idx[(j + 1) % 4], trim=0.15)
            if len(pts) < cfg.min_segment_px:
                break
            side = fit_line(pts)
            a = side.along(pts)
            lines.append(_centerline(side, center, local, (a.min(), a.max()), lw_px, cfg.min_segment_px))
        if len(lines) != 4:
            continue
        corners = [intersect(lines[j - 1], lines[j]) for j in range(4)]
        if any(c is None for c in corners):
            continue
        ring = np.array(corners)
        quad_area = abs(cv2.contourArea(ring.astype(np.float32)))
        if quad_area <= 0 or area / quad_area < 0.75:
            continue
        out.append(_Candidate(ring, k))
    return out


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


def _merge_corners(rings: List[np.ndarray], radius: float) -> List[np.ndarray]:
    """Snap corners of different slots that lie within ``radius`` to their mean."""
    if not rings:
        return rings
    pts = np.concatenate(rings)
    owner = np.repeat(np.arange(len(rings)), 4)
    merged = pts.copy()
    seen = np.zeros(len(pts), dtype=bool)
    for i in range(len(pts)):
        if seen[i]:
            continue
        group = np.nonzero((np.hypot(*(pts - pts[i]).T) <= radius) & ~seen)[0]
        # at most one corner per slot in a cluster
        _, first = np.unique(owner[group], return_index=True)
        group = group[first]
        merged[group] = pts[group].mean(axis=0)
        seen[group] = True
    return [merged[4 * j:4 * j + 4] for j in range(len(rings))]


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = min(1.0, max(0.0, float((p - a) @ ab / (ab @ ab))))
    return float(np.hypot(*(a + t * ab - p)))


def _line_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    return abs(float(ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0]))) / float(np.hypot(*ab))


def _entrance_index(ring: np.ndarray, others: List[np.ndarray], origin: np.ndarray, tol: float) -> int:
    """Index i of the entrance edge (ring[i], ring[i+1]) of a CCW metric ring.

    In a row, entrance and end are the opposite pair of edges not shared
    with a neighbour; of the preferred candidates the one nearest the
    vehicle wins.
    """
    shared = []
    scores = []
    for i in range(4):
        a, b = ring[i], ring[(i + 1) % 4]
        mid = (a + b) / 2.0
        shared.append(any(
            np.hypot(*(mid - (o[j] + o[(j + 1) % 4]) / 2.0)) <= tol
            for o in others for j in range(4)
        ))
        scores.append(_segment_distance(origin, a, b) + _line_distance(origin, a, b))
    free_pair = [i for i in range(4) if not shared[i] and not shared[(i + 2) % 4]]
    free = [i for i in range(4) if not shared[i]]
    candidates = free_pair or free or list(range(4))
    return min(candidates, key=lambda i: scores[i])


def classify(image: np.ndarray, center_px: np.ndarray, cfg: DetectorConfig, bev: BevSpec) -> SlotClass:
    half = cfg.class_patch_m / (2.0 * bev.meters_per_px)
    u, v = center_px
    h, w = image.shape[:2]
    u0, u1 = max(int(round(u - half)), 0), min(int(round(u + half)) + 1, w)
    v0, v1 = max(int(round(v - half)), 0), min(int(round(v + half)) + 1, h)
    if u0 >= u1 or v0 >= v1:
        return SlotClass.REGULAR
    r, g, b = image[v0:v1, u0:u1].reshape(-1, 3).mean(axis=0)
    if b - max(r, g) > cfg.symbol_margin:
        return SlotClass.HANDICAPPED
    if g - max(r, b) > cfg.symbol_margin:
        return SlotClass.EV
    return SlotClass.REGULAR


def ring_coverage(ring_px: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of points sampled along the ring that fall on marking pixels."""
    h, w = mask.shape
    grown = cv2.dilate(mask.astype(np.uint8), np.ones((3, 3), np.uint8)).astype(bool)
    hits = total = 0
    for i in range(4):
        a, b = ring_px[i], ring_px[(i + 1) % 4]
        n = max(int(math.ceil(np.hypot(*(b - a)))), 1)
        t = (np.arange(n) + 0.5) / n
        p = a + t[:, None] * (b - a)
        u = np.clip(np.rint(p[:, 0]).astype(int), 0, w - 1)
        v = np.clip(np.rint(p[:, 1]).astype(int), 0, h - 1)
        hits += int(grown[v, u].sum())
        total += n
    return hits / total if total else 0.0


def detect(image: np.ndarray, cfg: DetectorConfig = DetectorConfig(), bev: BevSpec = BevSpec()) -> List[Detection]:
    """Detect and classify slots on a color BEV image; polygons in vehicle meters."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"detect needs a 3-channel image, got shape {img.shape}")
    if img.shape[:2] != bev.shape:
        raise ValueError(f"image is {img.shape[1]}x{img.shape[0]}, BEV spec is {bev.width_px}x{bev.height_px}")
    mask = marking_mask(img, cfg, bev)
    cands = _candidates(img, mask, cfg, bev)
    rings_px = _merge_corners([c.ring_px for c in cands], cfg.corner_merge_px)

    rings_m = []
    for r in rings_px:
        m = bev.pixel_to_vehicle(r)
        x, y = m[:, 0], m[:, 1]
        if np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) < 0:
            m, r = m[::-1], r[::-1]
        rings_m.append((m, r))

    origin = np.array(bev.origin)
    tol = 2.0 * cfg.corner_merge_px * bev.meters_per_px
    dets = []
    for j, (m, r) in enumerate(rings_m):
        others = [o for k, (o, _) in enumerate(rings_m) if k != j]
        e = _entrance_index(m, others, origin, tol)
        el, er, endr, endl = (m[(e + k) % 4] for k in range(4))
        try:
            poly = validate_slot([el, er, endl, endr])
        except SurroundSlotError:
            continue
        conf = ring_coverage(r, mask)
        cls = classify(img, r.mean(axis=0), cfg, bev)
        dets.append(Detection(poly, cls, float(min(max(conf, 0.0), 1.0))))
    kept = polygon_nms(dets, cfg.nms_iou)
    return [d for d in kept if d.confidence >= cfg.min_confidence]
