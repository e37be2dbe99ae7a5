"""Synthetic parking lots: layouts, ground texture, fisheye renderings.

Rows of slots run along the vehicle x axis beside a central aisle. The left
row (+y) is built first; the right row is its mirror image with left/right
corners swapped so every slot keeps the entrance-left convention.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional, Sequence, Tuple

import cv2
import numpy as np

from .camera import CameraRig, FisheyeCamera, unproject_pixels
from .errors import DoesNotFit
from .geometry import SlotClass, SlotPolygon, validate_slot
from .plane import BevSpec
from .rng import SplitMix64
from .stitch import bilinear_sample, to_uint8

Color = Tuple[int, int, int]

DEFAULT_SLOT_SIZE = {
    "perpendicular": (2.5, 5.0),
    "parallel": (6.0, 2.5),
    "fishbone": (2.5, 5.0),
}
CLASS_CDF = ((0.80, SlotClass.REGULAR), (0.92, SlotClass.HANDICAPPED), (1.0, SlotClass.EV))
ROW_JITTER_M = 0.5
WINDOW_MARGIN_M = 0.5


@dataclass(frozen=True)
class LayoutKind:
    name: str
    angle: Optional[float] = None  # fishbone lean from perpendicular, radians

    def __post_init__(self) -> None:
        if self.name not in DEFAULT_SLOT_SIZE:
            raise ValueError(f"unknown layout kind {self.name!r}")
        if self.name == "fishbone":
            if self.angle is None or not 0.0 < self.angle < math.pi / 2:
                raise ValueError(f"fishbone angle must lie in (0, pi/2), got {self.angle}")

    @classmethod
    def parse(cls, text: str) -> "LayoutKind":
        """``perp``, ``parallel`` or ``fishbone:DEGREES``."""
        name, _, arg = text.partition(":")
        name = {"perp": "perpendicular"}.get(name, name)
        if name == "fishbone":
            return cls(name, math.radians(float(arg or 30.0)))
        if arg:
            raise ValueError(f"layout kind {name!r} takes no argument")
        return cls(name)

    def __str__(self) -> str:
        if self.name == "fishbone":
            return f"fishbone:{math.degrees(self.angle):g}"
        return "perp" if self.name == "perpendicular" else self.name


@dataclass(frozen=True)
class MarkingStyle:
    line_width: float = 0.12
    line_color: Color = (255, 255, 255)
    ground_color: Color = (90, 90, 90)
    handicapped_color: Color = (0, 0, 255)
    ev_color: Color = (0, 200, 0)
    symbol_size: float = 0.8

    def symbol_color(self, slot_class: SlotClass) -> Optional[Color]:
        return {
            SlotClass.HANDICAPPED: self.handicapped_color,
            SlotClass.EV: self.ev_color,
        }.get(slot_class)


@dataclass(frozen=True, eq=False)
class LotLayout:
    slots: Tuple[Tuple[SlotPolygon, SlotClass], ...]
    kind: LayoutKind
    marking: MarkingStyle = field(default_factory=MarkingStyle)
    seed: int = 0

    @property
    def polygons(self):
        return [p for p, _ in self.slots]

    @property
    def classes(self):
        return [c for _, c in self.slots]


def _draw_class(rng: SplitMix64) -> SlotClass:
    u = rng.random()
    for bound, cls in CLASS_CDF:
        if u < bound:
            return cls
    return SlotClass.EV


def _row(kind: LayoutKind, n: int, w: float, d: float, x_center: float, y0: float):
    lean = (math.sin(kind.angle), math.cos(kind.angle)) if kind.name == "fishbone" else (0.0, 1.0)
    footprint = n * w + d * lean[0]
    x_start = x_center - footprint / 2.0
    out = []
    for i in range(n):
        el = np.array([x_start + i * w, y0])
        er = np.array([x_start + (i + 1) * w, y0])
        off = d * np.array(lean)
        out.append(np.array([el, er, el + off, er + off]))
    return out


def _mirror(corners: np.ndarray) -> np.ndarray:
    m = corners * np.array([1.0, -1.0])
    return m[[1, 0, 3, 2]]


def generate_layout(
    kind: LayoutKind,
    n_slots: int,
    slot_size: Optional[Tuple[float, float]] = None,
    seed: int = 0,
    rows: int = 1,
    window: BevSpec = BevSpec(),
    aisle_offset: float = 2.0,
    marking: MarkingStyle = MarkingStyle(),
) -> LotLayout:
    """Build one or two facing rows of adjacent slots.

    ``slot_size`` is (width along the entrance edge, depth into the slot);
    for fishbone rows the depth is measured along the leaning side lines.
    """
    if n_slots < 1:
        raise ValueError(f"n_slots must be >= 1, got {n_slots}")
    if rows not in (1, 2):
        raise ValueError(f"rows must be 1 or 2, got {rows}")
    w, d = slot_size or DEFAULT_SLOT_SIZE[kind.name]
    if w <= 0 or d <= 0:
        raise ValueError(f"slot_size must be positive, got {(w, d)}")
    rng = SplitMix64(seed)
    counts = [n_slots] if rows == 1 else [(n_slots + 1) // 2, n_slots // 2]

    corners = []
    for side, count in enumerate(counts):
        if count == 0:
            continue
        jitter = rng.uniform(-ROW_JITTER_M, ROW_JITTER_M)
        row = _row(kind, count, w, d, window.origin[0] + jitter, window.origin[1] + aisle_offset)
        if side == 1:
            origin = np.array(window.origin)
            row = [_mirror(c - origin) + origin for c in row]
        corners.extend(row)

    lo = np.array(window.origin) - np.array(window.extent_m[::-1]) / 2 + WINDOW_MARGIN_M
    hi = np.array(window.origin) + np.array(window.extent_m[::-1]) / 2 - WINDOW_MARGIN_M
    for c in corners:
        if np.any(c < lo) or np.any(c > hi):
            raise DoesNotFit(
                f"{n_slots} {kind} slots of {w}x{d} m in {rows} row(s) exceed the "
                f"{window.extent_m[0]}x{window.extent_m[1]} m window"
            )
    slots = tuple((validate_slot(c), _draw_class(rng)) for c in corners)
    return LotLayout(slots=slots, kind=kind, marking=marking, seed=seed)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _window_patch(window: BevSpec, pts_m: np.ndarray, pad_m: float):
    """Pixel index ranges and vehicle coordinates covering ``pts_m`` plus padding."""
    px = window.vehicle_to_pixel(pts_m)
    pad = pad_m / window.meters_per_px + 1.0
    u0 = max(int(math.floor(px[:, 0].min() - pad)), 0)
    u1 = min(int(math.ceil(px[:, 0].max() + pad)) + 1, window.width_px)
    v0 = max(int(math.floor(px[:, 1].min() - pad)), 0)
    v1 = min(int(math.ceil(px[:, 1].max() + pad)) + 1, window.height_px)
    if u0 >= u1 or v0 >= v1:
        return None
    v, u = np.mgrid[v0:v1, u0:u1]
    xy = window.pixel_to_vehicle(np.stack([u, v], axis=-1).astype(float))
    return (slice(v0, v1), slice(u0, u1)), xy


def stroke_segment(image: np.ndarray, window: BevSpec, a, b, width: float, color) -> None:
    """Paint every pixel whose center is within ``width / 2`` of segment ab."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    patch = _window_patch(window, np.array([a, b]), width)
    if patch is None:
        return
    sl, xy = patch
    ab = b - a
    t = np.clip(((xy - a) @ ab) / (ab @ ab), 0.0, 1.0)
    dist = np.hypot(*np.moveaxis(a + t[..., None] * ab - xy, -1, 0))
    image[sl][dist <= width / 2.0] = color


def fill_oriented_square(image, window: BevSpec, center, axis, size: float, color) -> None:
    c = np.asarray(center, dtype=float)
    u = np.asarray(axis, dtype=float)
    u = u / np.hypot(*u)
    v = np.array([-u[1], u[0]])
    h = size / 2.0
    corners = np.array([c + h * (su * u + sv * v) for su in (-1, 1) for sv in (-1, 1)])
    patch = _window_patch(window, corners, 0.0)
    if patch is None:
        return
    sl, xy = patch
    rel = xy - c
    inside = (np.abs(rel @ u) <= h) & (np.abs(rel @ v) <= h)
    image[sl][inside] = color


def render_ground_texture(layout: LotLayout, window: BevSpec = BevSpec()) -> np.ndarray:
    """Top-down ground truth: ground color, stroked slot rings, class patches."""
    style = layout.marking
    img = np.empty((window.height_px, window.width_px, 3), dtype=np.uint8)
    img[:] = style.ground_color
    for poly, _ in layout.slots:
        ring = poly.ring
        for i in range(4):
            stroke_segment(img, window, ring[i], ring[(i + 1) % 4], style.line_width, style.line_color)
    for poly, cls in layout.slots:
        color = style.symbol_color(cls)
        if color is not None:
            el, er = poly.entrance
            fill_oriented_square(img, window, poly.centroid, er - el, style.symbol_size, color)
    return img


# ---------------------------------------------------------------------------
# Fisheye rendering
# ---------------------------------------------------------------------------


MAX_LOD = 6


@dataclass(frozen=True, eq=False)
class RenderPlan:
    """Texture sample positions for every fisheye pixel of every camera.

    Texture lookups are mip-mapped: ``lods`` holds, per fisheye pixel, the
    base-2 log of the square root of its texture footprint area, and rendering blends the two
    nearest levels of an area-averaged texture pyramid. Point sampling would
    alias thin far-away lines into broken dashes.
    """

    window: BevSpec
    labels: tuple
    samples: tuple  # per camera: (H, W, 2) texture pixel coords, NaN = off-texture
    lods: tuple  # per camera: (H, W) level of detail, 0 = full resolution

    @classmethod
    def build(cls, rig: CameraRig, window: BevSpec = BevSpec(), threads: int = 1) -> "RenderPlan":
        cams = list(rig)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda c: _camera_samples(c, window), cams))
        else:
            parts = [_camera_samples(c, window) for c in cams]
        return cls(
            window=window,
            labels=tuple(c.label for c in cams),
            samples=tuple(p[0] for p in parts),
            lods=tuple(p[1] for p in parts),
        )

    def render(self, texture: np.ndarray) -> Dict[str, np.ndarray]:
        if texture.shape[:2] != self.window.shape:
            raise ValueError(
                f"texture is {texture.shape[1]}x{texture.shape[0]}, window is "
                f"{self.window.width_px}x{self.window.height_px}"
            )
        pyramid = texture_pyramid(texture, MAX_LOD)
        out = {}
        for label, s, lod in zip(self.labels, self.samples, self.lods):
            h, w = s.shape[:2]
            img = np.zeros((h, w, texture.shape[2]), dtype=np.uint8)
            ok = ~np.isnan(s[..., 0])
            img[ok] = to_uint8(_mip_sample(pyramid, s[ok], lod[ok]))
            out[label] = img
        return out


def texture_pyramid(texture: np.ndarray, levels: int) -> list:
    """Area-averaged pyramid; level ``l`` has 2**-l of the base resolution."""
    out = [texture.astype(np.float32)]
    for _ in range(levels):
        h, w = out[-1].shape[:2]
        if min(h, w) < 2:
            break
        out.append(cv2.resize(out[-1], (w // 2, h // 2), interpolation=cv2.INTER_AREA))
    return out


def _level_sample(pyramid: list, level: int, xy: np.ndarray) -> np.ndarray:
    base_h, base_w = pyramid[0].shape[:2]
    img = pyramid[level]
    sx = img.shape[1] / base_w
    sy = img.shape[0] / base_h
    return bilinear_sample(img, (xy[:, 0] + 0.5) * sx - 0.5, (xy[:, 1] + 0.5) * sy - 0.5)


def _mip_sample(pyramid: list, xy: np.ndarray, lod: np.ndarray) -> np.ndarray:
    top = len(pyramid) - 1
    lod = np.clip(lod, 0.0, top)
    lo = np.minimum(np.floor(lod).astype(int), top)
    t = (lod - lo)[:, None]
    out = np.empty((len(xy), pyramid[0].shape[2]))
    for level in np.unique(lo):
        sel = lo == level
        v = _level_sample(pyramid, level, xy[sel])
        if level < top:
            blend = t[sel]
            nz = blend[:, 0] > 0
            if nz.any():
                v[nz] = v[nz] * (1.0 - blend[nz]) + _level_sample(pyramid, level + 1, xy[sel][nz]) * blend[nz]
        out[sel] = v
    return out


def _camera_samples(cam: FisheyeCamera, window: BevSpec):
    w, h = cam.intrinsics.image_size
    v, u = np.mgrid[0:h, 0:w]
    ground = unproject_pixels(np.stack([u.ravel(), v.ravel()], axis=-1).astype(float), cam)
    tex = window.vehicle_to_pixel(ground).reshape(h, w, 2)
    # Footprint of one fisheye pixel on the texture, from neighbour differences.
    du = np.gradient(tex, axis=1)
    dv = np.gradient(tex, axis=0)
    footprint = np.sqrt(np.abs(du[..., 0] * dv[..., 1] - du[..., 1] * dv[..., 0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        lod = np.log2(np.maximum(footprint, 1.0))
        inside = (
            (tex[..., 0] >= -0.5) & (tex[..., 0] <= window.width_px - 0.5)
            & (tex[..., 1] >= -0.5) & (tex[..., 1] <= window.height_px - 0.5)
        )
    lod = np.where(np.isfinite(lod), lod, 0.0).astype(np.float32)
    tex[~inside] = np.nan
    tex.setflags(write=False)
    lod.setflags(write=False)
    return tex, lod


def render_fisheye_views(texture: np.ndarray, window: BevSpec, rig: CameraRig) -> Dict[str, np.ndarray]:
    """Image each camera would see of a flat ground carrying ``texture``."""
    return RenderPlan.build(rig, window).render(texture)


def add_noise(images: Dict[str, np.ndarray], sigma: float, seed: int) -> Dict[str, np.ndarray]:
    """Gaussian pixel noise for stress runs; deterministic per seed."""
    if sigma <= 0:
        return dict(images)
    rng = np.random.default_rng(seed)
    return {
        k: to_uint8(img.astype(float) + rng.normal(0.0, sigma, img.shape))
        for k, img in images.items()
    }


# ---------------------------------------------------------------------------
# Default rig and scenes
# ---------------------------------------------------------------------------


def default_rig() -> CameraRig:
    from .formats import rig_from_dict

    text = resources.files("surroundslot").joinpath("data/default_rig.json").read_text()
    return rig_from_dict(json.loads(text))


TEXTURE_MARGIN_PX = 256


def texture_window(bev: BevSpec, margin_px: int = TEXTURE_MARGIN_PX) -> BevSpec:
    """Same-scale window extending ``bev`` by ``margin_px`` on every side.

    Rendering the ground beyond the BEV window keeps cameras from seeing the
    texture edge, which would otherwise bleed black into border BEV pixels.
    """
    s = bev.meters_per_px
    return BevSpec(
        width_px=bev.width_px + 2 * margin_px,
        height_px=bev.height_px + 2 * margin_px,
        extent_m=(bev.extent_m[0] + 2 * margin_px * s, bev.extent_m[1] + 2 * margin_px * s),
        origin=bev.origin,
    )


def crop_to_bev(texture: np.ndarray, margin_px: int = TEXTURE_MARGIN_PX) -> np.ndarray:
    """The part of a :func:`texture_window` raster that lies under the BEV window."""
    if margin_px == 0:
        return texture
    return texture[margin_px:-margin_px, margin_px:-margin_px]


@dataclass(frozen=True, eq=False)
class Scene:
    """A layout with its ground texture (over ``window``) and camera images."""

    layout: LotLayout
    window: BevSpec
    texture: np.ndarray
    images: Dict[str, np.ndarray]


def make_scene(
    kind: LayoutKind,
    n_slots: int,
    seed: int,
    rows: int = 1,
    rig: Optional[CameraRig] = None,
    bev: BevSpec = BevSpec(),
    plan: Optional[RenderPlan] = None,
    noise: float = 0.0,
) -> Scene:
    """Generate, texture and render one scene whose slots fit inside ``bev``."""
    layout = generate_layout(kind, n_slots, seed=seed, rows=rows, window=bev)
    window = plan.window if plan is not None else texture_window(bev)
    texture = render_ground_texture(layout, window)
    if plan is None:
        plan = RenderPlan.build(rig or default_rig(), window)
    images = add_noise(plan.render(texture), noise, seed)
    return Scene(layout=layout, window=window, texture=texture, images=images)


def polygons_to_pixels(polys: Sequence[SlotPolygon], bev: BevSpec):
    return [validate_slot(bev.vehicle_to_pixel(p.corners), unit="bev_px") for p in polys]
