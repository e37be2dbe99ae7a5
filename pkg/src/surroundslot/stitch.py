"""Surround-view synthesis: four fisheye images to one top-down image.

Images are ``numpy.uint8`` arrays shaped ``(height, width, channels)``.

Every BEV pixel is owned by at most one camera. Among the cameras whose
projection of the pixel's ground point lands inside their image, the one
with the highest visibility score wins::

    score = cos(incidence angle) / (1 + ground distance to camera)

Ties go to the earlier camera in front, left, rear, right order. There is
no blending across seams. A camera only counts when the ray stays
``EDGE_MARGIN_PX`` pixels short of 90 degrees off-axis: past that limit a
camera sees no ground, so bilinear taps there would mix in non-ground pixels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .camera import CameraRig, FisheyeCamera, project_ground_points, ray_angles
from .errors import SizeMismatch
from .plane import BevSpec


def bilinear_sample(image: np.ndarray, xs, ys) -> np.ndarray:
    """Sample ``image`` at float pixel coordinates with edge clamping.

    Returns float64 values shaped ``xs.shape + (channels,)``.
    """
    img = image if image.ndim == 3 else image[:, :, None]
    h, w = img.shape[:2]
    x = np.clip(np.asarray(xs, dtype=float), 0.0, w - 1.0)
    y = np.clip(np.asarray(ys, dtype=float), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy

EDGE_MARGIN_PX = 1.5


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8)


def visibility_score(ground, cam: FisheyeCamera) -> np.ndarray:
    """Cosine of the incidence angle over (1 + horizontal distance)."""
    g = np.asarray(ground, dtype=float)
    t = cam.position
    dist = np.hypot(g[..., 0] - t[0], g[..., 1] - t[1])
    cos_inc = t[2] / np.hypot(dist, t[2])
    return cos_inc / (1.0 + dist)


def _row_chunks(n_rows: int, threads: int):
    bounds = np.linspace(0, n_rows, max(1, threads) + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_chunks(fn, n_rows: int, threads: int):
    chunks = _row_chunks(n_rows, threads)
    if threads <= 1 or len(chunks) == 1:
        return [fn(a, b) for a, b in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map preserves chunk order, so the assembled result is order-stable.
        return list(pool.map(lambda ab: fn(*ab), chunks))


@dataclass(frozen=True, eq=False)
class StitchPlan:
    """Per-pixel camera choice and fisheye sample positions for one rig.

    ``camera_index`` is ``(H, W)`` with -1 for uncovered pixels;
    ``sample_xy`` holds the fisheye coordinates for the chosen camera.
    """

    bev: BevSpec
    labels: tuple
    image_sizes: tuple
    camera_index: np.ndarray
    sample_xy: np.ndarray

    @classmethod
    def build(cls, rig: CameraRig, bev: BevSpec, threads: int = 1) -> "StitchPlan":
        cams = list(rig)

        def rows(a: int, b: int):
            v, u = np.mgrid[a:b, 0:bev.width_px]
            ground = bev.pixel_to_vehicle(np.stack([u, v], axis=-1).astype(float)).reshape(-1, 2)
            best = np.full(len(ground), -np.inf)
            index = np.full(len(ground), -1, dtype=np.int8)
            xy = np.zeros((len(ground), 2))
            for k, cam in enumerate(cams):
                pix = project_ground_points(ground, cam)
                w, h = cam.intrinsics.image_size
                with np.errstate(invalid="ignore"):
                    inside = (
                        (pix[:, 0] >= 0) & (pix[:, 0] <= w - 1)
                        & (pix[:, 1] >= 0) & (pix[:, 1] <= h - 1)
                    )
                limit = np.pi / 2 - EDGE_MARGIN_PX / cam.intrinsics.focal_px
                inside &= ray_angles(ground, cam) <= limit
                score = np.where(inside, visibility_score(ground, cam), -np.inf)
                # Strict comparison keeps the earlier camera on ties.
                win = score > best
                best[win] = score[win]
                index[win] = k
                xy[win] = pix[win]
            return index.reshape(b - a, -1), xy.reshape(b - a, -1, 2)

        parts = _run_chunks(rows, bev.height_px, threads)
        index = np.concatenate([p[0] for p in parts])
        xy = np.concatenate([p[1] for p in parts])
        index.setflags(write=False)
        xy.setflags(write=False)
        return cls(
            bev=bev,
            labels=tuple(c.label for c in cams),
            image_sizes=tuple(c.intrinsics.image_size for c in cams),
            camera_index=index,
            sample_xy=xy,
        )

    @property
    def coverage_mask(self) -> np.ndarray:
        return self.camera_index >= 0

    def apply(self, images, threads: int = 1) -> np.ndarray:
        imgs = _ordered_images(images, self.labels)
        for label, img, (w, h) in zip(self.labels, imgs, self.image_sizes):
            if img.shape[0] != h or img.shape[1] != w:
                raise SizeMismatch(
                    f"image for camera {label!r} is {img.shape[1]}x{img.shape[0]}, camera expects {w}x{h}"
                )
        channels = {1 if im.ndim == 2 else im.shape[2] for im in imgs}
        if len(channels) != 1:
            raise SizeMismatch("camera images disagree on channel count")
        c = channels.pop()

        def rows(a: int, b: int):
            out = np.zeros((b - a, self.bev.width_px, c), dtype=np.uint8)
            idx = self.camera_index[a:b]
            xy = self.sample_xy[a:b]
            for k, img in enumerate(imgs):
                sel = idx == k
                if sel.any():
                    p = xy[sel]
                    out[sel] = to_uint8(bilinear_sample(img, p[:, 0], p[:, 1]))
            return out

        out = np.concatenate(_run_chunks(rows, self.bev.height_px, threads))
        return out if c > 1 else out[:, :, 0]


def _ordered_images(images, labels: Sequence[str]) -> list:
    if isinstance(images, Mapping):
        missing = [l for l in labels if l not in images]
        if missing:
            raise SizeMismatch(f"missing images for cameras {missing}")
        return [np.asarray(images[l]) for l in labels]
    imgs = [np.asarray(im) for im in images]
    if len(imgs) != len(labels):
        raise SizeMismatch(f"expected {len(labels)} images, got {len(imgs)}")
    return imgs


def synthesize_bev(images, rig: CameraRig, bev: BevSpec = BevSpec(), threads: int = 1) -> np.ndarray:
    """Stitch four fisheye images (mapping label -> image, or rig order) into a BEV image."""
    return StitchPlan.build(rig, bev, threads).apply(images, threads)
