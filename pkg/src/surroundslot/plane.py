"""The bird's-eye-view image plane and planar homographies.

BEV orientation: vehicle +x (forward) points up the image, vehicle +y (left)
points to the image left. Pixel ``(u, v)`` with integer coordinates is the
center of column ``u`` / row ``v``; the vehicle-frame ``origin`` sits at the
geometric image center ``((W - 1) / 2, (H - 1) / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import AtInfinity

HOMOGENEOUS_EPS = 1e-12


@dataclass(frozen=True)
class BevSpec:
    """Metric window of a square-pixel top-down image.

    ``extent_m`` is (span across the image width, span along the image
    height) in meters, i.e. (lateral y span, longitudinal x span).
    """

    width_px: int = 1024
    height_px: int = 1024
    extent_m: Tuple[float, float] = (25.0, 25.0)
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"BEV size must be positive, got {self.width_px}x{self.height_px}")
        ew, eh = self.extent_m
        if ew <= 0 or eh <= 0:
            raise ValueError(f"extent_m must be positive, got {self.extent_m}")
        sx = ew / self.width_px
        sy = eh / self.height_px
        if abs(sx - sy) > 1e-12 * max(sx, sy):
            raise ValueError(
                f"non-square pixels: {ew}/{self.width_px} m/px across vs {eh}/{self.height_px} along"
            )

    @property
    def meters_per_px(self) -> float:
        return self.extent_m[0] / self.width_px

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height_px, self.width_px

    def vehicle_to_pixel_matrix(self) -> np.ndarray:
        """Homogeneous affine map ``[u, v, 1] = A [X, Y, 1]``."""
        k = 1.0 / self.meters_per_px
        x0, y0 = self.origin
        cu = (self.width_px - 1) / 2.0
        cv = (self.height_px - 1) / 2.0
        return np.array([
            [0.0, -k, cu + k * y0],
            [-k, 0.0, cv + k * x0],
            [0.0, 0.0, 1.0],
        ])

    def pixel_to_vehicle(self, pixels) -> np.ndarray:
        """Vectorized :func:`bev_pixel_to_vehicle` over ``(..., 2)`` arrays."""
        p = np.asarray(pixels, dtype=float)
        s = self.meters_per_px
        x0, y0 = self.origin
        cu = (self.width_px - 1) / 2.0
        cv = (self.height_px - 1) / 2.0
        X = x0 + (cv - p[..., 1]) * s
        Y = y0 + (cu - p[..., 0]) * s
        return np.stack([X, Y], axis=-1)

    def vehicle_to_pixel(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        s = self.meters_per_px
        x0, y0 = self.origin
        cu = (self.width_px - 1) / 2.0
        cv = (self.height_px - 1) / 2.0
        u = cu - (p[..., 1] - y0) / s
        v = cv - (p[..., 0] - x0) / s
        return np.stack([u, v], axis=-1)

    def pixel_grid_vehicle(self) -> np.ndarray:
        """Vehicle coordinates of every pixel center, shape ``(H, W, 2)``."""
        v, u = np.mgrid[0:self.height_px, 0:self.width_px]
        return self.pixel_to_vehicle(np.stack([u, v], axis=-1).astype(float))


def bev_pixel_to_vehicle(pixel, bev: BevSpec) -> Tuple[float, float]:
    X, Y = bev.pixel_to_vehicle(pixel)
    return float(X), float(Y)


def vehicle_to_bev_pixel(point, bev: BevSpec) -> Tuple[float, float]:
    u, v = bev.vehicle_to_pixel(point)
    return float(u), float(v)


def apply_homography(H, p) -> Tuple[float, float]:
    """Map ``p = (x, y)`` through ``H`` and dehomogenize."""
    H = np.asarray(H, dtype=float)
    x, y = float(p[0]), float(p[1])
    w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    if abs(w) < HOMOGENEOUS_EPS:
        raise AtInfinity(f"point {(x, y)} maps to infinity (w = {w:g})")
    u = (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / w
    v = (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / w
    return u, v


def apply_homography_many(H, points) -> np.ndarray:
    """Vectorized :func:`apply_homography`; points at infinity become NaN."""
    H = np.asarray(H, dtype=float)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    q = p @ H[:, :2].T + H[:, 2]
    w = q[:, 2]
    out = np.full((len(p), 2), np.nan)
    ok = np.abs(w) >= HOMOGENEOUS_EPS
    out[ok] = q[ok, :2] / w[ok, None]
    return out
