"""Parametric fisheye cameras and their ground-plane geometry.

Lens model (equidistant base plus two odd terms)::

    r(theta) = focal_px * (theta + k1 * theta**3 + k2 * theta**5)

with ``theta`` the angle between the incoming ray and the optical axis.

Frames:
    camera  -- looks along +z, image x to the right, image y down.
    vehicle -- x forward, y left, z up; origin on the ground below the
               vehicle center.

``rotation`` maps vehicle-frame directions into the camera frame, so a
vehicle point ``P`` has camera coordinates ``rotation @ (P - translation)``.
Pixel coordinates put integer values at pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Tuple

import numpy as np

from .errors import DegenerateView, InvalidCamera
from .plane import BevSpec

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-10
CAMERA_LABELS = ("front", "left", "rear", "right")

Point2 = Tuple[float, float]


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FisheyeIntrinsics:
    focal_px: float
    principal_point: Point2
    distortion: Point2 = (0.0, 0.0)
    image_size: Tuple[int, int] = (1280, 800)
    fov_max_rad: float = math.pi / 2

    def __post_init__(self) -> None:
        if not self.focal_px > 0:
            raise InvalidCamera(f"focal_px must be positive, got {self.focal_px}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise InvalidCamera(f"image_size must be positive, got {self.image_size}")
        if not 0 < self.fov_max_rad <= math.pi:
            raise InvalidCamera(f"fov_max_rad must lie in (0, pi], got {self.fov_max_rad}")
        # Strict monotonicity of r(theta), checked on a dense sample.
        theta = np.linspace(0.0, self.fov_max_rad, 2049)
        if np.any(np.diff(self.radius(theta)) <= 0):
            raise InvalidCamera(
                f"distortion {self.distortion} makes r(theta) non-monotone on "
                f"[0, {self.fov_max_rad}]"
            )

    @property
    def k1(self) -> float:
        return self.distortion[0]

    @property
    def k2(self) -> float:
        return self.distortion[1]

    def radius(self, theta):
        """Image radius in pixels for ray angle ``theta`` (array-friendly)."""
        t2 = theta * theta
        return self.focal_px * theta * (1.0 + t2 * (self.k1 + self.k2 * t2))

    def theta_from_radius(self, r) -> np.ndarray:
        """Invert :meth:`radius` by Newton iteration.

        Entries that fail to converge, or whose angle exceeds ``fov_max_rad``,
        come back as NaN.
        """
        rho = np.asarray(r, dtype=float) / self.focal_px
        k1, k2 = self.k1, self.k2
        theta = rho.copy()
        done = np.zeros(rho.shape, dtype=bool)
        for _ in range(NEWTON_MAX_ITER):
            t2 = theta * theta
            g = theta * (1.0 + t2 * (k1 + k2 * t2)) - rho
            done = np.abs(g) < NEWTON_TOL
            if done.all():
                break
            dg = 1.0 + t2 * (3.0 * k1 + 5.0 * k2 * t2)
            theta = np.where(done, theta, theta - g / dg)
        else:
            t2 = theta * theta
            done = np.abs(theta * (1.0 + t2 * (k1 + k2 * t2)) - rho) < NEWTON_TOL
        ok = done & (theta >= 0.0) & (theta <= self.fov_max_rad)
        return np.where(ok, theta, np.nan)


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        R = self.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise InvalidCamera("rotation is not orthonormal")
        if np.linalg.det(R) <= 0:
            raise InvalidCamera("rotation has negative determinant")
        if not self.translation[2] > 0:
            raise InvalidCamera("camera must sit above the ground plane (z > 0)")


@dataclass(frozen=True, eq=False)
class FisheyeCamera:
    intrinsics: FisheyeIntrinsics
    extrinsics: CameraExtrinsics
    label: str = ""

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics.rotation

    @property
    def position(self) -> np.ndarray:
        return self.extrinsics.translation


@dataclass(frozen=True, eq=False)
class CameraRig:
    """The four surround-view cameras keyed by mounting position."""

    cameras: Mapping[str, FisheyeCamera] = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = sorted(self.cameras)
        if labels != sorted(CAMERA_LABELS):
            raise InvalidCamera(f"rig needs exactly {CAMERA_LABELS}, got {tuple(labels)}")
        # Fixed order doubles as the stitching tie-break order.
        ordered = {k: self.cameras[k] for k in CAMERA_LABELS}
        object.__setattr__(self, "cameras", ordered)

    def __getitem__(self, label: str) -> FisheyeCamera:
        return self.cameras[label]

    def __iter__(self) -> Iterator[FisheyeCamera]:
        return iter(self.cameras.values())

    def items(self):
        return self.cameras.items()


def look_rotation(yaw: float, pitch_down: float) -> np.ndarray:
    """Camera-from-vehicle rotation for a camera with level horizon.

    ``yaw`` is the heading of the optical axis in the vehicle xy-plane
    (0 = forward, pi/2 = left); ``pitch_down`` tilts it toward the ground.
    """
    forward = np.array([
        math.cos(pitch_down) * math.cos(yaw),
        math.cos(pitch_down) * math.sin(yaw),
        -math.sin(pitch_down),
    ])
    right = np.cross(forward, [0.0, 0.0, 1.0])
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise InvalidCamera("optical axis is vertical; horizon direction undefined")
    right /= n
    down = np.cross(forward, right)
    return np.vstack([right, down, forward])


# ---------------------------------------------------------------------------
# Vectorized core
# ---------------------------------------------------------------------------


def project_ground_points(points, cam: FisheyeCamera) -> np.ndarray:
    """Project ground points ``(N, 2)`` to fisheye pixels ``(N, 2)``.

    Rows that are behind the camera or outside the field of view are NaN.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    R = cam.rotation
    t = cam.position
    dx = pts[:, 0] - t[0]
    dy = pts[:, 1] - t[1]
    dz = -t[2]
    xc = R[0, 0] * dx + R[0, 1] * dy + R[0, 2] * dz
    yc = R[1, 0] * dx + R[1, 1] * dy + R[1, 2] * dz
    zc = R[2, 0] * dx + R[2, 1] * dy + R[2, 2] * dz
    return _project_camera_frame(xc, yc, zc, cam.intrinsics)


def ray_angles(points, cam: FisheyeCamera) -> np.ndarray:
    """Angle between the optical axis and the ray to each ground point ``(N, 2)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = np.column_stack([pts - cam.position[:2], np.full(len(pts), -cam.position[2])])
    pc = d @ cam.rotation.T
    return np.arctan2(np.hypot(pc[:, 0], pc[:, 1]), pc[:, 2])


def _project_camera_frame(xc, yc, zc, intr: FisheyeIntrinsics) -> np.ndarray:
    rho = np.hypot(xc, yc)
    theta = np.arctan2(rho, zc)
    r = intr.radius(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, r / np.where(rho > 0, rho, 1.0), 0.0)
    cx, cy = intr.principal_point
    out = np.stack([cx + scale * xc, cy + scale * yc], axis=-1)
    valid = (zc > 0) & (theta <= intr.fov_max_rad)
    out[~valid] = np.nan
    return out


def pixel_rays(pixels, intr: FisheyeIntrinsics) -> np.ndarray:
    """Unit camera-frame rays ``(N, 3)`` for fisheye pixels; NaN where invalid."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    cx, cy = intr.principal_point
    du = px[:, 0] - cx
    dv = px[:, 1] - cy
    r = np.hypot(du, dv)
    theta = intr.theta_from_radius(r)
    s = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 0, du / np.where(r > 0, r, 1.0), 0.0)
        uy = np.where(r > 0, dv / np.where(r > 0, r, 1.0), 0.0)
    return np.stack([s * ux, s * uy, np.cos(theta)], axis=-1)


def unproject_pixels(pixels, cam: FisheyeCamera) -> np.ndarray:
    """Intersect the rays of fisheye pixels ``(N, 2)`` with the ground.

    Rows whose ray misses the ground ahead of the camera are NaN.
    """
    rays = pixel_rays(pixels, cam.intrinsics)
    # Rays at or beyond 90 degrees from the axis are not "ahead" of the camera.
    ahead = rays[:, 2] > 0
    d = rays @ cam.rotation  # vehicle-frame directions, R^T applied row-wise
    t = cam.position
    with np.errstate(invalid="ignore", divide="ignore"):
        s = -t[2] / d[:, 2]
    hit = ahead & (d[:, 2] < 0)
    out = np.stack([t[0] + s * d[:, 0], t[1] + s * d[:, 1]], axis=-1)
    out[~hit] = np.nan
    return out


def _single(arr: np.ndarray) -> Optional[Point2]:
    row = arr[0]
    if np.isnan(row).any():
        return None
    return float(row[0]), float(row[1])


def project_ground_to_pixel(point, cam: FisheyeCamera) -> Optional[Point2]:
    """Fisheye pixel of ground point ``(X, Y)``; None when not in view."""
    return _single(project_ground_points([point], cam))


def unproject_pixel_to_ground(pixel, cam: FisheyeCamera) -> Optional[Point2]:
    """Ground point seen at a fisheye pixel; None when the ray misses the ground."""
    return _single(unproject_pixels([pixel], cam))


# ---------------------------------------------------------------------------
# Rectification and homography
# ---------------------------------------------------------------------------


def rectify_pixels(pixels, intr: FisheyeIntrinsics, pinhole_focal: float) -> np.ndarray:
    if not pinhole_focal > 0:
        raise ValueError(f"pinhole_focal must be positive, got {pinhole_focal}")
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    cx, cy = intr.principal_point
    du = px[:, 0] - cx
    dv = px[:, 1] - cy
    r = np.hypot(du, dv)
    theta = intr.theta_from_radius(r)
    ok = theta < math.pi / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, pinhole_focal * np.tan(theta) / np.where(r > 0, r, 1.0), 1.0)
    out = np.stack([cx + scale * du, cy + scale * dv], axis=-1)
    out[~ok] = np.nan
    return out


def unrectify_pixels(pixels, intr: FisheyeIntrinsics, pinhole_focal: float) -> np.ndarray:
    """Inverse of :func:`rectify_pixels`: pinhole pixel back to fisheye pixel."""
    if not pinhole_focal > 0:
        raise ValueError(f"pinhole_focal must be positive, got {pinhole_focal}")
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    cx, cy = intr.principal_point
    du = px[:, 0] - cx
    dv = px[:, 1] - cy
    rp = np.hypot(du, dv)
    theta = np.arctan(rp / pinhole_focal)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rp > 0, intr.radius(theta) / np.where(rp > 0, rp, 1.0), 1.0)
    out = np.stack([cx + scale * du, cy + scale * dv], axis=-1)
    out[theta > intr.fov_max_rad] = np.nan
    return out


def rectify_pixel(pixel, cam: FisheyeCamera, pinhole_focal: float) -> Optional[Point2]:
    """Ideal-pinhole pixel for the ray through a fisheye pixel."""
    return _single(rectify_pixels([pixel], cam.intrinsics, pinhole_focal))


def derive_ground_homography(cam: FisheyeCamera, pinhole_focal: float, bev: BevSpec) -> np.ndarray:
    """Closed-form homography from rectified-pinhole pixels to BEV pixels.

    A ground point ``(X, Y, 0)`` lands on the pinhole image at
    ``K [r1 r2 -R t] [X Y 1]^T``; the BEV image places it at
    ``A [X Y 1]^T``. Hence ``H = A G^-1`` with ``G = K [r1 r2 -R t]``.
    """
    if not pinhole_focal > 0:
        raise ValueError(f"pinhole_focal must be positive, got {pinhole_focal}")
    cx, cy = cam.intrinsics.principal_point
    K = np.array([[pinhole_focal, 0.0, cx], [0.0, pinhole_focal, cy], [0.0, 0.0, 1.0]])
    R = cam.rotation
    G = K @ np.column_stack([R[:, 0], R[:, 1], -R @ cam.position])
    # Scale-free singularity test on the normalized ground-to-image map.
    if abs(np.linalg.det(G / np.abs(G).max())) < 1e-12:
        raise DegenerateView(f"camera {cam.label!r} sees the ground plane edge-on")
    H = bev.vehicle_to_pixel_matrix() @ np.linalg.inv(G)
    if H[2, 2] != 0.0:
        H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateView(f"ground homography of camera {cam.label!r} is singular")
    return H
