import math

import numpy as np
import pytest

from surroundslot.camera import CameraExtrinsics, FisheyeCamera, FisheyeIntrinsics, look_rotation
from surroundslot.plane import BevSpec
from surroundslot.scene import RenderPlan, default_rig, texture_window
from surroundslot.stitch import StitchPlan


def random_camera(rng: np.random.Generator) -> FisheyeCamera:
    """Camera with a random pose above the ground and mild random distortion."""
    intr = FisheyeIntrinsics(
        focal_px=float(rng.uniform(250.0, 450.0)),
        principal_point=(float(rng.uniform(600, 680)), float(rng.uniform(360, 440))),
        distortion=(float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-0.003, 0.003))),
        image_size=(1280, 800),
        fov_max_rad=1.9,
    )
    R = look_rotation(rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 1.4))
    t = [rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 3.0)]
    return FisheyeCamera(intr, CameraExtrinsics(R, t), "test")


def visible_ground_points(cam: FisheyeCamera, rng: np.random.Generator, n: int, radius: float = 15.0):
    """Ground points within ``radius`` of the camera that project into its field of view."""
    from surroundslot.camera import project_ground_points

    out = []
    while sum(len(o) for o in out) < n:
        pts = cam.position[:2] + rng.uniform(-radius, radius, (4 * n, 2))
        pix = project_ground_points(pts, cam)
        out.append(pts[~np.isnan(pix[:, 0])])
    return np.concatenate(out)[:n]


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def bev():
    return BevSpec()


@pytest.fixture(scope="session")
def render_plan(rig, bev):
    return RenderPlan.build(rig, texture_window(bev))


@pytest.fixture(scope="session")
def stitch_plan(rig, bev):
    return StitchPlan.build(rig, bev)
