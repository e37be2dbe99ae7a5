import math

import numpy as np
import pytest

from surroundslot.errors import SizeMismatch
from surroundslot.plane import BevSpec
from surroundslot.scene import (
    LayoutKind,
    RenderPlan,
    crop_to_bev,
    make_scene,
    stroke_segment,
    texture_window,
)
from surroundslot.stitch import StitchPlan, bilinear_sample, synthesize_bev


def smooth_color(xy: np.ndarray) -> np.ndarray:
    """Ground color field band-limited well below the coarsest fisheye sampling.

    At the BEV corners one fisheye pixel spans about 0.3 m of ground, so a
    +-2 bound on double resampling only holds for detail much coarser than
    that; the shortest period here is 18 m.
    """
    X, Y = xy[..., 0], xy[..., 1]
    return np.stack([
        128 + 90 * np.sin(2 * np.pi * X / 18.0) * np.cos(2 * np.pi * Y / 22.0),
        128 + 90 * np.cos(2 * np.pi * (X + Y) / 26.0),
        128 + 90 * np.sin(2 * np.pi * (X - 0.5 * Y) / 20.0),
    ], axis=-1)


@pytest.fixture(scope="module")
def round_trip_scene(render_plan):
    return make_scene(LayoutKind.parse("perp"), 10, seed=3, rows=2, plan=render_plan)


class TestBilinear:
    def test_exact_on_affine_field(self):
        yy, xx = np.mgrid[0:20, 0:30]
        img = (2.0 * xx + 3.0 * yy + 1.0)[:, :, None]
        rng = np.random.default_rng(0)
        xs, ys = rng.uniform(0, 29, 200), rng.uniform(0, 19, 200)
        np.testing.assert_allclose(bilinear_sample(img, xs, ys)[:, 0], 2 * xs + 3 * ys + 1, atol=1e-12)

    def test_clamps_at_edges(self):
        img = np.arange(6, dtype=float).reshape(2, 3)
        assert bilinear_sample(img, np.array([-5.0]), np.array([-5.0]))[0, 0] == 0.0
        assert bilinear_sample(img, np.array([9.0]), np.array([9.0]))[0, 0] == 5.0


class TestSynthesizeBev:
    def test_white_images(self, rig, bev, stitch_plan):
        images = {c.label: np.full((800, 1280, 3), 255, np.uint8) for c in rig}
        out = stitch_plan.apply(images)
        cov = stitch_plan.coverage_mask
        assert np.all(out[cov] == 255)
        assert np.all(out[~cov] == 0)
        assert (~cov).any()

    def test_plan_matches_one_shot(self, rig, round_trip_scene):
        bev = BevSpec(256, 256, (25.0, 25.0))
        a = synthesize_bev(round_trip_scene.images, rig, bev)
        b = StitchPlan.build(rig, bev, threads=3).apply(round_trip_scene.images)
        assert np.array_equal(a, b)

    def test_thread_determinism(self, rig, bev, round_trip_scene):
        one = synthesize_bev(round_trip_scene.images, rig, bev, threads=1)
        eight = synthesize_bev(round_trip_scene.images, rig, bev, threads=8)
        assert one.tobytes() == eight.tobytes()

    def test_accepts_rig_order_sequence(self, rig, stitch_plan, round_trip_scene):
        seq = [round_trip_scene.images[c.label] for c in rig]
        assert np.array_equal(stitch_plan.apply(seq), stitch_plan.apply(round_trip_scene.images))

    def test_size_mismatch(self, rig, stitch_plan):
        images = {c.label: np.zeros((800, 1280, 3), np.uint8) for c in rig}
        images["left"] = np.zeros((600, 1280, 3), np.uint8)
        with pytest.raises(SizeMismatch):
            stitch_plan.apply(images)
        del images["left"]
        with pytest.raises(SizeMismatch):
            stitch_plan.apply(images)

    def test_camera_choice_prefers_nearest_view(self, rig, bev, stitch_plan):
        idx = stitch_plan.camera_index
        labels = [c.label for c in rig]
        for point, label in (((6.0, 0.0), "front"), ((0.0, 6.0), "left"),
                             ((-6.0, 0.0), "rear"), ((0.0, -6.0), "right")):
            u, v = np.rint(bev.vehicle_to_pixel(np.array(point))).astype(int)
            assert labels[idx[v, u]] == label

    def test_coverage_within_ten_meters(self, bev, stitch_plan):
        ground = bev.pixel_grid_vehicle()
        near = np.hypot(ground[..., 0], ground[..., 1]) <= 10.0
        assert stitch_plan.coverage_mask[near].mean() >= 0.95

    def test_texture_fidelity_smooth_ground(self, rig, bev, render_plan, stitch_plan):
        """Covered BEV pixels reproduce the ground color at their ground point."""
        window = render_plan.window
        texture = np.clip(np.rint(smooth_color(window.pixel_grid_vehicle())), 0, 255).astype(np.uint8)
        out = stitch_plan.apply(render_plan.render(texture))
        rng = np.random.default_rng(4)
        vs, us = np.nonzero(stitch_plan.coverage_mask)
        pick = rng.choice(len(vs), 500, replace=False)
        ground = bev.pixel_to_vehicle(np.column_stack([us[pick], vs[pick]]).astype(float))
        expected = smooth_color(ground)
        got = out[vs[pick], us[pick]].astype(float)
        assert np.max(np.abs(got - expected)) <= 2.0
        every = np.abs(out[vs, us] - smooth_color(bev.pixel_to_vehicle(np.column_stack([us, vs]).astype(float))))
        assert every.max() <= 2.0

    def test_no_camera_used_at_its_ninety_degree_limit(self, rig, bev, stitch_plan):
        from surroundslot.camera import ray_angles

        ground = bev.pixel_grid_vehicle().reshape(-1, 2)
        idx = stitch_plan.camera_index.reshape(-1)
        for k, cam in enumerate(rig):
            theta = ray_angles(ground[idx == k], cam)
            assert theta.max() <= np.pi / 2 - 1.0 / cam.intrinsics.focal_px

    def test_round_trip_marking_scene(self, bev, stitch_plan, round_trip_scene):
        out = stitch_plan.apply(round_trip_scene.images).astype(int)
        ref = crop_to_bev(round_trip_scene.texture).astype(int)
        cov = stitch_plan.coverage_mask
        err = np.abs(out - ref).max(axis=-1)[cov]
        assert (err <= 3).mean() >= 0.95


class TestLineStraightness:
    @pytest.mark.parametrize("a,b", [((-9.0, 3.0), (9.0, 3.0)), ((-7.0, -8.0), (8.0, 6.0))])
    def test_painted_line_stays_straight(self, bev, render_plan, stitch_plan, a, b):
        window = render_plan.window
        texture = np.full((window.height_px, window.width_px, 3), 90, np.uint8)
        stroke_segment(texture, window, a, b, 0.12, (255, 255, 255))
        out = stitch_plan.apply(render_plan.render(texture)).astype(float).mean(axis=-1)
        pa, pb = bev.vehicle_to_pixel(np.array([a, b]))
        d = (pb - pa) / np.linalg.norm(pb - pa)
        n = np.array([-d[1], d[0]])
        length = np.linalg.norm(pb - pa)
        deviations = []
        # Sample cross-sections along the ideal line, away from the ends.
        for s in np.linspace(0.05 * length, 0.95 * length, 200):
            c = pa + s * d
            offs = np.arange(-8.0, 8.01, 0.25)
            pts = c + offs[:, None] * n
            prof = bilinear_sample(out[:, :, None], pts[:, 0], pts[:, 1])[:, 0] - 90.0
            u, v = np.rint(c).astype(int)
            if not stitch_plan.coverage_mask[v, u] or prof.max() < 60:
                continue
            w = np.clip(prof, 0, None)
            deviations.append(abs(float((w * offs).sum() / w.sum())))
        assert len(deviations) > 150
        assert max(deviations) < 1.5
