import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surroundslot.errors import AtInfinity
from surroundslot.plane import (
    BevSpec,
    apply_homography,
    apply_homography_many,
    bev_pixel_to_vehicle,
    vehicle_to_bev_pixel,
)


class TestBevSpec:
    def test_default_scale(self):
        assert BevSpec().meters_per_px == 0.0244140625

    def test_center_pixel_near_origin(self, bev):
        X, Y = bev_pixel_to_vehicle((512, 512), bev)
        half = bev.meters_per_px / 2
        assert abs(X) <= half + 1e-15 and abs(Y) <= half + 1e-15
        assert bev_pixel_to_vehicle((511.5, 511.5), bev) == (0.0, 0.0)

    def test_orientation(self, bev):
        u0, v0 = vehicle_to_bev_pixel((0.0, 0.0), bev)
        u, v = vehicle_to_bev_pixel((1.0, 0.0), bev)
        assert v < v0 and u == u0  # forward is up
        u, v = vehicle_to_bev_pixel((0.0, 1.0), bev)
        assert u < u0 and v == v0  # left is left

    def test_round_trip(self, bev):
        px = np.random.default_rng(0).uniform(-100, 1124, (1000, 2))
        back = bev.vehicle_to_pixel(bev.pixel_to_vehicle(px))
        assert np.max(np.abs(back - px)) < 1e-9

    def test_matrix_agrees_with_functions(self):
        bev = BevSpec(640, 480, (16.0, 12.0), origin=(1.5, -2.0))
        pts = np.random.default_rng(1).uniform(-8, 8, (100, 2))
        via_matrix = apply_homography_many(bev.vehicle_to_pixel_matrix(), pts)
        np.testing.assert_allclose(via_matrix, bev.vehicle_to_pixel(pts), atol=1e-9)

    def test_rejects_non_square_pixels(self):
        with pytest.raises(ValueError):
            BevSpec(1024, 1024, (25.0, 20.0))
        with pytest.raises(ValueError):
            BevSpec(0, 1024)


class TestHomography:
    def test_identity(self):
        assert apply_homography(np.eye(3), (3.5, -2.0)) == (3.5, -2.0)

    def test_scale(self):
        assert apply_homography(np.diag([2.0, 2.0, 1.0]), (1.0, 1.0)) == (2.0, 2.0)

    def test_at_infinity(self):
        H = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
        with pytest.raises(AtInfinity):
            apply_homography(H, (0.0, 5.0))
        assert np.isnan(apply_homography_many(H, [(0.0, 5.0)])).all()

    def test_composition(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(500):
            H1 = rng.uniform(-1, 1, (3, 3))
            H2 = rng.uniform(-1, 1, (3, 3))
            p = rng.uniform(-1, 1, 2)
            try:
                q = apply_homography(H2, apply_homography(H1, p))
                r = apply_homography(H2 @ H1, p)
            except AtInfinity:
                continue
            worst = max(worst, float(np.max(np.abs(np.subtract(q, r)))))
        assert worst < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1, 1), min_size=9, max_size=9),
        st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    )
    def test_projective_invariance(self, entries, p):
        H = np.array(entries).reshape(3, 3)
        w = H[2, 0] * p[0] + H[2, 1] * p[1] + H[2, 2]
        if abs(w) < 1e-6:
            return
        base = apply_homography(H, p)
        for c in (-2.0, 0.5, 10.0):
            np.testing.assert_allclose(apply_homography(c * H, p), base, rtol=1e-12, atol=1e-12)
