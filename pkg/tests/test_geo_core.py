import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import haversine, homogeneous, random_rotation, rodrigues
from swm.errors import ValidationError
from swm.geo_core import (
    CameraIntrinsics,
    CameraPose,
    GeoPoint,
    RigidTransform,
    axis_angle,
    geo_to_local,
    geodesic_rotation_distance,
    haversine_m,
    local_to_geo,
    plucker_map,
    relative_pose,
    rotation_from_yaw_pitch_roll,
    wrap_angle,
    yaw_of,
)


def random_pose(rng, spread=50.0):
    return CameraPose(random_rotation(rng), rng.uniform(-spread, spread, 3))


class TestIntrinsics:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            CameraIntrinsics(0, 1, 1, 1, 4, 4)
        with pytest.raises(ValidationError):
            CameraIntrinsics(1, 1, 4, 1, 4, 4)
        with pytest.raises(ValidationError):
            CameraIntrinsics(1, 1, 1, 0, 4, 4)

    def test_from_fov(self):
        k = CameraIntrinsics.from_fov(math.pi / 2, 320, 192)
        assert k.fx == pytest.approx(160.0)
        assert (k.cx, k.cy) == (160.0, 96.0)

    def test_pixel_rays_centers(self):
        k = CameraIntrinsics(100, 100, 2, 2, 4, 4)
        r = k.pixel_rays()
        assert r.shape == (4, 4, 3)
        # pixel (1, 1) has its center at (1.5, 1.5)
        np.testing.assert_allclose(r[1, 1], [-0.005, -0.005, 1.0])
        r[0, 0, 0] = 99.0
        assert k.pixel_rays()[0, 0, 0] != 99.0

    def test_dict_round_trip(self):
        k = CameraIntrinsics(120.5, 110.0, 80.0, 40.0, 160, 90)
        assert CameraIntrinsics.from_dict(k.to_dict()) == k


class TestPoses:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValidationError):
            CameraPose(np.diag([1.0, 1.0, 1.001]), np.zeros(3))
        with pytest.raises(ValidationError):
            CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_relative_identity(self, rng):
        p = random_pose(rng)
        assert relative_pose(p, p).allclose(RigidTransform.identity(), atol=1e-12)

    def test_relative_pure_translation(self):
        a = CameraPose(np.eye(3), np.zeros(3))
        b = CameraPose(np.eye(3), np.array([2.0, 0.0, 0.0]))
        t = relative_pose(a, b)
        np.testing.assert_allclose(t.translation, [-2.0, 0.0, 0.0])
        np.testing.assert_allclose(t.rotation, np.eye(3))

    def test_relative_matches_matrix_oracle(self, rng):
        for _ in range(200):
            a, b = random_pose(rng), random_pose(rng)
            expected = np.linalg.inv(homogeneous(b.rotation, b.translation)) @ homogeneous(a.rotation, a.translation)
            np.testing.assert_allclose(relative_pose(a, b).matrix, expected, atol=1e-10)

    def test_relative_maps_ref_points_into_target(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        p_ref = rng.normal(size=(5, 3))
        world = a.apply(p_ref)
        np.testing.assert_allclose(relative_pose(a, b).apply(p_ref), b.world_to_camera(world), atol=1e-9)

    def test_relative_inverse_pair(self, rng):
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            assert relative_pose(a, b).compose(relative_pose(b, a)).allclose(RigidTransform.identity(), atol=1e-9)

    def test_transitivity(self, rng):
        for _ in range(100):
            a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
            lhs = relative_pose(b, c).compose(relative_pose(a, b))
            assert lhs.allclose(relative_pose(a, c), atol=1e-8)

    def test_row_major_round_trip(self, rng):
        p = random_pose(rng)
        q = CameraPose.from_row_major(p.to_row_major())
        assert isinstance(q, CameraPose)
        assert q.allclose(p, atol=0)

    def test_looking_axes(self):
        p = CameraPose.looking([1, 2, 3], yaw=math.pi / 2)
        np.testing.assert_allclose(p.forward, [0, 1, 0], atol=1e-12)
        # image down is world down, image right is the camera's right-hand side
        np.testing.assert_allclose(p.rotation[:, 1], [0, 0, -1], atol=1e-12)
        np.testing.assert_allclose(p.rotation[:, 0], [1, 0, 0], atol=1e-12)
        assert yaw_of(p) == pytest.approx(math.pi / 2)

    def test_pitch_looks_up(self):
        r = rotation_from_yaw_pitch_roll(0.0, 0.3)
        assert r[2, 2] > 0

    def test_wrap_angle(self):
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
        assert wrap_angle(-math.pi) == pytest.approx(-math.pi)


class TestGeodesic:
    def test_trivial(self):
        assert geodesic_rotation_distance(np.eye(3), np.eye(3)) == 0.0
        assert geodesic_rotation_distance(np.eye(3), axis_angle([0, 0, 1], math.pi / 2)) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_axis_angle_oracle(self, rng):
        for _ in range(500):
            r = random_rotation(rng)
            theta = rng.uniform(1e-6, math.pi - 1e-6)
            axis = rng.normal(size=3)
            assert geodesic_rotation_distance(r, r @ rodrigues(axis, theta)) == pytest.approx(theta, abs=1e-7)

    def test_near_zero_and_pi(self, rng):
        r = random_rotation(rng)
        assert geodesic_rotation_distance(r, r @ rodrigues([1, 2, 3], 1e-9)) == pytest.approx(1e-9, abs=1e-12)
        assert geodesic_rotation_distance(r, r @ rodrigues([1, 2, 3], math.pi)) == pytest.approx(math.pi, abs=1e-7)

    def test_symmetry_and_triangle(self, rng):
        for _ in range(1000):
            a, b, c = random_rotation(rng), random_rotation(rng), random_rotation(rng)
            ab = geodesic_rotation_distance(a, b)
            assert ab == pytest.approx(geodesic_rotation_distance(b, a), abs=1e-12)
            assert ab <= geodesic_rotation_distance(a, c) + geodesic_rotation_distance(c, b) + 1e-9


class TestGeo:
    origin = GeoPoint(37.5665, 126.978)

    def test_origin_maps_to_zero(self):
        np.testing.assert_allclose(geo_to_local([self.origin], self.origin), [[0, 0, 0]], atol=1e-9)

    def test_north_offset(self):
        p = GeoPoint(self.origin.latitude + 0.001, self.origin.longitude)
        e, n, u = geo_to_local([p], self.origin)[0]
        expected = haversine(self.origin.latitude, self.origin.longitude, p.latitude, p.longitude)
        assert abs(e) < 1e-6
        assert n == pytest.approx(111.2, abs=0.2)
        assert n == pytest.approx(expected, rel=1e-6)

    def test_pairwise_distance_vs_haversine(self, rng):
        for _ in range(300):
            r = rng.uniform(0, 50_000)
            bearing = rng.uniform(0, 2 * math.pi)
            lat = self.origin.latitude + r * math.cos(bearing) / 111_195
            lon = self.origin.longitude + r * math.sin(bearing) / (111_195 * math.cos(math.radians(self.origin.latitude)))
            a = GeoPoint(lat, lon)
            b = GeoPoint(self.origin.latitude + rng.uniform(-0.2, 0.2), self.origin.longitude + rng.uniform(-0.2, 0.2))
            pa, pb = geo_to_local([a, b], self.origin)
            d_hav = haversine(a.latitude, a.longitude, b.latitude, b.longitude)
            if d_hav > 1.0:
                assert np.linalg.norm(pa[:2] - pb[:2]) == pytest.approx(d_hav, rel=1e-3)

    def test_package_haversine(self):
        a, b = GeoPoint(37.5, 127.0), GeoPoint(37.6, 127.1)
        assert haversine_m(a, b) == pytest.approx(haversine(37.5, 127.0, 37.6, 127.1), rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(ValidationError):
            GeoPoint(0.0, 181.0)
        with pytest.raises(ValidationError):
            geo_to_local([GeoPoint(self.origin.latitude + 1.5, self.origin.longitude)], self.origin)

    def test_round_trip(self, rng):
        enu = rng.uniform(-5000, 5000, (20, 3))
        back = geo_to_local(local_to_geo(enu, self.origin), self.origin)
        np.testing.assert_allclose(back, enu, atol=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(-0.3, 0.3),
        st.floats(-0.3, 0.3),
        st.floats(-0.3, 0.3),
        st.floats(-0.3, 0.3),
    )
    def test_injective(self, dlat1, dlon1, dlat2, dlon2):
        a = GeoPoint(self.origin.latitude + dlat1, self.origin.longitude + dlon1)
        b = GeoPoint(self.origin.latitude + dlat2, self.origin.longitude + dlon2)
        pa, pb = geo_to_local([a, b], self.origin)
        # distinct beyond float resolution of the inputs
        if haversine(a.latitude, a.longitude, b.latitude, b.longitude) > 1e-6:
            assert not np.array_equal(pa, pb)


class TestPlucker:
    intr = CameraIntrinsics.from_fov(math.pi / 2, 64, 48)

    def test_principal_pixel_identity(self):
        intr = CameraIntrinsics(50, 50, 16.5, 12.5, 33, 25)
        m = plucker_map(CameraPose(np.eye(3), np.zeros(3)), intr)
        np.testing.assert_allclose(m.directions[12, 16], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(m.moments[12, 16], [0, 0, 0], atol=1e-12)

    def test_moment_cross_product(self):
        intr = CameraIntrinsics(50, 50, 16.5, 12.5, 33, 25)
        o = np.array([1.0, 0.0, 0.0])
        m = plucker_map(CameraPose(np.eye(3), o), intr)
        np.testing.assert_allclose(m.moments[12, 16], np.cross(o, [0, 0, 1]), atol=1e-12)
        np.testing.assert_allclose(m.moments[12, 16], [0, -1, 0], atol=1e-12)

    def test_invariants_every_pixel(self, rng):
        for _ in range(20):
            pose = random_pose(rng)
            m = plucker_map(pose, self.intr)
            assert m.data.shape == (48, 64, 6)
            m.check(1e-6)
            d = m.directions
            np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
            assert np.abs((d * m.moments).sum(-1)).max() < 1e-9

    def test_direction_matches_unprojection(self, rng):
        pose = random_pose(rng)
        m = plucker_map(pose, self.intr)
        v, u = 7, 40
        ray = np.linalg.inv(self.intr.K) @ [u + 0.5, v + 0.5, 1.0]
        world = pose.rotation @ ray
        np.testing.assert_allclose(m.directions[v, u], world / np.linalg.norm(world), atol=1e-12)
