import math

import numpy as np
import pytest

from oracles import brute_force_cast
from swm.geo_core import CameraIntrinsics, CameraPose
from swm.synthcity import (
    CAMERA_HEIGHT,
    DEFAULT_VIEW_INTRINSICS,
    SKY_COLOR,
    generate_city,
    grid_route,
    polyline_distance,
    poses_along,
    render_analytic,
    render_ids,
    sample_streetview_db,
    sample_trajectory,
    transient_mask,
)

SMALL = CameraIntrinsics.from_fov(math.pi / 2, 96, 64)


def boxes_overlap_road(city, boxes):
    for lo, hi in boxes:
        for road in city.roads:
            a, b = np.array(road.start), np.array(road.end)
            # road strip as an axis-aligned rectangle (roads are axis aligned)
            rlo = np.minimum(a, b) - city.road_half_width
            rhi = np.maximum(a, b) + city.road_half_width
            if np.all(lo[:2] < rhi) and np.all(hi[:2] > rlo):
                return True
    return False


class TestGenerateCity:
    def test_deterministic(self):
        a, b = generate_city(3), generate_city(3)
        assert a.fingerprint() == b.fingerprint()
        assert generate_city(4).fingerprint() != a.fingerprint()

    def test_default_content(self, city):
        assert len(city.buildings) >= 10
        # the grid closes loops as soon as there are 2 lines in each direction
        assert len(city.roads) >= 4

    def test_tiny_extent(self):
        c = generate_city(1, extent=5.0)
        assert len(c.roads) == 1
        assert len(c.buildings) == 0
        rgb, depth = render_analytic(c, CameraPose.looking([1, 0, CAMERA_HEIGHT], 0.0), SMALL)
        assert rgb.shape == (64, 96, 3)

    @pytest.mark.parametrize("seed", range(10))
    def test_buildings_never_touch_roads(self, seed):
        c = generate_city(seed)
        assert not boxes_overlap_road(c, c.buildings)
        lo, hi = c.buildings[:, 0], c.buildings[:, 1]
        assert np.all(hi > lo)

    def test_sessions_differ_only_in_transients(self, city):
        a, _ = city.boxes_for("s0")
        b, _ = city.boxes_for("s1")
        nb = len(city.buildings)
        np.testing.assert_array_equal(a[:nb], b[:nb])
        assert not np.array_equal(city.session_transients("s0"), city.session_transients("s1"))


class TestRender:
    def test_matches_brute_force(self, city, rng):
        for session in ("s0", "s1"):
            for _ in range(6):
                pose = sample_trajectory(city, rng, n_poses=1)[0]
                pose = CameraPose.looking(pose.translation, rng.uniform(-math.pi, math.pi), rng.uniform(-0.3, 0.3))
                depth, ids, _ = render_ids(city, pose, DEFAULT_VIEW_INTRINSICS, session)
                d_ref, id_ref = brute_force_cast(city, pose, DEFAULT_VIEW_INTRINSICS, session)
                np.testing.assert_array_equal(np.isnan(depth), np.isnan(d_ref))
                np.testing.assert_allclose(depth, d_ref, rtol=1e-12, equal_nan=True)
                # face ids can differ only where two faces are hit at the same depth (box edges)
                assert (ids != id_ref).mean() < 1e-3

    def test_sky(self, city):
        # city corner, facing away from every building
        pose = CameraPose.looking([0, 0, CAMERA_HEIGHT], -3 * math.pi / 4, pitch=0.5)
        rgb, depth = render_analytic(city, pose, SMALL)
        assert np.isnan(depth[0, 0])
        np.testing.assert_array_equal(rgb[0, 0], SKY_COLOR)

    def test_wall_distance(self):
        c = generate_city(0, extent=5.0)
        c.buildings = np.array([[[20.0, -50.0, 0.0], [30.0, 50.0, 30.0]]])
        c.building_colors = np.full((1, 6, 3), 200, dtype=np.uint8)
        c.__dict__.pop("_scene_cache", None)
        intr = CameraIntrinsics(100, 100, 50.0, 50.0, 100, 100)
        _, depth = render_analytic(c, CameraPose.looking([10.0, 0.0, 5.0], 0.0), intr)
        assert depth[50, 50] == 10.0

    def test_sessions_differ_only_on_transients(self, city, rng):
        for _ in range(5):
            pose = sample_trajectory(city, rng, n_poses=1)[0]
            a, da = render_analytic(city, pose, DEFAULT_VIEW_INTRINSICS, "s0")
            b, db_ = render_analytic(city, pose, DEFAULT_VIEW_INTRINSICS, "s1")
            dyn = transient_mask(city, pose, DEFAULT_VIEW_INTRINSICS, "s0") | transient_mask(city, pose, DEFAULT_VIEW_INTRINSICS, "s1")
            diff = np.any(a != b, axis=-1) | ~np.isclose(da, db_, equal_nan=True)
            assert not np.any(diff & ~dyn)


class TestStreetViewDB:
    def test_straight_road_count(self):
        c = generate_city(0, extent=100.0, block=200.0)
        recs = sample_streetview_db(c, sessions=("s0",), jitter=0.0, lane_jitter=0.0)
        assert len(recs) == 11

    def test_jitter_bounds(self, db):
        for session in ("s0", "s1"):
            for road in range(12):
                st = np.array([r.station for r in db if r.session_id == session and r.road == road])
                gaps = np.diff(st)
                assert gaps.min() >= 8.0 - 1e-9 and gaps.max() <= 12.0 + 1e-9

    def test_session_gap(self, db):
        t0 = [r.timestamp for r in db if r.session_id == "s0"]
        t1 = [r.timestamp for r in db if r.session_id == "s1"]
        assert min(abs(a - b) for a in (min(t0), max(t0)) for b in (min(t1), max(t1))) >= 3600

    def test_records_valid(self, db, city):
        assert len(db) >= 500
        assert len({r.id for r in db}) == len(db)
        assert city.on_road(np.array([r.local_position[:2] for r in db])).all()

    def test_byte_identical(self, city):
        a = sample_streetview_db(city, sessions=("s0",))[:3]
        b = sample_streetview_db(city, sessions=("s0",))[:3]
        for ra, rb in zip(a, b):
            assert ra.id == rb.id
            np.testing.assert_array_equal(ra.local_position, rb.local_position)
            assert ra.views[2].image.tobytes() == rb.views[2].image.tobytes()
            assert ra.views[2].depth.tobytes() == rb.views[2].depth.tobytes()


class TestRoutes:
    def test_route_length(self, city, rng):
        for length in (100.0, 500.0):
            way = grid_route(city, length, rng)
            seg = np.diff(way, axis=0)
            assert np.hypot(seg[:, 0], seg[:, 1]).sum() == pytest.approx(length)
            assert city.on_road(way).all()

    def test_poses_along(self, city, rng):
        way = grid_route(city, 100.0, rng)
        poses = poses_along(way, 365)
        assert len(poses) == 365
        np.testing.assert_allclose(poses[0].translation[:2], way[0])
        np.testing.assert_allclose(poses[-1].translation[:2], way[-1], atol=1e-9)
        assert polyline_distance(np.array([p.translation for p in poses]), way).max() < 1e-9
