"""Procedural test city with analytic geometry.

The city is a square road grid on the ground plane (z = 0) with axis-aligned
building boxes inside the blocks and small "parked" boxes on the road
shoulders. Parked boxes are the transient content: each capture session sees
its own seeded subset of them, everything else is identical across sessions.

Rendering is exact ray casting against the boxes and the ground, so depth is
known to float precision and colors identify the face that was hit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .geo_core import CameraIntrinsics, CameraPose, GeoPoint, local_to_geo, rotation_from_yaw_pitch_roll
from .pano_index import PanoramaRecord, PinholeView

SKY_COLOR = np.array([150, 190, 225], dtype=np.uint8)
ROAD_COLOR = np.array([70, 72, 78], dtype=np.uint8)
GROUND_COLOR = np.array([120, 140, 95], dtype=np.uint8)
CAMERA_HEIGHT = 2.5
DEFAULT_ORIGIN = GeoPoint(37.5665, 126.9780)
# face order in the color table: -x, +x, -y, +y, -z, +z
_FACE_SHADE = np.array([0.80, 0.95, 0.72, 0.88, 0.60, 1.0])

# Face ids in rendered id rasters: -1 sky, 0 road, 1 ground, 2 + 6*box + face.
ID_SKY, ID_ROAD, ID_GROUND = -1, 0, 1


@dataclass(frozen=True)
class Road:
    """Straight road centerline from ``start`` to ``end`` (2-D, meters)."""

    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    @property
    def heading(self) -> float:
        return math.atan2(self.end[1] - self.start[1], self.end[0] - self.start[0])

    def point_at(self, s: float) -> np.ndarray:
        a, b = np.asarray(self.start), np.asarray(self.end)
        return a + (b - a) * (s / self.length)


@dataclass(eq=False)
class CityModel:
    seed: int
    extent: float
    roads: list[Road]
    buildings: np.ndarray  # (B, 2, 3) min/max corners
    transients: np.ndarray  # (P, 2, 3)
    road_half_width: float = 6.0
    block: float = 60.0
    building_colors: np.ndarray = field(default=None)  # (B, 6, 3) uint8
    transient_colors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.buildings = np.asarray(self.buildings, dtype=np.float64).reshape(-1, 2, 3)
        self.transients = np.asarray(self.transients, dtype=np.float64).reshape(-1, 2, 3)
        if self.building_colors is None:
            self.building_colors = _face_colors(self.seed, len(self.buildings), salt="building")
        if self.transient_colors is None:
            self.transient_colors = _face_colors(self.seed, len(self.transients), salt="transient")

    def session_transients(self, session: str | None) -> np.ndarray:
        """Boolean mask of the parked boxes present during ``session``."""
        if session is None or len(self.transients) == 0:
            return np.zeros(len(self.transients), dtype=bool)
        rng = np.random.default_rng(_stable_seed(self.seed, "session", session))
        return rng.random(len(self.transients)) < 0.5

    def boxes_for(self, session: str | None) -> tuple[np.ndarray, np.ndarray]:
        """Boxes and per-face colors visible during ``session``; transients last."""
        keep = self.session_transients(session)
        boxes = np.concatenate([self.buildings, self.transients[keep]])
        colors = np.concatenate([self.building_colors, self.transient_colors[keep]])
        return boxes, colors

    def scene(self, session: str | None):
        """Boxes for ``session`` plus their traversal grid, cached per session."""
        cache = self.__dict__.setdefault("_scene_cache", {})
        if session not in cache:
            boxes, _ = self.boxes_for(session)
            boxes = np.ascontiguousarray(boxes)
            cache[session] = (boxes, _box_grid(boxes))
        return cache[session]

    def on_road(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        hit = np.zeros(len(xy), dtype=bool)
        for road in self.roads:
            hit |= _segment_distance(xy, road) <= self.road_half_width
        return hit

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.buildings, self.transients, self.building_colors, self.transient_colors):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr([(r.start, r.end) for r in self.roads]).encode())
        return h.hexdigest()

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([-self.road_half_width, -self.road_half_width])
        hi = np.array([self.extent + self.road_half_width] * 2)
        return lo, hi


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _face_colors(seed: int, n: int, salt: str) -> np.ndarray:
    rng = np.random.default_rng(_stable_seed(seed, salt))
    base = rng.uniform(90, 235, size=(n, 1, 3))
    return np.clip(np.round(base * _FACE_SHADE[None, :, None]), 0, 255).astype(np.uint8)


def _segment_distance(xy: np.ndarray, road: Road) -> np.ndarray:
    a = np.asarray(road.start)
    b = np.asarray(road.end)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.linalg.norm(xy - a, axis=1)
    t = np.clip((xy - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(xy - (a + t[:, None] * ab), axis=1)


def generate_city(seed: int, extent: float = 300.0, block: float = 60.0, road_half_width: float = 6.0) -> CityModel:
    """Seeded road grid with buildings in the blocks and parked boxes on shoulders.

    Lines run every ``block`` meters over ``[0, extent]`` in both axes. An
    extent shorter than one block yields a single road segment along x.
    """
    if not extent > 0:
        raise ValueError(f"extent must be positive, got {extent}")
    rng = np.random.default_rng(_stable_seed(seed, "city"))
    n_lines = int(math.floor(extent / block + 1e-9)) + 1
    if n_lines < 2:
        roads = [Road((0.0, 0.0), (float(extent), 0.0))]
        coords = [0.0]
    else:
        coords = [i * block for i in range(n_lines)]
        span = coords[-1]
        roads = [Road((0.0, c), (span, c)) for c in coords] + [Road((c, 0.0), (c, span)) for c in coords]

    setback = road_half_width + 3.0
    buildings = []
    if n_lines >= 2:
        for i in range(n_lines - 1):
            for j in range(n_lines - 1):
                x0, y0 = coords[i] + setback, coords[j] + setback
                x1, y1 = coords[i + 1] - setback, coords[j + 1] - setback
                if x1 - x0 < 4 or y1 - y0 < 4:
                    continue
                # 2x2 lots with a 2 m alley between them
                xm, ym = (x0 + x1) / 2, (y0 + y1) / 2
                lots = [(x0, y0, xm - 1, ym - 1), (xm + 1, y0, x1, ym - 1), (x0, ym + 1, xm - 1, y1), (xm + 1, ym + 1, x1, y1)]
                for lx0, ly0, lx1, ly1 in lots:
                    if rng.random() < 0.15:
                        continue
                    w, d = lx1 - lx0, ly1 - ly0
                    bx0 = lx0 + rng.uniform(0, 0.2) * w
                    by0 = ly0 + rng.uniform(0, 0.2) * d
                    bx1 = lx1 - rng.uniform(0, 0.2) * w
                    by1 = ly1 - rng.uniform(0, 0.2) * d
                    height = rng.uniform(6.0, 40.0)
                    buildings.append([[bx0, by0, 0.0], [bx1, by1, height]])

    transients = []
    for road in roads:
        # parked boxes every ~15 m along both shoulders, away from intersections
        n = int(road.length // 15)
        for k in range(n):
            s = (k + 0.5) * road.length / max(n, 1)
            if n_lines >= 2 and min(s % block, block - s % block) < road_half_width + 3:
                continue
            for side in (-1, 1):
                if rng.random() < 0.4:
                    continue
                c = road.point_at(s)
                h = road.heading
                normal = np.array([-math.sin(h), math.cos(h)])
                center = c + normal * side * (road_half_width - 1.3)
                along = np.abs(np.array([math.cos(h), math.sin(h)])) * 2.2
                across = np.abs(normal) * 0.9
                half = along + across
                height = rng.uniform(1.4, 2.2)
                transients.append([[center[0] - half[0], center[1] - half[1], 0.0], [center[0] + half[0], center[1] + half[1], height]])

    return CityModel(
        seed=seed,
        extent=float(extent),
        roads=roads,
        buildings=np.array(buildings, dtype=np.float64).reshape(-1, 2, 3),
        transients=np.array(transients, dtype=np.float64).reshape(-1, 2, 3),
        road_half_width=road_half_width,
        block=block,
    )


GRID_CELL = 8.0


@njit(cache=True)
def _slab(ox, oy, oz, dx, dy, dz, boxes, b):
    """Entry distance and face of ray vs box ``b``; (inf, -1) on a miss."""
    tmin = -np.inf
    tmax = np.inf
    face = -1
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        lo = boxes[b, 0, a]
        hi = boxes[b, 1, a]
        if d[a] == 0.0:
            if o[a] < lo or o[a] > hi:
                return np.inf, -1
            continue
        t0 = (lo - o[a]) / d[a]
        t1 = (hi - o[a]) / d[a]
        f = 2 * a
        if t0 > t1:
            t0, t1 = t1, t0
            f = 2 * a + 1
        if t0 > tmin:
            tmin = t0
            face = f
        if t1 < tmax:
            tmax = t1
    if tmin > tmax or tmin <= 0.0 or face < 0:
        return np.inf, -1
    return tmin, face


@njit(cache=True)
def _cast(origin, dirs, boxes, road_xy, road_half_width, gx0, gy0, cs, nx, ny, cell_start, cell_items):
    """Nearest hit per ray via 2-D grid traversal: returns (t, face_id), t NaN for sky."""
    n = dirs.shape[0]
    ts = np.full(n, np.nan)
    ids = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    gx1 = gx0 + nx * cs
    gy1 = gy0 + ny * cs
    for i in range(n):
        best = np.inf
        best_id = -1
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        if dz < 0.0:
            t = -oz / dz
            if t > 0.0:
                best = t
                px = ox + t * dx
                py = oy + t * dy
                best_id = 1
                for r in range(road_xy.shape[0]):
                    ax, ay, bx, by = road_xy[r, 0], road_xy[r, 1], road_xy[r, 2], road_xy[r, 3]
                    ex, ey = bx - ax, by - ay
                    den = ex * ex + ey * ey
                    u = 0.0
                    if den > 0.0:
                        u = ((px - ax) * ex + (py - ay) * ey) / den
                        u = min(1.0, max(0.0, u))
                    qx, qy = ax + u * ex - px, ay + u * ey - py
                    if qx * qx + qy * qy <= road_half_width * road_half_width:
                        best_id = 0
                        break
        # clip the ray's xy projection to the grid rectangle
        tenter = 0.0
        texit = np.inf
        miss = False
        if dx == 0.0:
            if ox < gx0 or ox >= gx1:
                miss = True
        else:
            t0 = (gx0 - ox) / dx
            t1 = (gx1 - ox) / dx
            if t0 > t1:
                t0, t1 = t1, t0
            tenter = max(tenter, t0)
            texit = min(texit, t1)
        if dy == 0.0:
            if oy < gy0 or oy >= gy1:
                miss = True
        else:
            t0 = (gy0 - oy) / dy
            t1 = (gy1 - oy) / dy
            if t0 > t1:
                t0, t1 = t1, t0
            tenter = max(tenter, t0)
            texit = min(texit, t1)
        if not miss and tenter <= texit and tenter < best:
            px = ox + tenter * dx
            py = oy + tenter * dy
            cx = min(nx - 1, max(0, int(np.floor((px - gx0) / cs))))
            cy = min(ny - 1, max(0, int(np.floor((py - gy0) / cs))))
            if dx > 0.0:
                stepx = 1
                tmaxx = (gx0 + (cx + 1) * cs - ox) / dx
                tdx = cs / dx
            elif dx < 0.0:
                stepx = -1
                tmaxx = (gx0 + cx * cs - ox) / dx
                tdx = -cs / dx
            else:
                stepx = 0
                tmaxx = np.inf
                tdx = np.inf
            if dy > 0.0:
                stepy = 1
                tmaxy = (gy0 + (cy + 1) * cs - oy) / dy
                tdy = cs / dy
            elif dy < 0.0:
                stepy = -1
                tmaxy = (gy0 + cy * cs - oy) / dy
                tdy = -cs / dy
            else:
                stepy = 0
                tmaxy = np.inf
                tdy = np.inf
            while True:
                c = cy * nx + cx
                for k in range(cell_start[c], cell_start[c + 1]):
                    b = cell_items[k]
                    t, f = _slab(ox, oy, oz, dx, dy, dz, boxes, b)
                    if t < best:
                        best = t
                        best_id = 2 + 6 * b + f
                tcell = min(tmaxx, tmaxy)
                if best <= tcell or tcell >= texit or tcell == np.inf:
                    break
                if tmaxx < tmaxy:
                    cx += stepx
                    tmaxx += tdx
                else:
                    cy += stepy
                    tmaxy += tdy
                if cx < 0 or cx >= nx or cy < 0 or cy >= ny:
                    break
        if best_id != -1:
            ts[i] = best
            ids[i] = best_id
    return ts, ids


def _box_grid(boxes: np.ndarray, cs: float = GRID_CELL):
    """CSR bucket of box indices per grid cell covering all boxes."""
    if len(boxes) == 0:
        return 0.0, 0.0, cs, 1, 1, np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int64)
    gx0 = float(np.floor(boxes[:, 0, 0].min() / cs) * cs)
    gy0 = float(np.floor(boxes[:, 0, 1].min() / cs) * cs)
    nx = int(np.floor((boxes[:, 1, 0].max() - gx0) / cs)) + 1
    ny = int(np.floor((boxes[:, 1, 1].max() - gy0) / cs)) + 1
    buckets: list[list[int]] = [[] for _ in range(nx * ny)]
    for b, (lo, hi) in enumerate(boxes):
        i0, i1 = int((lo[0] - gx0) // cs), min(nx - 1, int((hi[0] - gx0) // cs))
        j0, j1 = int((lo[1] - gy0) // cs), min(ny - 1, int((hi[1] - gy0) // cs))
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                buckets[j * nx + i].append(b)
    start = np.zeros(nx * ny + 1, dtype=np.int64)
    start[1:] = np.cumsum([len(x) for x in buckets])
    items = np.array([b for x in buckets for b in x], dtype=np.int64)
    return gx0, gy0, cs, nx, ny, start, items


def _road_array(city: CityModel) -> np.ndarray:
    return np.array([[*r.start, *r.end] for r in city.roads], dtype=np.float64).reshape(-1, 4)


def render_ids(city: CityModel, pose: CameraPose, intrinsics: CameraIntrinsics, session: str | None = None):
    """Exact z-depth and face-id rasters for ``pose``.

    Returns ``(depth, ids, n_buildings)``; ids follow ``ID_*`` with box faces at
    ``2 + 6*box + face``, boxes being ``city.boxes_for(session)`` in order.
    """
    boxes, grid = city.scene(session)
    rays_cam = intrinsics.pixel_rays().reshape(-1, 3)
    dirs = np.ascontiguousarray(rays_cam @ pose.rotation.T)
    ts, ids = _cast(
        np.ascontiguousarray(pose.translation),
        dirs,
        boxes,
        _road_array(city),
        float(city.road_half_width),
        *grid,
    )
    # rays have unit camera-z, so the ray parameter is the z-depth
    shape = intrinsics.shape
    return ts.reshape(shape), ids.reshape(shape), len(city.buildings)


def colorize(city: CityModel, ids: np.ndarray, session: str | None = None) -> np.ndarray:
    _, colors = city.boxes_for(session)
    table = np.concatenate([SKY_COLOR[None], ROAD_COLOR[None], GROUND_COLOR[None], colors.reshape(-1, 3)])
    return table[ids + 1]


def render_analytic(
    city: CityModel, pose: CameraPose, intrinsics: CameraIntrinsics, session: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """RGB uint8 raster and exact float64 z-depth (NaN for sky)."""
    depth, ids, _ = render_ids(city, pose, intrinsics, session)
    return colorize(city, ids, session), depth


def transient_mask(city: CityModel, pose: CameraPose, intrinsics: CameraIntrinsics, session: str | None) -> np.ndarray:
    """Pixels showing a parked (session-dependent) box."""
    _, ids, nb = render_ids(city, pose, intrinsics, session)
    return ids >= 2 + 6 * nb


DEFAULT_VIEW_INTRINSICS = CameraIntrinsics.from_fov(math.pi / 2, 320, 192)


def _analytic_loader(city, pose, intrinsics, session):
    def load():
        rgb, depth = render_analytic(city, pose, intrinsics, session)
        return rgb, depth.astype(np.float32)

    return load


def panorama_views(
    city: CityModel,
    pano_id: str,
    position: np.ndarray,
    heading: float,
    session: str | None,
    intrinsics: CameraIntrinsics = DEFAULT_VIEW_INTRINSICS,
) -> list[PinholeView]:
    views = []
    for k in range(8):
        pose = CameraPose.looking(position, heading + k * math.pi / 4)
        views.append(
            PinholeView(
                intrinsics=intrinsics,
                pose=pose,
                parent_id=pano_id,
                yaw_index=k,
                loader=_analytic_loader(city, pose, intrinsics, session),
            )
        )
    return views


def sample_streetview_db(
    city: CityModel,
    interval: float = 10.0,
    sessions: tuple[str, ...] = ("s0", "s1"),
    jitter: float = 1.0,
    lane_jitter: float = 1.5,
    base_timestamp: float = 1_700_000_000.0,
    session_gap: float = 86_400.0,
    intrinsics: CameraIntrinsics = DEFAULT_VIEW_INTRINSICS,
    origin: GeoPoint = DEFAULT_ORIGIN,
) -> list[PanoramaRecord]:
    """Street-view panoramas every ``interval`` m (± ``jitter``) along every road, per session.

    Sessions get timestamps ``session_gap`` apart and independent jitter; each
    panorama is stored as 8 lazily rendered pinhole views at 45° spacing.
    """
    if not city.roads:
        raise ValueError("city has no roads")
    if jitter * 2 >= interval:
        raise ValueError("jitter must be below half the interval")
    records = []
    for si, session in enumerate(sessions):
        rng = np.random.default_rng(_stable_seed(city.seed, "db", session, interval, jitter))
        t = base_timestamp + si * session_gap
        for ri, road in enumerate(city.roads):
            n = int(math.floor(road.length / interval + 1e-9))
            stations = np.arange(n + 1) * interval
            if jitter > 0:
                stations[1:-1] += rng.uniform(-jitter, jitter, size=max(n - 1, 0))
                if n >= 1:
                    stations[-1] = min(road.length, stations[-1] + rng.uniform(-jitter, 0))
            h = road.heading
            normal = np.array([-math.sin(h), math.cos(h)])
            for k, s in enumerate(stations):
                xy = road.point_at(float(s))
                if lane_jitter > 0:
                    xy = xy + normal * rng.uniform(-lane_jitter, lane_jitter)
                pos = np.array([xy[0], xy[1], CAMERA_HEIGHT])
                pid = f"{session}-r{ri:02d}-{k:03d}"
                geo = local_to_geo(pos[None], origin)[0]
                records.append(
                    PanoramaRecord(
                        id=pid,
                        geo=geo,
                        local_position=pos,
                        timestamp=t,
                        session_id=session,
                        heading=h,
                        views=panorama_views(city, pid, pos, h, session, intrinsics),
                        road=ri,
                        station=float(s),
                        renderer=_make_renderer(city, session),
                    )
                )
                t += 1.0
    return records


def _make_renderer(city: CityModel, session):
    def render(pose: CameraPose, intrinsics: CameraIntrinsics):
        rgb, depth = render_analytic(city, pose, intrinsics, session)
        return rgb, depth.astype(np.float32)

    return render


def road_route(records: list[PanoramaRecord], session: str, road: int) -> list[PanoramaRecord]:
    """Panoramas of one session along one road, ordered by station."""
    out = [r for r in records if r.session_id == session and r.road == road]
    return sorted(out, key=lambda r: r.station)


def sample_trajectory(
    city: CityModel,
    rng: np.random.Generator,
    n_poses: int = 20,
    step: float = 1.0,
    yaw_jitter: float = math.radians(20),
    lane_offset: float = 2.0,
) -> list[CameraPose]:
    """A forward-driving camera path along a random road at camera height."""
    road = city.roads[rng.integers(len(city.roads))]
    span = step * (n_poses - 1)
    if span > road.length:
        raise ValueError("road too short for the requested trajectory")
    s0 = rng.uniform(0, road.length - span)
    direction = 1 if rng.random() < 0.5 else -1
    h = road.heading
    normal = np.array([-math.sin(h), math.cos(h)])
    offset = rng.uniform(-lane_offset, lane_offset)
    yaw0 = h if direction > 0 else h + math.pi
    yaw_extra = rng.uniform(-yaw_jitter, yaw_jitter)
    poses = []
    for i in range(n_poses):
        s = s0 + i * step if direction > 0 else s0 + span - i * step
        xy = road.point_at(s) + normal * offset
        poses.append(CameraPose.looking([xy[0], xy[1], CAMERA_HEIGHT], yaw0 + yaw_extra))
    return poses


def grid_route(city: CityModel, length: float, rng: np.random.Generator) -> np.ndarray:
    """Waypoints (M, 2) of a random drive over the road grid, exactly ``length`` m long.

    The walk moves between intersections and never makes a U-turn.
    """
    if not length > 0:
        raise ValueError(f"route length must be positive, got {length}")
    n = int(math.floor(city.extent / city.block + 1e-9)) + 1
    if n < 2:
        road = city.roads[0]
        if length > road.length:
            raise ValueError(f"road is {road.length:.1f} m, shorter than the {length:.1f} m route")
        return np.array([road.start, road.point_at(length)], dtype=np.float64)
    node = (int(rng.integers(n)), int(rng.integers(n)))
    pts = [node]
    prev = None
    total = 0.0
    while total < length:
        i, j = node
        moves = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)) if 0 <= i + di < n and 0 <= j + dj < n]
        if prev is not None and len(moves) > 1:
            moves = [m for m in moves if m != prev]
        prev, node = node, moves[int(rng.integers(len(moves)))]
        pts.append(node)
        total += city.block
    way = np.array(pts, dtype=np.float64) * city.block
    # trim the last leg so the polyline is exactly ``length`` long
    over = total - length
    d = way[-1] - way[-2]
    way[-1] = way[-2] + d * (1 - over / city.block)
    return way


def poses_along(waypoints: np.ndarray, n_frames: int, height: float = CAMERA_HEIGHT) -> list[CameraPose]:
    """``n_frames`` forward-facing poses evenly spaced by arc length along the polyline."""
    seg = np.diff(waypoints, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rots = [rotation_from_yaw_pitch_roll(math.atan2(d[1], d[0])) for d in seg]
    stations = np.linspace(0.0, cum[-1], n_frames)
    ks = np.minimum(np.searchsorted(cum, stations, side="right") - 1, len(seg) - 1)
    xy = waypoints[ks, :2] + seg[ks, :2] * ((stations - cum[ks]) / seg_len[ks])[:, None]
    return [CameraPose(rots[k], [x, y, height]) for k, (x, y) in zip(ks, xy)]


def polyline_distance(points: np.ndarray, waypoints: np.ndarray) -> np.ndarray:
    """Horizontal distance from each point to the polyline."""
    xy = np.atleast_2d(points)[:, :2]
    best = np.full(len(xy), np.inf)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        best = np.minimum(best, _segment_distance(xy, Road(tuple(a), tuple(b))))
    return best
