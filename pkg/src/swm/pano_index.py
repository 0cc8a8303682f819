"""Geo-indexed street-view database and two-stage reference retrieval.

Stage 1 gathers panoramas within a radius of the target trajectory. Stage 2
picks, for each candidate, the pinhole view facing the way the nearest
trajectory camera faces and keeps it if enough of its depth-lifted pixels land
inside that camera's image.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoSinkAvailable, ValidationError
from .geo_core import CameraIntrinsics, CameraPose, GeoPoint

N_VIEWS = 8
VIEW_SPACING = 2 * math.pi / N_VIEWS
DEFAULT_RADIUS = 40.0
DEFAULT_COVERAGE_THRESHOLD = 0.3
DEFAULT_STRIDE = 8
MIN_DEPTH = 1e-6


class PinholeView:
    """One perspective rendering of a panorama: rasters, intrinsics and pose.

    Rasters may be given directly or produced on demand by ``loader``
    (returning ``(image, depth)``); loaded rasters are cached until
    :meth:`release`.
    """

    def __init__(
        self,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        parent_id: str,
        yaw_index: int | None,
        image: np.ndarray | None = None,
        depth: np.ndarray | None = None,
        loader: Callable[[], tuple[np.ndarray, np.ndarray]] | None = None,
        image_path: str | None = None,
        depth_path: str | None = None,
    ):
        # None marks a free view that is not one of the 8 panorama renderings
        if yaw_index is not None and not 0 <= yaw_index < N_VIEWS:
            raise ValidationError(f"yaw_index must be in [0, 8), got {yaw_index}")
        if image is None and depth is None and loader is None:
            raise ValidationError("a view needs rasters or a loader")
        self.intrinsics = intrinsics
        self.pose = pose
        self.parent_id = parent_id
        self.yaw_index = None if yaw_index is None else int(yaw_index)
        self.loader = loader
        self.image_path = image_path
        self.depth_path = depth_path
        self._image = None
        self._depth = None
        if image is not None or depth is not None:
            self._set(image, depth)

    @property
    def id(self) -> str:
        return self.parent_id if self.yaw_index is None else f"{self.parent_id}:{self.yaw_index}"

    def _set(self, image, depth):
        if image is not None:
            image = np.asarray(image)
            if image.shape[:2] != self.intrinsics.shape:
                raise ValidationError(f"image {image.shape[:2]} does not match intrinsics {self.intrinsics.shape}")
        if depth is not None:
            depth = np.asarray(depth)
            if depth.shape != self.intrinsics.shape:
                raise ValidationError(f"depth {depth.shape} does not match intrinsics {self.intrinsics.shape}")
            valid = np.isfinite(depth)
            if np.any(depth[valid] <= 0):
                raise ValidationError("depth must be positive where valid (NaN marks invalid)")
        self._image, self._depth = image, depth

    def _load(self):
        if self.loader is None:
            raise ValidationError(f"view {self.id} has no rasters")
        self._set(*self.loader())

    @property
    def image(self) -> np.ndarray:
        if self._image is None:
            self._load()
        return self._image

    @property
    def depth(self) -> np.ndarray:
        if self._depth is None:
            self._load()
        return self._depth

    def release(self) -> None:
        """Drop cached rasters (only if they can be reloaded)."""
        if self.loader is not None:
            self._image = self._depth = None

    @property
    def yaw(self) -> float:
        f = self.pose.forward
        return math.atan2(f[1], f[0])

    def __repr__(self):
        return f"PinholeView({self.id})"


@dataclass(eq=False)
class PanoramaRecord:
    """A geo-located, timestamped panorama stored as 8 pinhole views."""

    id: str
    geo: GeoPoint
    local_position: np.ndarray
    timestamp: float
    session_id: str
    heading: float
    views: list[PinholeView]
    road: int | None = None
    station: float | None = None
    # optional hook rendering this location at an arbitrary pose
    renderer: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        self.local_position = np.asarray(self.local_position, dtype=np.float64)
        if not self.timestamp > 0:
            raise ValidationError(f"{self.id}: timestamp must be positive")
        if len(self.views) != N_VIEWS:
            raise ValidationError(f"{self.id}: expected 8 views, got {len(self.views)}")
        if sorted(v.yaw_index for v in self.views) != list(range(N_VIEWS)):
            raise ValidationError(f"{self.id}: views must cover yaw indices 0..7")
        self.views = sorted(self.views, key=lambda v: v.yaw_index)
        y0 = self.views[0].yaw
        for v in self.views:
            gap = (v.yaw - y0 - v.yaw_index * VIEW_SPACING + math.pi) % (2 * math.pi) - math.pi
            if abs(gap) > 1e-6:
                raise ValidationError(f"{self.id}: view {v.yaw_index} is not at 45° spacing")
            if np.linalg.norm(v.pose.translation - self.local_position) > 0.5:
                raise ValidationError(f"{self.id}: view {v.yaw_index} is more than 0.5 m from the panorama")

    def best_view(self, direction: np.ndarray) -> PinholeView:
        """View whose forward axis best matches ``direction`` in the horizontal plane."""
        return self.views[best_yaw_index(self.views, direction)]


def best_yaw_index(views: Sequence[PinholeView], direction: np.ndarray) -> int:
    d = np.array(direction, dtype=np.float64)
    d[2] = 0.0
    if np.linalg.norm(d) < 1e-9:
        # looking straight up or down: fall back to the full vector
        d = np.asarray(direction, dtype=np.float64)
    scores = []
    for v in views:
        f = v.pose.forward.copy()
        f[2] = 0.0
        n = np.linalg.norm(f)
        scores.append(float(f @ d) / n if n > 0 else -np.inf)
    # argmax picks the lowest index among exact ties
    return int(np.argmax(scores))


@dataclass(frozen=True)
class RetrievedReference:
    view: PinholeView
    coverage: float
    distance: float


@dataclass
class RetrievalResult:
    """Up to K references ordered by distance to the trajectory."""

    entries: list[RetrievedReference] = field(default_factory=list)

    @property
    def views(self) -> list[PinholeView]:
        return [e.view for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


class SpatialIndex:
    """Exact k-nearest / radius search over panorama positions.

    Results are sorted by (distance, id) so they match a linear scan even
    when distances tie.
    """

    def __init__(self, records: Sequence[PanoramaRecord]):
        self.records = list(records)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate panorama ids: {dup[:5]}")
        self.by_id = {r.id: r for r in self.records}
        self.positions = np.array([r.local_position for r in self.records], dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self.positions) if self.records else None

    def __len__(self):
        return len(self.records)

    def _dist(self, idx: np.ndarray, point: np.ndarray) -> np.ndarray:
        return np.sqrt(((self.positions[idx] - point) ** 2).sum(axis=1))

    def _sorted(self, idx, point, exclusion=frozenset()):
        idx = np.asarray([i for i in idx if self.records[i].id not in exclusion], dtype=np.int64)
        if len(idx) == 0:
            return []
        d = self._dist(idx, point)
        order = sorted(range(len(idx)), key=lambda j: (d[j], self.records[idx[j]].id))
        return [(self.records[idx[j]], float(d[j])) for j in order]

    def radius(self, point, r: float, exclusion: Iterable[str] = ()) -> list[tuple[PanoramaRecord, float]]:
        if self._tree is None:
            return []
        point = np.asarray(point, dtype=np.float64)
        idx = self._tree.query_ball_point(point, r * (1 + 1e-12) + 1e-12)
        hits = self._sorted(idx, point, frozenset(exclusion))
        return [h for h in hits if h[1] <= r]

    def knn(self, point, k: int, exclusion: Iterable[str] = ()) -> list[tuple[PanoramaRecord, float]]:
        if self._tree is None or k <= 0:
            return []
        exclusion = frozenset(exclusion)
        point = np.asarray(point, dtype=np.float64)
        n = len(self.records)
        want = min(n, k + len(exclusion))
        d, idx = self._tree.query(point, k=want)
        kept = [dj for dj, i in zip(np.atleast_1d(d), np.atleast_1d(idx)) if self.records[i].id not in exclusion]
        if len(kept) < k:
            cand = range(n)
        else:
            # widen to catch every record tied with the k-th distance
            cand = self._tree.query_ball_point(point, kept[k - 1] * (1 + 1e-9) + 1e-9)
        return self._sorted(cand, point, exclusion)[:k]

    def nearest(self, point, exclusion: Iterable[str] = ()) -> tuple[PanoramaRecord, float] | None:
        hits = self.knn(point, 1, exclusion)
        return hits[0] if hits else None


def build_index(records: Sequence[PanoramaRecord]) -> SpatialIndex:
    return SpatialIndex(records)


def sample_grid(intrinsics: CameraIntrinsics, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of the coverage grid: one sample at the center of each stride block."""
    us = np.arange(stride // 2, intrinsics.width, stride)
    vs = np.arange(stride // 2, intrinsics.height, stride)
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    return uu.reshape(-1), vv.reshape(-1)


def reprojection_coverage(
    view: PinholeView,
    target_pose: CameraPose,
    target_intrinsics: CameraIntrinsics,
    stride: int = DEFAULT_STRIDE,
) -> float:
    """Fraction of grid pixels whose depth-lifted point lands in the target image in front of it.

    Pixels with invalid depth count as misses.
    """
    us, vs = sample_grid(view.intrinsics, stride)
    if len(us) == 0:
        return 0.0
    z = view.depth[vs, us].astype(np.float64)
    ok = np.isfinite(z)
    rays = view.intrinsics.pixel_rays(us[ok], vs[ok])
    world = view.pose.apply(rays * z[ok, None])
    cam = target_pose.world_to_camera(world)
    zc = cam[:, 2]
    front = zc > MIN_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        u = target_intrinsics.fx * cam[:, 0] / zc + target_intrinsics.cx
        v = target_intrinsics.fy * cam[:, 1] / zc + target_intrinsics.cy
    inside = front & (u >= 0) & (u < target_intrinsics.width) & (v >= 0) & (v < target_intrinsics.height)
    return float(inside.sum()) / len(us)


def coverage_quantum(intrinsics: CameraIntrinsics, stride: int = DEFAULT_STRIDE) -> float:
    """Documented tolerance between grid and dense coverage: one row plus one column of blocks."""
    us, vs = sample_grid(intrinsics, stride)
    cols = len(np.unique(us))
    rows = len(np.unique(vs))
    return 1.0 / cols + 1.0 / rows


def _nearest_pose(positions: np.ndarray, point: np.ndarray) -> tuple[int, float]:
    d = np.sqrt(((positions - point) ** 2).sum(axis=1))
    j = int(np.argmin(d))  # first index on ties
    return j, float(d[j])


def retrieve_references(
    index: SpatialIndex,
    trajectory: Sequence[CameraPose],
    K: int,
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD,
    exclusion: Iterable[str] = (),
    radius: float = DEFAULT_RADIUS,
    stride: int = DEFAULT_STRIDE,
    target_intrinsics: CameraIntrinsics | None = None,
) -> RetrievalResult:
    """Two-stage retrieval: radius search around the trajectory, then coverage filtering.

    ``target_intrinsics`` defaults to each candidate view's own intrinsics.
    An empty result means no candidate survived.
    """
    if not trajectory:
        raise ValidationError("trajectory must be non-empty")
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if not 0.0 <= coverage_threshold <= 1.0:
        raise ValidationError(f"coverage threshold must be in [0, 1], got {coverage_threshold}")
    if len(index) == 0:
        return RetrievalResult()
    exclusion = frozenset(exclusion)
    traj_pos = np.array([p.translation for p in trajectory])

    candidates: set[int] = set()
    for hits in index._tree.query_ball_point(traj_pos, radius * (1 + 1e-12) + 1e-12):
        candidates.update(hits)

    kept = []
    for i in sorted(candidates):
        rec = index.records[i]
        if rec.id in exclusion:
            continue
        j, dist = _nearest_pose(traj_pos, rec.local_position)
        if dist > radius:
            continue
        target = trajectory[j]
        view = rec.best_view(target.forward)
        intr = target_intrinsics or view.intrinsics
        cov = reprojection_coverage(view, target, intr, stride)
        if cov >= coverage_threshold:
            kept.append(RetrievedReference(view, cov, dist))
    kept.sort(key=lambda e: (e.distance, e.view.parent_id))
    return RetrievalResult(kept[:K])


def retrieve_lookahead(index: SpatialIndex, chunk_end_pose: CameraPose, exclusion: Iterable[str] = ()) -> PinholeView:
    """View of the panorama nearest the chunk endpoint, facing the endpoint's direction."""
    hit = index.nearest(chunk_end_pose.translation, exclusion)
    if hit is None:
        raise NoSinkAvailable("no sink available; plan without sink")
    return hit[0].best_view(chunk_end_pose.forward)


# --- persistence -----------------------------------------------------------

INDEX_MAGIC = b"SWMIDX1\0"
_HEADER = struct.Struct("<8sQ")
_RECORD = struct.Struct("<Q3dddddII")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def id_hash(pano_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(pano_id.encode(), digest_size=8).digest(), "little")


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValidationError("string too long for index string table")
    return _U16.pack(len(b)) + b


def save_index(index: SpatialIndex, path: str, manifest_path: str, view_lines: dict[str, list[int]]) -> None:
    """Write the binary index; layout is documented in docs/index_format.md.

    ``view_lines`` maps each panorama id to the manifest line numbers of its
    8 view records in yaw order.
    """
    rel_manifest = os.path.relpath(os.path.abspath(manifest_path), os.path.dirname(os.path.abspath(path)))
    view_table: list[int] = []
    body = bytearray()
    for rec in index.records:
        lines = view_lines[rec.id]
        offset = len(view_table)
        view_table.extend(lines)
        x, y, z = rec.local_position
        body += _RECORD.pack(
            id_hash(rec.id), x, y, z, rec.timestamp, rec.heading, rec.geo.latitude, rec.geo.longitude, offset, len(lines)
        )
    strings = bytearray()
    for rec in index.records:
        strings += _pack_str(rec.id) + _pack_str(rec.session_id)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(INDEX_MAGIC, len(index.records)))
        f.write(body)
        f.write(_U32.pack(len(view_table)))
        f.write(b"".join(_U32.pack(v) for v in view_table))
        f.write(strings)
        f.write(_pack_str(rel_manifest))


def read_index_file(path: str) -> dict:
    """Parse an index file into plain columns (no rasters are touched)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated index header")
    magic, count = _HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    pos = _HEADER.size
    rows = []
    for _ in range(count):
        rows.append(_RECORD.unpack_from(data, pos))
        pos += _RECORD.size
    (n_views,) = _U32.unpack_from(data, pos)
    pos += _U32.size
    view_table = list(struct.unpack_from(f"<{n_views}I", data, pos))
    pos += 4 * n_views

    def read_str():
        nonlocal pos
        (n,) = _U16.unpack_from(data, pos)
        pos += _U16.size
        s = data[pos : pos + n].decode("utf-8")
        pos += n
        return s

    ids, sessions = [], []
    for _ in range(count):
        ids.append(read_str())
        sessions.append(read_str())
    manifest = read_str()
    if pos != len(data):
        raise ValidationError(f"{path}: {len(data) - pos} trailing bytes")
    for row, pid in zip(rows, ids):
        if row[0] != id_hash(pid):
            raise ValidationError(f"{path}: id hash mismatch for {pid}")
    return {
        "ids": ids,
        "sessions": sessions,
        "rows": rows,
        "view_table": view_table,
        "manifest": os.path.join(os.path.dirname(os.path.abspath(path)), manifest),
    }


def load_index(path: str) -> SpatialIndex:
    """Load an index and attach lazily loaded views from its manifest."""
    from .manifest import read_manifest, view_from_entry

    parsed = read_index_file(path)
    entries = read_manifest(parsed["manifest"], validate_paths=False)
    base = os.path.dirname(parsed["manifest"])
    records = []
    for pid, session, row in zip(parsed["ids"], parsed["sessions"], parsed["rows"]):
        _, x, y, z, ts, heading, lat, lon, off, n = row
        views = [view_from_entry(entries[i], base) for i in parsed["view_table"][off : off + n]]
        records.append(
            PanoramaRecord(
                id=pid,
                geo=GeoPoint(lat, lon),
                local_position=np.array([x, y, z]),
                timestamp=ts,
                session_id=session,
                heading=heading,
                views=views,
            )
        )
    return SpatialIndex(records)
