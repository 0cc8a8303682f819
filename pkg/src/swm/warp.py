"""Depth-based forward warping and equirectangular to pinhole rendering."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geo_core import CameraIntrinsics, CameraPose, rotation_from_yaw_pitch_roll
from .pano_index import MIN_DEPTH, PinholeView, RetrievalResult


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) world meters
    colors: np.ndarray  # (N, 3) uint8
    source_id: str = ""

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class WarpedFrame:
    image: np.ndarray  # (H, W, 3) uint8, zeros where invalid
    validity: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float, inf where invalid
    source_ref_id: str


def unproject(view: PinholeView) -> PointCloud:
    """Lift every valid-depth pixel of ``view`` to a world-space point."""
    depth = np.asarray(view.depth, dtype=np.float64)
    vs, us = np.nonzero(np.isfinite(depth) & (depth > 0))
    rays = view.intrinsics.pixel_rays(us, vs)
    pts = view.pose.apply(rays * depth[vs, us, None])
    return PointCloud(pts, np.asarray(view.image)[vs, us], view.id)


def project(points: np.ndarray, pose: CameraPose, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates (N, 2) and camera z-depth (N,) of world points."""
    cam = pose.world_to_camera(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return np.stack([u, v], axis=1), z


def splat(cloud: PointCloud, target_pose: CameraPose, target_intrinsics: CameraIntrinsics) -> WarpedFrame:
    """Single-pixel z-buffered forward splat of ``cloud`` into the target camera."""
    h, w = target_intrinsics.shape
    image = np.zeros((h, w, 3), dtype=np.uint8)
    zbuf = np.full((h, w), np.inf)
    valid = np.zeros((h, w), dtype=bool)
    if len(cloud):
        uv, z = project(cloud.points, target_pose, target_intrinsics)
        front = z > MIN_DEPTH
        # pixel i spans [i, i+1), so floor picks the pixel with the nearest center
        with np.errstate(invalid="ignore"):
            px = np.floor(uv[:, 0])
            py = np.floor(uv[:, 1])
        keep = front & (px >= 0) & (px < w) & (py >= 0) & (py < h)
        idx = np.nonzero(keep)[0]
        if len(idx):
            flat = py[idx].astype(np.int64) * w + px[idx].astype(np.int64)
            zk = z[idx]
            # nearest point per pixel; ties resolved by point order
            order = np.lexsort((idx, zk, flat))
            flat_sorted = flat[order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = flat_sorted[1:] != flat_sorted[:-1]
            win = order[first]
            pix = flat[win]
            image.reshape(-1, 3)[pix] = cloud.colors[idx[win]]
            zbuf.reshape(-1)[pix] = zk[win]
            valid.reshape(-1)[pix] = True
    return WarpedFrame(image, valid, zbuf, cloud.source_id)


def warp_view(view: PinholeView, target_pose: CameraPose, target_intrinsics: CameraIntrinsics) -> WarpedFrame:
    return splat(unproject(view), target_pose, target_intrinsics)


def _nearest_ref(views: Sequence[PinholeView], pose: CameraPose) -> int:
    best = None
    for i, v in enumerate(views):
        d = float(np.sqrt(((v.pose.translation - pose.translation) ** 2).sum()))
        key = (d, v.id)
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


def assign_sources(trajectory: Sequence[CameraPose], views: Sequence[PinholeView]) -> list[int]:
    """Index of the spatially nearest reference for each pose (ties go to the lower id)."""
    return [_nearest_ref(views, p) for p in trajectory]


def warp_chunk(
    trajectory: Sequence[CameraPose],
    refs: RetrievalResult | Sequence[PinholeView],
    target_intrinsics: CameraIntrinsics | None = None,
    workers: int = 1,
) -> list[WarpedFrame]:
    """Warp the nearest reference into every trajectory pose.

    With no references every frame comes back fully invalid, which callers
    treat as warp dropout.
    """
    views = refs.views if isinstance(refs, RetrievalResult) else list(refs)
    if target_intrinsics is None:
        if not views:
            raise ValidationError("target intrinsics are required when there are no references")
        target_intrinsics = views[0].intrinsics
    if not views:
        h, w = target_intrinsics.shape
        return [
            WarpedFrame(np.zeros((h, w, 3), np.uint8), np.zeros((h, w), bool), np.full((h, w), np.inf), "")
            for _ in trajectory
        ]
    sources = assign_sources(trajectory, views)
    clouds = {i: unproject(views[i]) for i in sorted(set(sources))}

    def one(t):
        return splat(clouds[sources[t]], trajectory[t], target_intrinsics)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(trajectory))))
    return [one(t) for t in range(len(trajectory))]


# --- equirectangular panoramas ---------------------------------------------


@dataclass(frozen=True, eq=False)
class Panorama:
    """Equirectangular raster, 2:1, longitude 0 at the center column.

    Longitude grows to the right (clockwise seen from above), latitude up.
    ``heading`` is the world yaw (CCW from east) of longitude 0, so a
    longitude ``lam`` faces world yaw ``heading - lam``.
    """

    image: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim not in (2, 3) or img.shape[1] != 2 * img.shape[0] or img.shape[0] < 2:
            raise ValidationError(f"equirectangular panorama must be H x 2H, got {img.shape}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def sample_equirect(pano: Panorama, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Bilinear lookup at longitude/latitude (radians), wrapping longitude and clamping at the poles."""
    img = np.asarray(pano.image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    x = (np.asarray(lon) + math.pi) / (2 * math.pi) * w - 0.5
    y = (math.pi / 2 - np.asarray(lat)) / math.pi * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = x0 % w, (x0 + 1) % w
    ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    top = img[ya, xa] * (1 - fx) + img[ya, xb] * fx
    bot = img[yb, xa] * (1 - fx) + img[yb, xb] * fx
    out = top * (1 - fy) + bot * fy
    return out if np.asarray(pano.image).ndim == 3 else out[..., 0]


def _pano_camera_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-panorama rotation; the panorama frame is RDF at longitude 0."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    # positive pitch looks up (towards -y)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def pinhole_rays_in_pano(yaw: float, pitch: float, roll: float, out: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    rays = out.pixel_rays() @ _pano_camera_rotation(yaw, pitch, roll).T
    lon = np.arctan2(rays[..., 0], rays[..., 2])
    lat = np.arctan2(-rays[..., 1], np.hypot(rays[..., 0], rays[..., 2]))
    return lon, lat


def render_pinhole(
    pano: Panorama,
    yaw: float,
    pitch: float,
    roll: float,
    fov_h: float,
    out: CameraIntrinsics,
) -> np.ndarray:
    """Perspective view of ``pano`` looking at longitude ``yaw`` and latitude ``pitch``.

    ``fov_h`` overrides the focal lengths of ``out`` (square pixels, principal
    point kept). Output dtype follows the panorama (uint8 is rounded).
    """
    if not 0 < fov_h < math.pi:
        raise ValidationError(f"fov_h must be in (0, pi), got {fov_h}")
    f = (out.width / 2.0) / math.tan(fov_h / 2.0)
    intr = CameraIntrinsics(f, f, out.cx, out.cy, out.width, out.height)
    lon, lat = pinhole_rays_in_pano(yaw, pitch, roll, intr)
    vals = sample_equirect(pano, lon, lat)
    if np.asarray(pano.image).dtype == np.uint8:
        return np.clip(np.round(vals), 0, 255).astype(np.uint8)
    return vals


def pano_view_pose(pano: Panorama, position, yaw: float, pitch: float = 0.0) -> CameraPose:
    """World pose (ENU) of a pinhole rendered at panorama longitude ``yaw``."""
    return CameraPose(rotation_from_yaw_pitch_roll(pano.heading - yaw, pitch), np.asarray(position, dtype=np.float64))
