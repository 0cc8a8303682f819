"""Camera models, rigid transforms, GPS to local metric frames, Plücker rays.

Conventions used everywhere in the package:

* Poses are camera-to-world. Camera axes are Right-Down-Forward (RDF).
* The world frame built from GPS is local East-North-Up (z up).
* Pixel ``(u, v)`` has its center at ``(u + 0.5, v + 0.5)``.
* Depth rasters hold z-depth (distance along the optical axis), not ray length.
* World yaw is measured counter-clockwise from east, so a positive yaw
  change is a left turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

ORTHO_TOL = 1e-9
EARTH_RADIUS_M = 6_371_008.8
WORLD_UP = np.array([0.0, 0.0, 1.0])


def _check_rotation(rotation: np.ndarray, tol: float = ORTHO_TOL) -> None:
    if rotation.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got {rotation.shape}")
    if not np.all(np.isfinite(rotation)):
        raise ValidationError("rotation has non-finite entries")
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if err > tol:
        raise ValidationError(f"rotation is not orthonormal (max |RᵀR - I| = {err:.3g})")
    (a, b, c), (d, e, f), (g, h, i) = rotation.tolist()
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    if abs(det - 1.0) > tol:
        raise ValidationError(f"rotation determinant is {det:.12f}, expected +1")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"raster size must be positive, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} raster"
            )

    @classmethod
    def from_fov(cls, fov_h: float, width: int, height: int) -> "CameraIntrinsics":
        """Square-pixel intrinsics with the principal point at the raster center."""
        if not 0 < fov_h < math.pi:
            raise ValidationError(f"horizontal fov must be in (0, pi), got {fov_h}")
        f = (width / 2.0) / math.tan(fov_h / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, int(width), int(height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_rays(self, us: np.ndarray | None = None, vs: np.ndarray | None = None) -> np.ndarray:
        """Camera-frame rays with z == 1 through pixel centers.

        With no arguments returns an (H, W, 3) grid, otherwise rays for the given
        integer pixel coordinates.
        """
        if us is None:
            return _pixel_grid(self).copy()
        us = np.asarray(us, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        x = (us + 0.5 - self.cx) / self.fx
        y = (vs + 0.5 - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"])
        )


@lru_cache(maxsize=16)
def _pixel_grid(intr: CameraIntrinsics) -> np.ndarray:
    vs, us = np.mgrid[0 : intr.height, 0 : intr.width]
    return intr.pixel_rays(us, vs)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(-1)
        if trans.shape != (3,) or not np.all(np.isfinite(trans)):
            raise ValidationError(f"translation must be a finite 3-vector, got {trans!r}")
        _check_rotation(rot)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray):
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValidationError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return type(self)(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform"):
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return type(self)(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_row_major(self) -> list[float]:
        """12 floats: the 3x4 ``[R | t]`` matrix in row-major order."""
        return [float(x) for x in self.matrix[:3, :].reshape(-1)]

    @classmethod
    def from_row_major(cls, values: Sequence[float]):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (12,):
            raise ValidationError(f"pose needs 12 row-major floats, got {arr.size}")
        return cls.from_matrix(arr.reshape(3, 4))

    def __repr__(self):
        return f"{type(self).__name__}(t={np.round(self.translation, 4).tolist()})"


class CameraPose(RigidTransform):
    """Camera-to-world pose with RDF camera axes."""

    @property
    def position(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    @classmethod
    def looking(cls, position, yaw: float, pitch: float = 0.0, roll: float = 0.0) -> "CameraPose":
        """Pose in an ENU world, forward at ``yaw`` (CCW from east), ``pitch`` up, ``roll`` about forward."""
        return cls(rotation_from_yaw_pitch_roll(yaw, pitch, roll), np.asarray(position, dtype=np.float64))


def rotation_from_yaw_pitch_roll(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation of an RDF camera in an ENU (z-up) world."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    forward = np.array([cp * cy, cp * sy, sp])
    # level camera: right = forward x up rotated; down completes the frame
    right0 = np.array([sy, -cy, 0.0])
    down0 = np.array([sp * cy, sp * sy, -(cp * cy * cy + cp * sy * sy)])
    cr, sr = math.cos(roll), math.sin(roll)
    right = cr * right0 + sr * down0
    down = -sr * right0 + cr * down0
    return np.column_stack([right, down, forward])


def yaw_of(pose: CameraPose) -> float:
    """ENU heading of the camera's forward axis, CCW from east."""
    f = pose.forward
    return math.atan2(f[1], f[0])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def relative_pose(reference: CameraPose, target: CameraPose) -> RigidTransform:
    """Transform taking reference-camera coordinates to target-camera coordinates."""
    return RigidTransform(
        target.rotation.T @ reference.rotation,
        target.rotation.T @ (reference.translation - target.translation),
    )


def axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


def geodesic_rotation_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of ``r1ᵀ r2`` in radians, in [0, pi].

    Equal to ``arccos((tr(r1ᵀ r2) - 1) / 2)`` but evaluated with atan2 of the
    sine and cosine parts, which stays accurate near 0 and pi.
    """
    m = np.asarray(r1, dtype=np.float64).T @ np.asarray(r2, dtype=np.float64)
    cos = (np.trace(m) - 1.0) / 2.0
    sin = 0.5 * math.sqrt((m[2, 1] - m[1, 2]) ** 2 + (m[0, 2] - m[2, 0]) ** 2 + (m[1, 0] - m[0, 1]) ** 2)
    cos = min(1.0, max(-1.0, cos))
    return float(min(math.pi, max(0.0, math.atan2(sin, cos))))


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 latitude/longitude in degrees, optional altitude in meters."""

    latitude: float
    longitude: float
    altitude: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.latitude) and abs(self.latitude) <= 90.0):
            raise ValidationError(f"latitude out of range: {self.latitude}")
        if not (math.isfinite(self.longitude) and abs(self.longitude) <= 180.0):
            raise ValidationError(f"longitude out of range: {self.longitude}")

    def to_dict(self) -> dict:
        d = {"lat": self.latitude, "lon": self.longitude}
        if self.altitude is not None:
            d["alt"] = self.altitude
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeoPoint":
        alt = d.get("alt")
        return cls(float(d["lat"]), float(d["lon"]), None if alt is None else float(alt))


def _ecef(lat_deg, lon_deg, alt) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    r = EARTH_RADIUS_M + alt
    return np.stack([r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)], axis=-1)


def _enu_basis(origin: GeoPoint) -> np.ndarray:
    lat = math.radians(origin.latitude)
    lon = math.radians(origin.longitude)
    east = [-math.sin(lon), math.cos(lon), 0.0]
    north = [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)]
    up = [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    return np.array([east, north, up])


MAX_LOCAL_RADIUS_M = 100_000.0


def geo_to_local(points: Iterable[GeoPoint], origin: GeoPoint) -> np.ndarray:
    """East-North-Up meters of ``points`` around ``origin`` on a spherical Earth.

    Missing altitudes count as 0. Returns an (N, 3) array.
    """
    pts = list(points)
    if not pts:
        return np.zeros((0, 3))
    lat = np.array([p.latitude for p in pts])
    lon = np.array([p.longitude for p in pts])
    alt = np.array([p.altitude or 0.0 for p in pts])
    o = _ecef(origin.latitude, origin.longitude, origin.altitude or 0.0)
    enu = (_ecef(lat, lon, alt) - o) @ _enu_basis(origin).T
    far = np.linalg.norm(enu[:, :2], axis=1) > MAX_LOCAL_RADIUS_M
    if far.any():
        raise ValidationError(f"{int(far.sum())} point(s) farther than 100 km from the local origin")
    return enu


def local_to_geo(enu: np.ndarray, origin: GeoPoint) -> list[GeoPoint]:
    """Inverse of :func:`geo_to_local`."""
    enu = np.atleast_2d(np.asarray(enu, dtype=np.float64))
    ecef = enu @ _enu_basis(origin) + _ecef(origin.latitude, origin.longitude, origin.altitude or 0.0)
    r = np.linalg.norm(ecef, axis=1)
    lat = np.degrees(np.arcsin(ecef[:, 2] / r))
    lon = np.degrees(np.arctan2(ecef[:, 1], ecef[:, 0]))
    alt = r - EARTH_RADIUS_M
    return [GeoPoint(float(a), float(b), float(c)) for a, b, c in zip(lat, lon, alt)]


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    p1, p2 = math.radians(a.latitude), math.radians(b.latitude)
    dp = p2 - p1
    dl = math.radians(b.longitude - a.longitude)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


@dataclass(frozen=True, eq=False)
class PluckerMap:
    """Per-pixel 6-channel ray map ``(d, o × d)`` of shape (H, W, 6)."""

    data: np.ndarray

    @property
    def directions(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def moments(self) -> np.ndarray:
        return self.data[..., 3:]

    def check(self, tol: float = 1e-6) -> None:
        norm_err = np.abs(np.linalg.norm(self.directions, axis=-1) - 1.0).max(initial=0.0)
        if norm_err > tol:
            raise ValidationError(f"ray directions not unit length (err {norm_err:.3g})")
        dot = np.abs(np.einsum("...i,...i->...", self.directions, self.moments)).max(initial=0.0)
        if dot > tol:
            raise ValidationError(f"moment not perpendicular to direction (dot {dot:.3g})")


def plucker_map(pose: CameraPose, intrinsics: CameraIntrinsics) -> PluckerMap:
    rays = intrinsics.pixel_rays() @ pose.rotation.T
    d = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape)
    m = np.cross(o, d)
    out = PluckerMap(np.concatenate([d, m], axis=-1))
    out.check()
    return out
