"""GPS-anchored similarity alignment of estimator pose chunks and depth scaling.

The estimator frame is assumed gravity-aligned with z up, so a chunk is
fixed by a scale, a rotation about z and a translation. Scale and heading come
from the first-to-last displacement in the horizontal plane; the translation
pins the first camera to its GPS position.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .geo_core import CameraPose, GeoPoint, geo_to_local, wrap_angle

logger = logging.getLogger(__name__)

MIN_DISPLACEMENT = 0.5


@dataclass(frozen=True)
class PoseChunk:
    poses: Sequence[CameraPose]
    gps: Sequence[GeoPoint]

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValidationError("a chunk needs at least 2 poses")
        if len(self.poses) != len(self.gps):
            raise ValidationError(f"{len(self.poses)} poses but {len(self.gps)} GPS fixes")


def yaw_rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``p -> scale * Rz(yaw) p + translation``."""

    scale: float
    yaw: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_rotation(self.yaw)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_pose(self, pose: CameraPose) -> CameraPose:
        r = self.rotation
        return CameraPose(r @ pose.rotation, self.scale * (r @ pose.translation) + self.translation)

    def inverse(self) -> "SimilarityTransform":
        r = self.rotation
        return SimilarityTransform(1.0 / self.scale, -self.yaw, -(r.T @ self.translation) / self.scale)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "yaw": self.yaw, "translation": [float(x) for x in self.translation]}


def _endpoints(est: np.ndarray, enu: np.ndarray):
    d_est = est[-1, :2] - est[0, :2]
    d_enu = enu[-1, :2] - enu[0, :2]
    n_est, n_enu = float(np.hypot(*d_est)), float(np.hypot(*d_enu))
    if n_est <= MIN_DISPLACEMENT or n_enu <= MIN_DISPLACEMENT:
        raise DegenerateInputError(
            f"chunk too short to align (displacement {n_est:.3f} m estimator, {n_enu:.3f} m GPS)"
        )
    scale = n_enu / n_est
    yaw = float(wrap_angle(math.atan2(d_enu[1], d_enu[0]) - math.atan2(d_est[1], d_est[0])))
    return scale, yaw


def _lstsq(est: np.ndarray, enu: np.ndarray):
    """Planar Umeyama fit (scale + rotation) over every horizontal position."""
    a = est[:, :2]
    b = enu[:, :2]
    ma, mb = a.mean(0), b.mean(0)
    a0, b0 = a - ma, b - mb
    var_a = float((a0**2).sum())
    if math.sqrt(var_a / len(a)) <= MIN_DISPLACEMENT / 2 or math.sqrt(float((b0**2).sum()) / len(b)) <= MIN_DISPLACEMENT / 2:
        raise DegenerateInputError("chunk too short to align (positions nearly coincide)")
    # closed form for a 2-D rotation: angle of sum of a x b and a . b
    dot = float((a0 * b0).sum())
    cross = float((a0[:, 0] * b0[:, 1] - a0[:, 1] * b0[:, 0]).sum())
    yaw = math.atan2(cross, dot)
    scale = math.hypot(dot, cross) / var_a
    return scale, yaw


def align_chunk(chunk: PoseChunk, origin: GeoPoint, method: str = "endpoints") -> tuple[SimilarityTransform, list[CameraPose]]:
    """Estimate the estimator-to-ENU similarity of one chunk and apply it.

    ``method="endpoints"`` matches the first-to-last displacement only;
    ``"lstsq"`` fits scale and heading to every GPS fix instead. In both cases
    the translation anchors the first pose at its GPS fix (missing altitude
    reads as 0).
    """
    est = np.array([p.translation for p in chunk.poses])
    enu = geo_to_local(chunk.gps, origin)
    if method == "endpoints":
        scale, yaw = _endpoints(est, enu)
    elif method == "lstsq":
        scale, yaw = _lstsq(est, enu)
    else:
        raise ValidationError(f"unknown alignment method {method!r}")
    r = yaw_rotation(yaw)
    translation = enu[0] - scale * (r @ est[0])
    sim = SimilarityTransform(scale, yaw, translation)
    return sim, [sim.apply_pose(p) for p in chunk.poses]


def align_sequence(
    chunks: Sequence[PoseChunk],
    origin: GeoPoint,
    method: str = "endpoints",
    merge_degenerate: bool = True,
) -> list[tuple[SimilarityTransform, list[CameraPose]]]:
    """Align chunks in order, one ``(transform, aligned poses)`` entry per aligned group.

    A chunk too short to align is merged with the following chunk (the last
    one with its predecessor) and the group is re-aligned. Merging pools raw
    estimator poses, so it is only meaningful when the chunks share one
    estimator frame; for independently estimated chunks pass
    ``merge_degenerate=False`` to get a :class:`DegenerateInputError` naming
    the chunk, then re-estimate the merged frames upstream.
    """
    groups: list[tuple[list[CameraPose], list[GeoPoint]]] = []
    pending: tuple[list, list] = ([], [])
    for i, ch in enumerate(chunks):
        poses, gps = pending[0] + list(ch.poses), pending[1] + list(ch.gps)
        try:
            _endpoints(np.array([p.translation for p in poses]), geo_to_local(gps, origin))
        except DegenerateInputError as exc:
            if not merge_degenerate:
                raise DegenerateInputError(f"chunk {i}: {exc}") from None
            logger.info("chunk %d too short, merging with the next chunk", i)
            pending = (poses, gps)
            continue
        groups.append((poses, gps))
        pending = ([], [])
    if pending[0]:
        if not groups:
            raise DegenerateInputError("chunk too short to align and nothing left to merge with")
        last = groups.pop()
        groups.append((last[0] + pending[0], last[1] + pending[1]))
    return [align_chunk(PoseChunk(p, g), origin, method) for p, g in groups]


def scale_depth(depth: np.ndarray, scale: float) -> np.ndarray:
    """Metric depth from affine-invariant depth; NaN stays NaN."""
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    depth = np.asarray(depth)
    return depth * np.asarray(scale, dtype=depth.dtype if depth.dtype.kind == "f" else np.float64)
