"""Trajectory and image metrics plus the benchmark and sliding-window harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .geo_core import CameraPose, geodesic_rotation_distance

logger = logging.getLogger(__name__)

STANDARD_FRAMES = 365
STANDARD_LENGTH_M = 100.0
LONG_FRAMES = 1460
LONG_LENGTH_M = 500.0
DEFAULT_WINDOW = 200
DEFAULT_STRIDE = 55


# --- trajectory metrics ----------------------------------------------------


@dataclass(frozen=True)
class TrajectoryEval:
    predicted: Sequence[CameraPose]
    ground_truth: Sequence[CameraPose]
    chunk_size: int

    def __post_init__(self):
        if len(self.predicted) != len(self.ground_truth):
            raise ValidationError(f"{len(self.predicted)} predicted poses vs {len(self.ground_truth)} ground-truth poses")
        if self.chunk_size < 2:
            raise ValidationError(f"chunk_size must be >= 2, got {self.chunk_size}")

    def chunks(self) -> list[range]:
        """Non-overlapping chunks; a trailing single frame has nothing to compare and is dropped."""
        n, c = len(self.predicted), self.chunk_size
        return [range(s, min(s + c, n)) for s in range(0, n, c) if min(s + c, n) - s >= 2]


def _relative(poses: Sequence[CameraPose], idx: range):
    first = poses[idx.start]
    r0t = first.rotation.T
    rots = [r0t @ poses[i].rotation for i in idx]
    trans = np.array([r0t @ (poses[i].translation - first.translation) for i in idx])
    return rots, trans


def rot_err(ev: TrajectoryEval) -> float:
    """Mean geodesic angle between chunk-relative rotations (radians).

    The first frame of each chunk is the identity in both trajectories and is
    left out of the mean.
    """
    errs = []
    for idx in ev.chunks():
        rp, _ = _relative(ev.predicted, idx)
        rg, _ = _relative(ev.ground_truth, idx)
        errs.extend(geodesic_rotation_distance(a, b) for a, b in zip(rp[1:], rg[1:]))
    if not errs:
        raise DegenerateInputError("no chunk with at least 2 frames")
    return float(np.mean(errs))


def trans_err_detail(ev: TrajectoryEval) -> tuple[float, list[int]]:
    """(mean normalized l2 error, indices of skipped chunks)."""
    errs, skipped = [], []
    for ci, idx in enumerate(ev.chunks()):
        _, tp = _relative(ev.predicted, idx)
        _, tg = _relative(ev.ground_truth, idx)
        mp = float(np.linalg.norm(tp, axis=1).max())
        mg = float(np.linalg.norm(tg, axis=1).max())
        if mp == 0.0 or mg == 0.0:
            skipped.append(ci)
            continue
        errs.extend(np.linalg.norm(tp[1:] / mp - tg[1:] / mg, axis=1))
    if not errs:
        raise DegenerateInputError("every chunk is static in at least one trajectory")
    return float(np.mean(errs)), skipped


def trans_err(ev: TrajectoryEval) -> float:
    """Mean l2 distance between chunk-relative translations, each trajectory scaled by its own max norm."""
    value, skipped = trans_err_detail(ev)
    if skipped:
        logger.warning("trans_err skipped %d static chunk(s): %s", len(skipped), skipped)
    return value


# --- masked PSNR -----------------------------------------------------------


def _as_unit(frames) -> np.ndarray:
    a = np.asarray(frames)
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    return a.astype(np.float64)


def masked_psnr_frames(frames, gt_frames, pred_masks=None, gt_masks=None, max_val: float = 1.0) -> tuple[np.ndarray, int]:
    """Per-frame PSNR over static pixels (NaN for skipped frames) and the skipped count.

    A pixel is static when neither dynamic mask marks it. 8-bit inputs are
    scaled to [0, 1].
    """
    p = _as_unit(frames)
    g = _as_unit(gt_frames)
    if p.shape != g.shape:
        raise ValidationError(f"frame shapes differ: {p.shape} vs {g.shape}")
    if p.ndim == 3:
        p, g = p[..., None], g[..., None]
    if p.ndim != 4:
        raise ValidationError(f"expected (T, H, W[, C]) frames, got shape {p.shape}")
    dyn = np.zeros(p.shape[:3], dtype=bool)
    for m in (pred_masks, gt_masks):
        if m is not None:
            m = np.asarray(m, dtype=bool)
            if m.shape != dyn.shape:
                raise ValidationError(f"mask shape {m.shape} does not match frames {dyn.shape}")
            dyn |= m
    out = np.full(len(p), np.nan)
    skipped = 0
    for t in range(len(p)):
        static = ~dyn[t]
        n = int(static.sum())
        if n == 0:
            skipped += 1
            continue
        mse = float(((p[t][static] - g[t][static]) ** 2).mean())
        out[t] = math.inf if mse == 0.0 else 10.0 * math.log10(max_val**2 / mse)
    return out, skipped


def masked_psnr(frames, gt_frames, pred_masks=None, gt_masks=None, max_val: float = 1.0) -> float:
    """Mean per-frame PSNR (dB) over pixels outside the union of dynamic masks; ``inf`` when identical."""
    vals, skipped = masked_psnr_frames(frames, gt_frames, pred_masks, gt_masks, max_val)
    if skipped == len(vals):
        raise DegenerateInputError("no static pixels")
    if skipped:
        logger.warning("masked_psnr skipped %d frame(s) with no static pixels", skipped)
    return float(np.nanmean(vals))


# --- sliding windows -------------------------------------------------------


def window_starts(length: int, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> list[int]:
    if window < 1 or stride < 1:
        raise ValidationError(f"window and stride must be positive, got {window}, {stride}")
    if window > length:
        raise ValidationError(f"window {window} is longer than the {length}-frame sequence")
    return list(range(0, length - window + 1, stride))


def sliding_window_eval(
    frames: Sequence,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    scorer: Callable[[Sequence], float] = None,
    workers: int = 1,
) -> list[tuple[int, float]]:
    """Score every window; results are in window order whatever ``workers`` is."""
    if scorer is None:
        raise ValidationError("a scorer is required")
    starts = window_starts(len(frames), window, stride)

    def one(s):
        return s, float(scorer(frames[s : s + window]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, starts))
    return [one(s) for s in starts]


class ProcessScorer:
    """Run an external command once per window.

    The command gets the path of a JSONL window manifest (one ``frame`` line
    per frame, absolute paths) as its last argument and must print a single
    float on stdout.
    """

    def __init__(self, command: str | Sequence[str], timeout: float | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def __call__(self, window: Sequence[dict]) -> float:
        from .manifest import entry, write_manifest

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "window.jsonl")
            lines = []
            for i, f in enumerate(window):
                e = dict(f) if isinstance(f, dict) else entry("frame", index=i, paths={"image": os.path.abspath(str(f))})
                lines.append(e)
            write_manifest(path, lines)
            res = subprocess.run(self.command + [path], capture_output=True, text=True, timeout=self.timeout)
        if res.returncode != 0:
            raise ValidationError(f"scorer exited with {res.returncode}: {res.stderr.strip()[:200]}")
        try:
            return float(res.stdout.strip())
        except ValueError:
            raise ValidationError(f"scorer printed {res.stdout.strip()[:80]!r}, expected one float") from None


# --- benchmark sequences ---------------------------------------------------


@dataclass
class BenchmarkSequence:
    id: str
    poses: list[CameraPose]
    exclusion: frozenset
    length_m: float
    waypoints: np.ndarray

    @property
    def frames(self) -> int:
        return len(self.poses)


def benchmark_spec(
    city,
    records,
    kind: str = "standard",
    n_sequences: int = 30,
    session: str = "s0",
    seed: int = 0,
) -> list[BenchmarkSequence]:
    """Test drives over the synthetic road grid.

    ``standard`` sequences have 365 frames over 100 m, ``long`` ones 1460
    frames over 500 m. Each sequence's exclusion set holds every ``session``
    panorama lying on its route, so retrieval cannot use the sequence's own
    captures.
    """
    from .synthcity import grid_route, polyline_distance, poses_along

    if kind == "standard":
        frames, length = STANDARD_FRAMES, STANDARD_LENGTH_M
    elif kind == "long":
        frames, length = LONG_FRAMES, LONG_LENGTH_M
    else:
        raise ValidationError(f"unknown benchmark kind {kind!r}")
    own = [r for r in records if r.session_id == session]
    if not own:
        raise ValidationError(f"no panoramas from session {session!r}")
    pos = np.array([r.local_position for r in own])
    rng = np.random.default_rng([int(seed), frames])
    out = []
    for i in range(n_sequences):
        try:
            way = grid_route(city, length, rng)
        except ValueError as exc:
            raise ValidationError(f"insufficient route length: {exc}") from None
        near = polyline_distance(pos, way) <= city.road_half_width
        out.append(
            BenchmarkSequence(
                id=f"{kind}-{i:03d}",
                poses=poses_along(way, frames),
                exclusion=frozenset(r.id for r, k in zip(own, near) if k),
                length_m=length,
                waypoints=way,
            )
        )
    return out


# --- reporting -------------------------------------------------------------


def results_csv(rows: Sequence[tuple[str, str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sequence_id", "metric", "value"])
    for seq, metric, value in rows:
        w.writerow([seq, metric, "inf" if value == math.inf else repr(float(value))])
    return buf.getvalue()


def results_json(rows: Sequence[tuple[str, str, float]], **extra) -> str:
    summary: dict[str, dict] = {}
    for seq, metric, value in rows:
        summary.setdefault(metric, {})[seq] = "inf" if value == math.inf else float(value)
    return json.dumps({"schema": "swm.eval.v1", "metrics": summary, **extra}, sort_keys=True)
