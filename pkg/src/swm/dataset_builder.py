"""Training-sample construction: cross-temporal pairing, camera-action labels,
freeze-frame interpolation plans, conditioning dropout and dataset mixing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .conditioning_planner import latent_groups
from .errors import ValidationError
from .geo_core import CameraPose, wrap_angle, yaw_of
from .pano_index import DEFAULT_RADIUS, PanoramaRecord, PinholeView, SpatialIndex, best_yaw_index

logger = logging.getLogger(__name__)

SOURCES = ("streetview", "synthetic", "drive-video")
DEFAULT_MIN_GAP = 3600.0
D_STOP = 1.0
THETA_TURN = math.radians(20.0)
HISTORY_NOISE_SIGMA = 0.1
DROPOUT_P = {"text": 0.2, "refs": 0.2, "warp": 0.2, "history_noise": 0.5}
ACTION_SENTENCES = {
    "straight": "The camera moves straight ahead.",
    "stop": "The camera stays still.",
    "left_turn": "The camera turns left.",
    "right_turn": "The camera turns right.",
}


# --- cross-temporal pairing ------------------------------------------------


def is_cross_temporal(a: PanoramaRecord, b: PanoramaRecord, min_gap: float = DEFAULT_MIN_GAP) -> bool:
    return a.session_id != b.session_id and abs(a.timestamp - b.timestamp) >= min_gap


@dataclass
class DropoutFlags:
    text: bool = False
    refs: bool = False
    warp: bool = False
    history_noise: bool = False
    sigma: float = HISTORY_NOISE_SIGMA

    def to_dict(self) -> dict:
        return {"text": self.text, "refs": self.refs, "warp": self.warp, "history_noise": self.history_noise, "sigma": self.sigma}


@dataclass
class TrainingSample:
    id: str
    source: str
    target_ids: list[str]
    target: list[PinholeView]
    reference_ids: list[str]
    references: list[PinholeView]
    yaw_offset: float = 0.0
    action: str = "straight"
    caption: str = ""
    dropout: DropoutFlags = field(default_factory=DropoutFlags)
    refs_forced: bool = False

    @property
    def action_sentence(self) -> str:
        return ACTION_SENTENCES[self.action]


def _route_headings(positions: np.ndarray) -> np.ndarray:
    """Direction of travel at each route point (central differences, one-sided at the ends)."""
    n = len(positions)
    if n < 2:
        return np.zeros(n)
    d = np.gradient(positions[:, :2], axis=0)
    return np.arctan2(d[:, 1], d[:, 0])


def _target_view(rec: PanoramaRecord, yaw: float) -> PinholeView:
    """Pinhole view of ``rec`` at world yaw ``yaw``; exact when the record can render, else the closest stored view."""
    if rec.renderer is None:
        return rec.best_view(np.array([math.cos(yaw), math.sin(yaw), 0.0]))
    pose = CameraPose.looking(rec.local_position, yaw)
    intr = rec.views[0].intrinsics
    render = rec.renderer
    return PinholeView(intrinsics=intr, pose=pose, parent_id=rec.id, yaw_index=None, loader=lambda: render(pose, intr))


def eligible_references(
    index: SpatialIndex,
    targets: Sequence[PanoramaRecord],
    radius: float = DEFAULT_RADIUS,
    min_gap: float = DEFAULT_MIN_GAP,
) -> list[tuple[PanoramaRecord, float, int]]:
    """Cross-temporal panoramas within ``radius`` of the targets as (record, distance, nearest target), sorted."""
    if len(index) == 0:
        return []
    pos = np.array([t.local_position for t in targets])
    hits: set[int] = set()
    for h in index._tree.query_ball_point(pos, radius * (1 + 1e-12) + 1e-12):
        hits.update(h)
    out = []
    for i in hits:
        rec = index.records[i]
        if not all(is_cross_temporal(rec, t, min_gap) for t in targets):
            continue
        d = np.sqrt(((pos - rec.local_position) ** 2).sum(axis=1))
        j = int(np.argmin(d))
        if d[j] <= radius:
            out.append((rec, float(d[j]), j))
    out.sort(key=lambda e: (e[1], e[0].id))
    return out


def pair_cross_temporal(
    index: SpatialIndex,
    route: Sequence[str],
    N: int = 20,
    K: int = 5,
    radius: float = DEFAULT_RADIUS,
    min_gap: float = DEFAULT_MIN_GAP,
    offset: int = 0,
    yaw_offset: float = 0.0,
    source: str = "streetview",
    sample_id: str | None = None,
) -> TrainingSample:
    """N consecutive route records as targets plus up to K cross-temporal references.

    A reference must come from another session and be at least ``min_gap``
    seconds away from every target frame. Each reference view faces the
    viewing direction of its nearest target frame. With no eligible
    reference the sample is emitted with reference dropout forced.
    """
    if source not in SOURCES:
        raise ValidationError(f"unknown source {source!r}")
    if N < 1 or K < 0:
        raise ValidationError(f"need N >= 1 and K >= 0, got N={N}, K={K}")
    if len(route) - offset < N or offset < 0:
        raise ValidationError(f"route has {len(route)} records, need {N} from offset {offset}")
    try:
        targets = [index.by_id[r] for r in route[offset : offset + N]]
    except KeyError as exc:
        raise ValidationError(f"route references unknown panorama {exc.args[0]!r}") from None
    pos = np.array([t.local_position for t in targets])
    yaws = _route_headings(pos) + yaw_offset
    target_views = [_target_view(t, float(y)) for t, y in zip(targets, yaws)]

    refs, ref_ids = [], []
    if K > 0 and source != "drive-video":
        for rec, _, j in eligible_references(index, targets, radius, min_gap)[:K]:
            direction = np.array([math.cos(yaws[j]), math.sin(yaws[j]), 0.0])
            refs.append(rec.views[best_yaw_index(rec.views, direction)])
            ref_ids.append(rec.id)
    sample = TrainingSample(
        id=sample_id or f"{targets[0].id}+{N}",
        source=source,
        target_ids=[t.id for t in targets],
        target=target_views,
        reference_ids=ref_ids,
        references=refs,
        yaw_offset=float(yaw_offset),
        action=label_camera_action([v.pose for v in target_views]),
    )
    if not refs:
        sample.refs_forced = True
        sample.dropout.refs = True
    return sample


# --- per-sequence policies -------------------------------------------------


def target_yaw_policy(route_headings=None, seed=0, max_offset: float = math.pi / 2) -> float:
    """One uniform yaw offset in [-max_offset, max_offset] shared by the whole sequence."""
    return float(np.random.default_rng(seed).uniform(-max_offset, max_offset))


def label_camera_action(poses: Sequence[CameraPose], d_stop: float = D_STOP, theta_turn: float = THETA_TURN) -> str:
    if len(poses) < 2:
        raise ValidationError("need at least 2 poses to label an action")
    a, b = poses[0], poses[-1]
    if float(np.hypot(*(b.translation[:2] - a.translation[:2]))) < d_stop:
        return "stop"
    turn = float(wrap_angle(yaw_of(b) - yaw_of(a)))
    if turn > theta_turn:
        return "left_turn"
    if turn < -theta_turn:
        return "right_turn"
    return "straight"


# --- freeze-frame interpolation --------------------------------------------


@dataclass(frozen=True, eq=False)
class InterpolationPlan:
    total_frames: int
    latent_count: int
    grouping: str
    keyframe_groups: tuple[tuple[int, range], ...]
    discard_mask: np.ndarray  # (total_frames,) bool
    expansion: np.ndarray  # (total_frames,) index into the surviving sequence
    keyframe_positions: tuple[int, ...]  # surviving-sequence index of each keyframe

    @property
    def surviving_count(self) -> int:
        return int((~self.discard_mask).sum())

    @property
    def replacements(self) -> list[tuple[int, int]]:
        """(latent index, keyframe number) pairs for latent replacement in the noisy input."""
        return [(lat, k) for k, (lat, _) in enumerate(self.keyframe_groups)]

    def expand(self, frames):
        """Surviving-length sequence to the full pixel sequence (keyframes repeated across their group)."""
        if len(frames) != self.surviving_count:
            raise ValidationError(f"expected {self.surviving_count} frames, got {len(frames)}")
        if isinstance(frames, np.ndarray):
            return frames[self.expansion]
        return [frames[i] for i in self.expansion]

    def discard(self, frames):
        if len(frames) != self.total_frames:
            raise ValidationError(f"expected {self.total_frames} frames, got {len(frames)}")
        if isinstance(frames, np.ndarray):
            return frames[~self.discard_mask]
        return [f for f, d in zip(frames, self.discard_mask) if not d]


def freeze_frame_plan(keyframe_slots: Sequence[int], L_int: int, grouping: str = "causal") -> InterpolationPlan:
    """Place each keyframe across the full pixel group of its latent slot.

    The first frame of each group is kept and the rest are marked for
    discard; a causal latent 0 spans one frame, so nothing is discarded for it.
    """
    groups = latent_groups(L_int, grouping)
    slots = [int(s) for s in keyframe_slots]
    for a, b in zip(slots, slots[1:]):
        if b <= a:
            raise ValidationError(f"keyframe slots must be strictly increasing (collision or disorder at {a}, {b})")
    for s in slots:
        if not 0 <= s < L_int:
            raise ValidationError(f"keyframe slot {s} outside [0, {L_int})")
    total = groups[-1].stop
    discard = np.zeros(total, dtype=bool)
    for s in slots:
        g = groups[s]
        discard[g.start + 1 : g.stop] = True
    survivor = np.cumsum(~discard) - 1
    expansion = survivor.copy()
    for s in slots:
        g = groups[s]
        expansion[g.start : g.stop] = survivor[g.start]
    return InterpolationPlan(
        total_frames=total,
        latent_count=L_int,
        grouping=grouping,
        keyframe_groups=tuple((s, groups[s]) for s in slots),
        discard_mask=discard,
        expansion=expansion,
        keyframe_positions=tuple(int(survivor[groups[s].start]) for s in slots),
    )


# --- stochastic conditioning -----------------------------------------------


def conditioning_dropout(source: str, seed, probs: dict | None = None, sigma: float = HISTORY_NOISE_SIGMA) -> DropoutFlags:
    """Independent Bernoulli dropout draws, a pure function of ``seed``.

    Drive-video samples never carry references, so both reference and warp
    dropout are forced on for that source.
    """
    if source not in SOURCES:
        raise ValidationError(f"unknown source {source!r}")
    p = {**DROPOUT_P, **(probs or {})}
    u = np.random.default_rng(seed).random(4)
    flags = DropoutFlags(
        text=bool(u[0] < p["text"]),
        refs=bool(u[1] < p["refs"]),
        warp=bool(u[2] < p["warp"]),
        history_noise=bool(u[3] < p["history_noise"]),
        sigma=sigma,
    )
    if source == "drive-video":
        flags.refs = True
        flags.warp = True
    return flags


def mix_datasets(streams: dict[str, Iterable], ratios: dict[str, float], seed=0) -> Iterator[tuple[str, object]]:
    """Interleave streams so running source counts track ``ratios``.

    Credit-based: each step every stream earns its ratio and the richest one
    (ties to the earlier name) emits and pays 1. ``seed`` sets the initial
    credits, so the order is deterministic per seed and the count of each
    source after n steps stays within 1 of ``n * ratio``. The mix ends when a
    selected stream is exhausted.
    """
    names = list(streams)
    if set(names) != set(ratios):
        raise ValidationError(f"streams {sorted(names)} and ratios {sorted(ratios)} do not match")
    r = np.array([float(ratios[n]) for n in names])
    if np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ValidationError(f"ratios must be non-negative and sum to 1, got {r.sum()!r}")
    iters, heads = {}, {}
    for n, ratio in zip(names, r):
        it = iter(streams[n])
        if ratio > 0:
            try:
                heads[n] = next(it)
            except StopIteration:
                raise ValidationError(f"stream {n!r} is empty but has ratio {ratio}") from None
        iters[n] = it
    credit = np.random.default_rng(seed).random(len(names)) * r
    while True:
        credit += r
        i = int(np.argmax(credit))
        credit[i] -= 1.0
        n = names[i]
        item = heads.pop(n)
        yield n, item
        try:
            heads[n] = next(iters[n])
        except StopIteration:
            return


# --- batch construction ----------------------------------------------------


def build_samples(
    index: SpatialIndex,
    routes: Sequence[tuple[str, Sequence[str]]],
    seed: int = 0,
    N: int = 20,
    K: int = 5,
    radius: float = DEFAULT_RADIUS,
    min_gap: float = DEFAULT_MIN_GAP,
    source: str = "streetview",
    stride: int | None = None,
) -> Iterator[TrainingSample]:
    """Windows of N records along each route, each paired and given seeded yaw and dropout.

    Windows start every ``stride`` records (default N, non-overlapping).
    Every draw is seeded from ``(seed, route number, window start)``.
    """
    stride = stride or N
    for ri, (route_id, ids) in enumerate(routes):
        if len(ids) < N:
            logger.warning("route %s has %d records, fewer than N=%d; skipped", route_id, len(ids), N)
            continue
        for off in range(0, len(ids) - N + 1, stride):
            ss = np.random.SeedSequence([int(seed), ri, off])
            yaw_seed, drop_seed = ss.spawn(2)
            yaw = target_yaw_policy(None, yaw_seed)
            s = pair_cross_temporal(index, ids, N, K, radius, min_gap, off, yaw, source, f"{route_id}@{off}")
            forced = s.dropout.refs
            s.dropout = conditioning_dropout(source, drop_seed)
            s.dropout.refs = s.dropout.refs or forced
            s.caption = ACTION_SENTENCES[s.action]
            yield s
