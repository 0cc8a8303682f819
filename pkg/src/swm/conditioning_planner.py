"""Token layout and rotary temporal positions for autoregressive chunks.

A plan is an abstract contract: each token is one latent frame (or the sink,
or one reference) with an integer rope position and a slot in the attention
sequence. Nothing here touches embeddings or attention math.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError
from .geo_core import CameraPose, GeoPoint, geo_to_local, relative_pose, rotation_from_yaw_pitch_roll, yaw_of

TEACHER_FORCING = "teacher_forcing"
SELF_FORCING = "self_forcing"
MODES = (TEACHER_FORCING, SELF_FORCING)
GROUPINGS = ("causal", "uniform")
TEMPORAL_STRIDE = 4
PLAN_SCHEMA = "swm.plan.v1"


# --- latent grouping -------------------------------------------------------


def latent_count(frames: int, grouping: str = "causal") -> int:
    """Latents produced by the temporal compressor for ``frames`` pixel frames."""
    if grouping == "causal":
        if frames < 1 or (frames - 1) % TEMPORAL_STRIDE:
            raise ValidationError(f"causal grouping needs 1 + 4k frames, got {frames}")
        return 1 + (frames - 1) // TEMPORAL_STRIDE
    if grouping == "uniform":
        if frames < TEMPORAL_STRIDE or frames % TEMPORAL_STRIDE:
            raise ValidationError(f"uniform grouping needs a multiple of 4 frames, got {frames}")
        return frames // TEMPORAL_STRIDE
    raise ValidationError(f"unknown grouping {grouping!r}")


def frame_count(latents: int, grouping: str = "causal") -> int:
    if latents < 1:
        raise ValidationError(f"latent count must be >= 1, got {latents}")
    if grouping == "causal":
        return 1 + TEMPORAL_STRIDE * (latents - 1)
    if grouping == "uniform":
        return TEMPORAL_STRIDE * latents
    raise ValidationError(f"unknown grouping {grouping!r}")


def latent_groups(latents: int, grouping: str = "causal") -> list[range]:
    """Pixel-frame range covered by each latent.

    Causal: latent 0 is frame 0 alone, latent l >= 1 covers frames 4l-3 .. 4l.
    Uniform: latent l covers frames 4l .. 4l+3.
    """
    frame_count(latents, grouping)
    if grouping == "causal":
        return [range(0, 1)] + [range(4 * l - 3, 4 * l + 1) for l in range(1, latents)]
    return [range(4 * l, 4 * l + 4) for l in range(latents)]


# --- chunk configuration ---------------------------------------------------


@dataclass(frozen=True)
class ChunkConfig:
    T: int = 77
    L: int = 20
    H: int = 5
    K: int = 5
    G: int = 50
    delta_ref: int = 5
    delta_vl: int = 5
    mode: str = TEACHER_FORCING
    grouping: str = "causal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.grouping not in GROUPINGS:
            raise ConfigurationError(f"grouping must be one of {GROUPINGS}, got {self.grouping!r}")
        for name in ("T", "L", "H", "K", "G", "delta_ref", "delta_vl"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigurationError(f"{name} must be an integer, got {v!r}")
        if self.L < 1:
            raise ConfigurationError(f"L >= 1 violated (L={self.L})")
        if self.H < 0:
            raise ConfigurationError(f"H >= 0 violated (H={self.H})")
        # H == L occurs in the short self-forcing chunks, so equality is allowed
        if not self.H <= self.L:
            raise ConfigurationError(f"H <= L violated (H={self.H}, L={self.L})")
        if self.K < 0:
            raise ConfigurationError(f"K >= 0 violated (K={self.K})")
        if not self.delta_vl >= 1:
            raise ConfigurationError(f"delta_vl >= 1 violated (delta_vl={self.delta_vl})")
        if not self.G > self.delta_vl:
            raise ConfigurationError(f"G > delta_vl violated (G={self.G}, delta_vl={self.delta_vl})")
        if self.K > 1 and not self.delta_ref >= 1:
            raise ConfigurationError(f"delta_ref >= 1 violated (delta_ref={self.delta_ref})")
        try:
            expected = latent_count(self.T, self.grouping)
        except ValidationError as exc:
            raise ConfigurationError(f"T={self.T} invalid for {self.grouping} grouping: {exc}") from None
        if expected != self.L:
            raise ConfigurationError(f"L = latents(T) violated (T={self.T} gives {expected} under {self.grouping} grouping, L={self.L})")

    @classmethod
    def teacher_forcing(cls, **overrides) -> "ChunkConfig":
        """Long-chunk defaults: 77 frames, 20 latents, 5 history latents, 5 references."""
        return cls(**{**dict(mode=TEACHER_FORCING), **overrides})

    @classmethod
    def self_forcing(cls, **overrides) -> "ChunkConfig":
        """Short-chunk defaults: 12 frames, 3 latents, 3 history latents, 1 reference."""
        base = dict(T=12, L=3, H=3, K=1, mode=SELF_FORCING, grouping="uniform")
        return cls(**{**base, **overrides})

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "ChunkConfig":
        if mode in ("tf", TEACHER_FORCING):
            return cls.teacher_forcing(**overrides)
        if mode in ("sf", SELF_FORCING):
            return cls.self_forcing(**overrides)
        raise ConfigurationError(f"unknown mode {mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown chunk config keys: {sorted(unknown)}")
        return cls(**d)


def rope_positions(cfg: ChunkConfig) -> dict[str, list[int]]:
    """Closed-form rope positions per token kind."""
    h, l = cfg.H, cfg.L
    return {
        "history": list(range(1, h + 1)),
        "target": list(range(h + 1, h + l + 1)),
        "sink": [h + l + cfg.delta_vl],
        "reference": [h + l + cfg.G + k * cfg.delta_ref for k in range(cfg.K)],
    }


# --- token plans -----------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # history | target | sink | reference
    index: int  # position within its kind
    rope_position: int
    slot: int


@dataclass(frozen=True, eq=False)
class TokenPlan:
    config: ChunkConfig
    tokens: tuple[Token, ...]
    visibility: np.ndarray  # (n, n) bool, [i, j] = token in slot i attends to slot j

    def __len__(self):
        return len(self.tokens)

    def of_kind(self, kind: str) -> list[Token]:
        return [t for t in self.tokens if t.kind == kind]

    def positions(self, kind: str) -> list[int]:
        return [t.rope_position for t in self.of_kind(kind)]

    def sequence(self) -> list[tuple[str, int]]:
        return [(t.kind, t.index) for t in sorted(self.tokens, key=lambda t: t.slot)]

    def to_json(self) -> dict:
        return {
            "schema": PLAN_SCHEMA,
            "mode": self.config.mode,
            "config": self.config.to_dict(),
            "tokens": [asdict(t) for t in sorted(self.tokens, key=lambda t: t.slot)],
            "visibility": {"n": len(self.tokens), "rle": rle_encode(self.visibility)},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TokenPlan":
        if doc.get("schema") != PLAN_SCHEMA:
            raise ValidationError(f"schema {doc.get('schema')!r} not recognized (expected {PLAN_SCHEMA})")
        cfg = ChunkConfig.from_dict(doc["config"])
        tokens = tuple(Token(**t) for t in doc["tokens"])
        vis = rle_decode(doc["visibility"]["rle"], doc["visibility"]["n"])
        return cls(cfg, tokens, vis)


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating and starting with a run of False."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    return ([0] + runs) if flat[0] else runs


def rle_decode(runs: Sequence[int], n: int) -> np.ndarray:
    if sum(runs) != n * n:
        raise ValidationError(f"visibility runs cover {sum(runs)} cells, expected {n * n}")
    vals = np.arange(len(runs)) % 2 == 1
    return np.repeat(vals, runs).reshape(n, n)


def _build(cfg: ChunkConfig, order: Sequence[str], causal: bool) -> TokenPlan:
    pos = rope_positions(cfg)
    tokens = []
    for kind in order:
        for i, p in enumerate(pos[kind]):
            tokens.append(Token(kind, i, p, len(tokens)))
    n = len(tokens)
    vis = np.tril(np.ones((n, n), dtype=bool)) if causal else np.ones((n, n), dtype=bool)
    return TokenPlan(cfg, tuple(tokens), vis)


def plan_tf_chunk(cfg: ChunkConfig) -> TokenPlan:
    """Teacher-forcing layout: history, target, sink, references; full attention."""
    if cfg.mode != TEACHER_FORCING:
        raise ConfigurationError(f"plan_tf_chunk needs mode={TEACHER_FORCING!r}, got {cfg.mode!r}")
    return _build(cfg, ("history", "target", "sink", "reference"), causal=False)


def plan_sf_chunk(cfg: ChunkConfig) -> TokenPlan:
    """Self-forcing layout: sink and references first, then history and target; causal attention."""
    if cfg.mode != SELF_FORCING:
        raise ConfigurationError(f"plan_sf_chunk needs mode={SELF_FORCING!r}, got {cfg.mode!r}")
    return _build(cfg, ("sink", "reference", "history", "target"), causal=True)


def plan_chunk(cfg: ChunkConfig) -> TokenPlan:
    return plan_tf_chunk(cfg) if cfg.mode == TEACHER_FORCING else plan_sf_chunk(cfg)


def without_sink(plan: TokenPlan) -> TokenPlan:
    """Drop the sink token (used when no lookahead view can be retrieved)."""
    keep = [t for t in sorted(plan.tokens, key=lambda t: t.slot) if t.kind != "sink"]
    idx = [t.slot for t in keep]
    tokens = tuple(replace(t, slot=i) for i, t in enumerate(keep))
    return TokenPlan(plan.config, tokens, plan.visibility[np.ix_(idx, idx)])


# --- autoregressive runs ---------------------------------------------------


@dataclass
class ChunkSpec:
    index: int
    # output frame range kept from this chunk; None for a discarded buffer chunk
    frames: range | None
    # (source chunk, latent index) per history slot; source None is the start frame
    history: list[tuple[int | None, int]]
    discard: bool = False
    start_panorama: str | None = None
    poses: list[CameraPose] | None = None
    relative_poses: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = {
            "index": self.index,
            "frames": [self.frames.start, self.frames.stop] if self.frames is not None else None,
            "history": [[s, l] for s, l in self.history],
            "discard": self.discard,
        }
        if self.start_panorama is not None:
            d["start_panorama"] = self.start_panorama
        if self.relative_poses:
            d["relative_poses"] = [p.to_row_major() for p in self.relative_poses]
        return d


def chunk_relative_poses(poses: Sequence[CameraPose]) -> list:
    """Express every pose in the camera frame of the first one (first becomes identity)."""
    first = poses[0]
    return [relative_pose(p, first) for p in poses]


def _buffer_poses(src: np.ndarray, dst: np.ndarray, n: int, fallback_yaw: float) -> list[CameraPose]:
    d = dst - src
    yaw = math.atan2(d[1], d[0]) if np.hypot(d[0], d[1]) > 1e-9 else fallback_yaw
    rot = rotation_from_yaw_pitch_roll(yaw)
    return [CameraPose(rot, src + d * (i / max(n - 1, 1))) for i in range(n)]


def plan_autoregressive_run(
    total_frames: int,
    cfg: ChunkConfig,
    start=None,
    index=None,
    origin: GeoPoint | None = None,
    trajectory: Sequence[CameraPose] | None = None,
    snap_distance: float = 1.0,
) -> list[ChunkSpec]:
    """Split ``total_frames`` into chained chunks.

    ``start`` is a panorama id, a GeoPoint (needs ``origin``) or a local
    position. A start farther than ``snap_distance`` from every panorama in
    ``index`` gets a leading buffer chunk that drives from the nearest
    panorama to the start point; it is marked ``discard`` and contributes no
    output frames. Chunk 0 (or the first chunk after the buffer) fills its
    history slots by repeating the encoded start frame.
    """
    if total_frames < cfg.T:
        raise ValidationError(f"total_frames={total_frames} is shorter than one chunk (T={cfg.T})")
    if trajectory is not None and len(trajectory) < total_frames:
        raise ValidationError(f"trajectory has {len(trajectory)} poses, need {total_frames}")
    chunks: list[ChunkSpec] = []

    if start is not None and not isinstance(start, str):
        if index is None:
            raise ValidationError("an index is required to place a start point")
        if isinstance(start, GeoPoint):
            if origin is None:
                raise ValidationError("an origin is required for a geographic start point")
            point = geo_to_local([start], origin)[0]
        else:
            point = np.asarray(start, dtype=np.float64).reshape(3)
        hit = index.nearest(point)
        if hit is None:
            raise ValidationError("index is empty; cannot place a buffer chunk")
        rec, dist = hit
        if dist > snap_distance:
            fallback = yaw_of(trajectory[0]) if trajectory is not None else rec.heading
            bposes = _buffer_poses(rec.local_position, point, cfg.T, fallback)
            chunks.append(
                ChunkSpec(
                    index=0,
                    frames=None,
                    history=[(None, 0)] * cfg.H,
                    discard=True,
                    start_panorama=rec.id,
                    poses=bposes,
                    relative_poses=chunk_relative_poses(bposes),
                )
            )
    elif isinstance(start, str) and index is not None and start not in index.by_id:
        raise ValidationError(f"unknown start panorama {start!r}")

    n_out = math.ceil(total_frames / cfg.T)
    for c in range(n_out):
        prev = chunks[-1].index if chunks else None
        history = [(prev, l) for l in range(cfg.L - cfg.H, cfg.L)] if prev is not None else [(None, 0)] * cfg.H
        frames = range(c * cfg.T, min((c + 1) * cfg.T, total_frames))
        poses = list(trajectory[frames.start : frames.stop]) if trajectory is not None else None
        chunks.append(
            ChunkSpec(
                index=len(chunks),
                frames=frames,
                history=history,
                start_panorama=start if isinstance(start, str) and c == 0 else None,
                poses=poses,
                relative_poses=chunk_relative_poses(poses) if poses else [],
            )
        )
    return chunks


def surviving_frames(chunks: Sequence[ChunkSpec]) -> list[int]:
    out = []
    for ch in chunks:
        if not ch.discard and ch.frames is not None:
            out.extend(ch.frames)
    return out


def sample_train_lookahead_offset(seed, delta_range: tuple[int, int] = (1, 10)) -> int:
    """Uniform integer in the inclusive range, a pure function of ``seed``."""
    lo, hi = int(delta_range[0]), int(delta_range[1])
    if lo < 1 or hi < lo:
        raise ValidationError(f"lookahead range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")
    return int(np.random.default_rng(seed).integers(lo, hi + 1))
