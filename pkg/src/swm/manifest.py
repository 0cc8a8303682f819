"""JSONL manifests and raster interchange files.

Every manifest line is a JSON object carrying ``kind`` and ``schema``
(``swm.<kind>.v1``). Raster paths inside ``paths`` are relative to the
manifest's directory. Images are PNG; depth is raw little-endian float32
behind a one-line ASCII header ``SWMD <width> <height>\\n``.
"""

from __future__ import annotations

import json
import os
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import ValidationError
from .geo_core import CameraIntrinsics, CameraPose, GeoPoint
from .pano_index import PanoramaRecord, PinholeView

SCHEMAS = {
    "pano": "swm.pano.v1",
    "view": "swm.view.v1",
    "sample": "swm.sample.v1",
    "plan": "swm.plan.v1",
    "eval": "swm.eval.v1",
    "route": "swm.route.v1",
    "frame": "swm.frame.v1",
}
DOC_SCHEMAS = {
    "traj": "swm.traj.v1",
    "retrieval": "swm.retrieval.v1",
    "plan": "swm.plan.v1",
    "city": "swm.city.v1",
    "eval": "swm.eval.v1",
}


# --- rasters ---------------------------------------------------------------


def write_depth(path: str, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValidationError(f"depth raster must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"SWMD {w} {h}\n".encode("ascii"))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValidationError(f"{path}: missing depth header")
    parts = data[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != "SWMD":
        raise ValidationError(f"{path}: bad depth header {data[:nl]!r}")
    w, h = int(parts[1]), int(parts[2])
    body = data[nl + 1 :]
    if len(body) != 4 * w * h:
        raise ValidationError(f"{path}: expected {4 * w * h} bytes of depth, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


def write_png(path: str, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype == bool:
        image = image.astype(np.uint8) * 255
    if image.dtype != np.uint8:
        raise ValidationError(f"PNG rasters must be uint8, got {image.dtype}")
    Image.fromarray(image).save(path, format="PNG", optimize=False)


def read_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def read_mask(path: str) -> np.ndarray:
    return read_png(path) > 127


# --- manifest lines --------------------------------------------------------


def check_schema(entry: dict, where: str = "") -> str:
    kind = entry.get("kind")
    schema = entry.get("schema")
    if kind not in SCHEMAS:
        raise ValidationError(f"{where}unknown kind {kind!r}")
    if schema != SCHEMAS[kind]:
        raise ValidationError(f"{where}schema {schema!r} not recognized for kind {kind!r} (expected {SCHEMAS[kind]})")
    return kind


def check_doc_schema(doc: dict, kind: str, where: str = "") -> None:
    if doc.get("schema") != DOC_SCHEMAS[kind]:
        raise ValidationError(f"{where}schema {doc.get('schema')!r} not recognized (expected {DOC_SCHEMAS[kind]})")


def read_manifest(path: str, validate_paths: bool = True, kinds: Iterable[str] | None = None) -> list[dict]:
    base = os.path.dirname(os.path.abspath(path))
    kinds = set(kinds) if kinds is not None else None
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                raise ValidationError(f"{path}:{lineno}: blank line")
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            kind = check_schema(entry, f"{path}:{lineno}: ")
            if kinds is not None and kind not in kinds:
                raise ValidationError(f"{path}:{lineno}: kind {kind!r} not allowed here")
            if validate_paths:
                for name, rel in (entry.get("paths") or {}).items():
                    if not os.path.exists(os.path.join(base, rel)):
                        raise ValidationError(f"{path}:{lineno}: {name} path {rel!r} does not exist")
            out.append(entry)
    return out


def write_manifest(path: str, entries: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            check_schema(e)
            f.write(json.dumps(e, sort_keys=True) + "\n")


def entry(kind: str, **fields) -> dict:
    return {"kind": kind, "schema": SCHEMAS[kind], **fields}


def pose_to_json(pose: CameraPose) -> list[float]:
    return pose.to_row_major()


def pose_from_json(values) -> CameraPose:
    return CameraPose.from_row_major(values)


def view_entry(view: PinholeView, image_rel: str, depth_rel: str) -> dict:
    return entry(
        "view",
        id=view.id,
        parent_id=view.parent_id,
        yaw_index=view.yaw_index,
        paths={"image": image_rel, "depth": depth_rel},
        pose=pose_to_json(view.pose),
        intrinsics=view.intrinsics.to_dict(),
    )


def export_records(records: Iterable[PanoramaRecord], out_dir: str, raster_subdir: str = "views") -> list[dict]:
    """Write every view's rasters under ``out_dir`` and return manifest lines.

    Each pano line is followed by its 8 view lines.
    """
    os.makedirs(os.path.join(out_dir, raster_subdir), exist_ok=True)
    lines = []
    for rec in records:
        lines.append(
            entry(
                "pano",
                id=rec.id,
                geo=rec.geo.to_dict(),
                local_position=[float(x) for x in rec.local_position],
                timestamp=rec.timestamp,
                session_id=rec.session_id,
                heading=rec.heading,
                paths={},
                **({"road": rec.road, "station": rec.station} if rec.road is not None else {}),
            )
        )
        for v in rec.views:
            stem = f"{raster_subdir}/{rec.id}_{v.yaw_index}"
            write_png(os.path.join(out_dir, stem + ".png"), v.image)
            write_depth(os.path.join(out_dir, stem + ".depth"), v.depth)
            v.release()
            lines.append(view_entry(v, stem + ".png", stem + ".depth"))
    return lines


def _file_loader(image_path: str, depth_path: str):
    def load():
        return read_png(image_path), read_depth(depth_path)

    return load


def view_from_entry(e: dict, base: str) -> PinholeView:
    check_schema(e)
    if e["kind"] != "view":
        raise ValidationError(f"expected a view line, got {e['kind']!r}")
    img = os.path.join(base, e["paths"]["image"])
    dep = os.path.join(base, e["paths"]["depth"])
    return PinholeView(
        intrinsics=CameraIntrinsics.from_dict(e["intrinsics"]),
        pose=pose_from_json(e["pose"]),
        parent_id=e["parent_id"],
        yaw_index=int(e["yaw_index"]),
        loader=_file_loader(img, dep),
        image_path=img,
        depth_path=dep,
    )


def records_from_manifest(entries: list[dict], base: str) -> tuple[list[PanoramaRecord], dict[str, list[int]]]:
    """Rebuild panorama records and the manifest line numbers of their views."""
    views: dict[str, list[tuple[int, PinholeView]]] = {}
    panos = []
    for i, e in enumerate(entries):
        if e["kind"] == "view":
            views.setdefault(e["parent_id"], []).append((i, view_from_entry(e, base)))
        elif e["kind"] == "pano":
            panos.append(e)
    records, lines = [], {}
    for p in panos:
        vs = sorted(views.get(p["id"], []), key=lambda t: t[1].yaw_index)
        pos = p.get("local_position")
        if pos is None:
            pos = np.mean([v.pose.translation for _, v in vs], axis=0) if vs else [0.0, 0.0, 0.0]
        records.append(
            PanoramaRecord(
                id=p["id"],
                geo=GeoPoint.from_dict(p["geo"]),
                local_position=np.asarray(pos, dtype=np.float64),
                timestamp=float(p["timestamp"]),
                session_id=str(p["session_id"]),
                heading=float(p.get("heading", 0.0)),
                views=[v for _, v in vs],
                road=p.get("road"),
                station=p.get("station"),
            )
        )
        lines[p["id"]] = [i for i, _ in vs]
    return records, lines


def trajectory_doc(poses: list[CameraPose], intrinsics: CameraIntrinsics, **extra) -> dict:
    return {
        "schema": DOC_SCHEMAS["traj"],
        "intrinsics": intrinsics.to_dict(),
        "poses": [pose_to_json(p) for p in poses],
        **extra,
    }


def read_trajectory(path: str) -> tuple[list[CameraPose], CameraIntrinsics, dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    check_doc_schema(doc, "traj", f"{path}: ")
    poses = [pose_from_json(p) for p in doc["poses"]]
    return poses, CameraIntrinsics.from_dict(doc["intrinsics"]), doc
