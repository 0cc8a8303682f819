"""Command-line entry point (``swm``).

Exit codes: 0 success, 2 validation failure, 3 degenerate input. Failures
print one JSON object ``{"error", "message", "exit_code"}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import manifest as mf
from .errors import DegenerateInputError, NoSinkAvailable, SWMError, ValidationError
from .geo_core import CameraIntrinsics, GeoPoint

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DEGENERATE = 3

logger = logging.getLogger("swm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _write_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=1)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None


def _parse_origin(text: str) -> GeoPoint:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise ValidationError(f"origin must be 'lat,lon[,alt]', got {text!r}") from None
    if len(parts) not in (2, 3):
        raise ValidationError(f"origin must be 'lat,lon[,alt]', got {text!r}")
    return GeoPoint(*parts)


def _load_city(city_dir: str):
    from .synthcity import generate_city

    doc = _read_json(os.path.join(city_dir, "city.json"))
    mf.check_doc_schema(doc, "city", f"{city_dir}/city.json: ")
    city = generate_city(doc["seed"], doc["extent"], doc["block"], doc["road_half_width"])
    if city.fingerprint() != doc["fingerprint"]:
        raise ValidationError(f"{city_dir}: city fingerprint mismatch (generator changed?)")
    return city, doc


# --- synthcity -------------------------------------------------------------


def cmd_synthcity_gen(args) -> int:
    from .pano_index import build_index, save_index
    from .synthcity import generate_city, sample_streetview_db

    sessions = tuple(s for s in args.sessions.split(",") if s)
    if len(sessions) != len(set(sessions)) or not sessions:
        raise ValidationError(f"sessions must be distinct and non-empty, got {args.sessions!r}")
    city = generate_city(args.seed, args.extent, args.block)
    records = sample_streetview_db(city, interval=args.interval, sessions=sessions, jitter=args.jitter)
    os.makedirs(args.out, exist_ok=True)
    lines = mf.export_records(records, args.out)
    man_path = os.path.join(args.out, "manifest.jsonl")
    mf.write_manifest(man_path, lines)
    routes = []
    for session in sessions:
        for ri in range(len(city.roads)):
            ids = [r.id for r in sorted((r for r in records if r.session_id == session and r.road == ri), key=lambda r: r.station)]
            routes.append(mf.entry("route", id=f"{session}-r{ri:02d}", panoramas=ids, session_id=session, paths={}))
    mf.write_manifest(os.path.join(args.out, "routes.jsonl"), routes)
    _, view_lines = mf.records_from_manifest(lines, args.out)
    save_index(build_index(records), os.path.join(args.out, "index.swmidx"), man_path, view_lines)
    doc = {
        "schema": mf.DOC_SCHEMAS["city"],
        "seed": args.seed,
        "extent": args.extent,
        "block": args.block,
        "road_half_width": city.road_half_width,
        "sessions": list(sessions),
        "interval": args.interval,
        "jitter": args.jitter,
        "fingerprint": city.fingerprint(),
        "panoramas": len(records),
    }
    with open(os.path.join(args.out, "city.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(json.dumps({"panoramas": len(records), "roads": len(city.roads), "out": args.out}))
    return EXIT_OK


def cmd_synthcity_traj(args) -> int:
    from .metrics import benchmark_spec
    from .synthcity import DEFAULT_VIEW_INTRINSICS, sample_trajectory

    city, doc = _load_city(args.city)
    extra = {"city": os.path.abspath(args.city), "session": args.session}
    if args.benchmark:
        from .manifest import read_manifest, records_from_manifest

        man = os.path.join(args.city, "manifest.jsonl")
        records, _ = records_from_manifest(read_manifest(man, validate_paths=False), args.city)
        seqs = benchmark_spec(city, records, args.benchmark, n_sequences=args.index + 1, session=args.session, seed=args.seed)
        seq = seqs[args.index]
        poses = seq.poses
        extra.update(id=seq.id, exclusion=sorted(seq.exclusion), length_m=seq.length_m)
    else:
        rng = np.random.default_rng(args.seed)
        try:
            poses = sample_trajectory(city, rng, n_poses=args.frames, step=args.step, yaw_jitter=math.radians(args.yaw_jitter), lane_offset=args.lane_offset)
        except ValueError as exc:
            raise DegenerateInputError(str(exc)) from None
        extra.update(id=f"traj-{args.seed}", exclusion=[])
    _write_json(mf.trajectory_doc(poses, DEFAULT_VIEW_INTRINSICS, **extra), args.out)
    return EXIT_OK


def cmd_synthcity_render(args) -> int:
    from .synthcity import render_analytic, transient_mask

    city, doc = _load_city(args.city)
    poses, intr, _ = mf.read_trajectory(args.traj)
    mask_sessions = args.mask_sessions.split(",") if args.mask_sessions else doc["sessions"]
    os.makedirs(os.path.join(args.out, "frames"), exist_ok=True)
    lines = []
    for i, pose in enumerate(poses):
        rgb, depth = render_analytic(city, pose, intr, args.session)
        dyn = np.zeros(intr.shape, dtype=bool)
        for s in mask_sessions:
            dyn |= transient_mask(city, pose, intr, s)
        stem = f"frames/{i:05d}"
        mf.write_png(os.path.join(args.out, stem + ".png"), rgb)
        mf.write_depth(os.path.join(args.out, stem + ".depth"), depth.astype(np.float32))
        mf.write_png(os.path.join(args.out, stem + "_dynamic.png"), dyn)
        lines.append(
            mf.entry(
                "frame",
                id=f"{i:05d}",
                index=i,
                pose=mf.pose_to_json(pose),
                intrinsics=intr.to_dict(),
                paths={"image": stem + ".png", "depth": stem + ".depth", "dynamic": stem + "_dynamic.png"},
            )
        )
    mf.write_manifest(os.path.join(args.out, "frames.jsonl"), lines)
    return EXIT_OK


# --- index / retrieve / warp -----------------------------------------------


def cmd_index_build(args) -> int:
    from .pano_index import build_index, save_index

    entries = mf.read_manifest(args.manifest, kinds=("pano", "view"))
    records, view_lines = mf.records_from_manifest(entries, os.path.dirname(os.path.abspath(args.manifest)))
    if not records:
        raise ValidationError(f"{args.manifest}: no pano lines")
    save_index(build_index(records), args.out, args.manifest, view_lines)
    print(json.dumps({"panoramas": len(records), "out": args.out}))
    return EXIT_OK


def _view_doc(view, coverage, distance, base: str | None) -> dict:
    def rel(p):
        p = os.path.abspath(p)
        return os.path.relpath(p, base) if base else p

    return {
        "id": view.id,
        "parent_id": view.parent_id,
        "yaw_index": view.yaw_index,
        "coverage": coverage,
        "distance": distance,
        "pose": mf.pose_to_json(view.pose),
        "intrinsics": view.intrinsics.to_dict(),
        "paths": {"image": rel(view.image_path), "depth": rel(view.depth_path)},
    }


def cmd_retrieve(args) -> int:
    from .pano_index import load_index, retrieve_references

    index = load_index(args.idx)
    poses, intr, tdoc = mf.read_trajectory(args.traj)
    if not poses:
        raise ValidationError(f"{args.traj}: empty trajectory")
    exclusion = set(tdoc.get("exclusion", [])) | set(args.exclude or [])
    res = retrieve_references(
        index,
        poses,
        args.K,
        args.threshold,
        exclusion=exclusion,
        radius=args.radius,
        stride=args.stride,
        target_intrinsics=intr,
    )
    base = os.path.dirname(os.path.abspath(args.out)) if args.out else None
    doc = {
        "schema": mf.DOC_SCHEMAS["retrieval"],
        "K": args.K,
        "threshold": args.threshold,
        "radius": args.radius,
        "excluded": len(exclusion),
        "references": [_view_doc(e.view, e.coverage, e.distance, base) for e in res],
    }
    _write_json(doc, args.out)
    return EXIT_OK


def _read_refs(path: str):
    from .pano_index import PinholeView

    doc = _read_json(path)
    mf.check_doc_schema(doc, "retrieval", f"{path}: ")
    base = os.path.dirname(os.path.abspath(path))
    views = []
    for r in doc["references"]:
        img = os.path.join(base, r["paths"]["image"])
        dep = os.path.join(base, r["paths"]["depth"])
        for p in (img, dep):
            if not os.path.exists(p):
                raise ValidationError(f"{path}: reference raster {p} does not exist")
        views.append(
            PinholeView(
                intrinsics=CameraIntrinsics.from_dict(r["intrinsics"]),
                pose=mf.pose_from_json(r["pose"]),
                parent_id=r["parent_id"],
                yaw_index=r["yaw_index"],
                image=mf.read_png(img),
                depth=mf.read_depth(dep),
                image_path=img,
                depth_path=dep,
            )
        )
    return views


def cmd_warp(args) -> int:
    from .warp import warp_chunk

    views = _read_refs(args.refs)
    poses, intr, _ = mf.read_trajectory(args.traj)
    frames = warp_chunk(poses, views, intr, workers=args.workers)
    os.makedirs(os.path.join(args.out, "frames"), exist_ok=True)
    lines = []
    for i, (pose, fr) in enumerate(zip(poses, frames)):
        stem = f"frames/{i:05d}"
        mf.write_png(os.path.join(args.out, stem + ".png"), fr.image)
        mf.write_png(os.path.join(args.out, stem + "_valid.png"), fr.validity)
        depth = np.where(fr.validity, fr.depth, np.nan).astype(np.float32)
        mf.write_depth(os.path.join(args.out, stem + ".depth"), depth)
        lines.append(
            mf.entry(
                "frame",
                id=f"{i:05d}",
                index=i,
                pose=mf.pose_to_json(pose),
                intrinsics=intr.to_dict(),
                source_ref_id=fr.source_ref_id,
                valid_fraction=float(fr.validity.mean()),
                paths={"image": stem + ".png", "validity": stem + "_valid.png", "depth": stem + ".depth"},
            )
        )
    mf.write_manifest(os.path.join(args.out, "frames.jsonl"), lines)
    print(json.dumps({"frames": len(lines), "references": len(views), "out": args.out}))
    return EXIT_OK


# --- align -----------------------------------------------------------------


def cmd_align(args) -> int:
    from .alignment import PoseChunk, align_chunk, align_sequence, scale_depth

    origin = _parse_origin(args.origin)
    entries = mf.read_manifest(args.chunks, kinds=("frame",))
    base = os.path.dirname(os.path.abspath(args.chunks))
    groups: dict[int, list[dict]] = {}
    for e in entries:
        if "chunk" not in e or "geo" not in e or "pose" not in e:
            raise ValidationError(f"{args.chunks}: frame lines need chunk, pose and geo")
        groups.setdefault(int(e["chunk"]), []).append(e)
    order = sorted(groups)
    chunks = [
        PoseChunk([mf.pose_from_json(e["pose"]) for e in groups[c]], [GeoPoint.from_dict(e["geo"]) for e in groups[c]])
        for c in order
    ]
    if args.shared_frame:
        results = align_sequence(chunks, origin, args.method)
        # regroup frames to match the merged alignment groups
        flat = [e for c in order for e in groups[c]]
        aligned, k = [], 0
        for sim, poses in results:
            aligned.append((sim, flat[k : k + len(poses)], poses))
            k += len(poses)
    else:
        aligned = []
        for c, ch in zip(order, chunks):
            try:
                sim, poses = align_chunk(ch, origin, args.method)
            except DegenerateInputError as exc:
                raise DegenerateInputError(f"chunk {c}: {exc}") from None
            aligned.append((sim, groups[c], poses))

    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for sim, ents, poses in aligned:
        for e, p in zip(ents, poses):
            new = {k: v for k, v in e.items() if k != "paths"}
            new.update(pose=mf.pose_to_json(p), metric=True, similarity=sim.to_dict())
            paths = {}
            for name, rel in (e.get("paths") or {}).items():
                src = os.path.join(base, rel)
                if name == "depth":
                    stem = os.path.splitext(os.path.basename(rel))[0]
                    dst_rel = f"metric_depth/{e.get('chunk')}_{stem}.depth"
                    os.makedirs(os.path.join(out_dir, "metric_depth"), exist_ok=True)
                    mf.write_depth(os.path.join(out_dir, dst_rel), scale_depth(mf.read_depth(src), sim.scale))
                    paths[name] = dst_rel
                else:
                    paths[name] = os.path.relpath(src, out_dir)
            new["paths"] = paths
            lines.append(new)
    mf.write_manifest(args.out, lines)
    print(json.dumps({"chunks": len(order), "groups": len(aligned), "frames": len(lines), "out": args.out}))
    return EXIT_OK


# --- dataset ---------------------------------------------------------------


def cmd_dataset_build(args) -> int:
    from .dataset_builder import build_samples
    from .pano_index import load_index

    index = load_index(args.idx)
    entries = mf.read_manifest(args.routes, kinds=("route",))
    routes = [(e["id"], e["panoramas"]) for e in entries]
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for s in build_samples(index, routes, args.seed, args.N, args.K, args.radius, args.min_gap, args.source, args.stride):
        paths = {}
        for k, v in enumerate(s.references):
            paths[f"ref{k}_image"] = os.path.relpath(v.image_path, out_dir)
            paths[f"ref{k}_depth"] = os.path.relpath(v.depth_path, out_dir)
        lines.append(
            mf.entry(
                "sample",
                id=s.id,
                source=s.source,
                target_ids=s.target_ids,
                target_poses=[mf.pose_to_json(v.pose) for v in s.target],
                intrinsics=s.target[0].intrinsics.to_dict(),
                reference_ids=s.reference_ids,
                reference_views=[v.id for v in s.references],
                yaw_offset=s.yaw_offset,
                action=s.action,
                caption=s.caption,
                dropout=s.dropout.to_dict(),
                refs_forced=s.refs_forced,
                paths=paths,
            )
        )
    mf.write_manifest(args.out, lines)
    print(json.dumps({"samples": len(lines), "out": args.out}))
    return EXIT_OK


# --- plan ------------------------------------------------------------------


def cmd_plan(args) -> int:
    from .conditioning_planner import ChunkConfig, plan_autoregressive_run, plan_chunk

    overrides = _read_json(args.config) if args.config else {}
    overrides.pop("mode", None)
    cfg = ChunkConfig.for_mode(args.mode, **overrides)
    doc = plan_chunk(cfg).to_json()
    frames = args.frames if args.frames is not None else cfg.T
    doc["run"] = {"total_frames": frames, "chunks": [c.to_json() for c in plan_autoregressive_run(frames, cfg)]}
    _write_json(doc, args.out)
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def _emit(rows, args, **extra) -> None:
    from .metrics import results_csv, results_json

    text = results_csv(rows)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            f.write(results_json(rows, **extra) + "\n")


def cmd_eval_rot_trans(args) -> int:
    from .metrics import TrajectoryEval, rot_err, trans_err_detail

    pred, _, pdoc = mf.read_trajectory(args.pred)
    gt, _, _ = mf.read_trajectory(args.gt)
    ev = TrajectoryEval(pred, gt, args.chunk_size)
    r = rot_err(ev)
    t, skipped = trans_err_detail(ev)
    seq = args.sequence or pdoc.get("id", "sequence")
    _emit([(seq, "rot_err", r), (seq, "trans_err", t)], args, skipped_chunks=skipped)
    return EXIT_OK


def _read_frames(path: str) -> list[dict]:
    entries = mf.read_manifest(path, kinds=("frame",))
    base = os.path.dirname(os.path.abspath(path))
    for e in entries:
        e["_abs"] = {k: os.path.join(base, v) for k, v in (e.get("paths") or {}).items()}
    return sorted(entries, key=lambda e: e.get("index", 0))


def cmd_eval_mpsnr(args) -> int:
    from .metrics import masked_psnr_frames

    pred = _read_frames(args.pred)
    gt = _read_frames(args.gt)
    if len(pred) != len(gt):
        raise ValidationError(f"{len(pred)} predicted frames vs {len(gt)} ground-truth frames")
    p = np.stack([mf.read_png(e["_abs"]["image"]) for e in pred])
    g = np.stack([mf.read_png(e["_abs"]["image"]) for e in gt])
    pm = np.zeros(p.shape[:3], dtype=bool)
    gm = np.zeros(g.shape[:3], dtype=bool)
    for t, (a, b) in enumerate(zip(pred, gt)):
        if "dynamic" in a["_abs"]:
            pm[t] |= mf.read_mask(a["_abs"]["dynamic"])
        if args.valid_only and "validity" in a["_abs"]:
            pm[t] |= ~mf.read_mask(a["_abs"]["validity"])
        if "dynamic" in b["_abs"]:
            gm[t] |= mf.read_mask(b["_abs"]["dynamic"])
    vals, skipped = masked_psnr_frames(p, g, pm, gm)
    if skipped == len(vals):
        raise DegenerateInputError("no static pixels")
    value = float(np.nanmean(vals))
    _emit([(args.sequence or "sequence", "masked_psnr", value)], args, skipped_frames=skipped, frames=len(vals))
    return EXIT_OK


def cmd_eval_window(args) -> int:
    from .metrics import ProcessScorer, sliding_window_eval

    frames = _read_frames(args.frames)
    lines = [{k: v for k, v in e.items() if k != "_abs"} | {"paths": e["_abs"]} for e in frames]
    scorer = ProcessScorer(args.scorer_cmd)
    res = sliding_window_eval(lines, args.window, args.stride, scorer, workers=args.workers)
    seq = args.sequence or "sequence"
    _emit([(f"{seq}@{s}", "window_score", v) for s, v in res], args, window=args.window, stride=args.stride)
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swm", description="Retrieval, warping, planning and evaluation tools for street-view world models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sc = sub.add_parser("synthcity", help="procedural oracle city").add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = sc.add_parser("gen", help="generate a city, its street-view database and index")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--extent", type=float, default=300.0, help="city size in meters (default 300)")
    g.add_argument("--block", type=float, default=60.0, help="road spacing in meters (default 60)")
    g.add_argument("--interval", type=float, default=10.0, help="panorama spacing in meters (default 10)")
    g.add_argument("--jitter", type=float, default=1.0, help="spacing jitter bound in meters (default 1)")
    g.add_argument("--sessions", default="s0,s1", help="comma-separated capture sessions")
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_synthcity_gen)

    t = sc.add_parser("traj", help="sample a camera trajectory in a generated city")
    t.add_argument("--city", required=True, help="directory written by 'synthcity gen'")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--frames", type=int, default=20)
    t.add_argument("--step", type=float, default=1.0, help="meters between poses")
    t.add_argument("--yaw-jitter", type=float, default=20.0, help="max yaw offset in degrees")
    t.add_argument("--lane-offset", type=float, default=2.0, help="max lateral offset in meters")
    t.add_argument("--session", default="s0")
    t.add_argument("--benchmark", choices=("standard", "long"), help="emit a benchmark sequence instead")
    t.add_argument("--index", type=int, default=0, help="benchmark sequence number")
    t.add_argument("-o", "--out")
    t.set_defaults(func=cmd_synthcity_traj)

    r = sc.add_parser("render", help="analytic frames and dynamic masks along a trajectory")
    r.add_argument("--city", required=True)
    r.add_argument("--traj", required=True)
    r.add_argument("--session", default="s0")
    r.add_argument("--mask-sessions", help="sessions whose parked boxes count as dynamic (default: all)")
    r.add_argument("-o", "--out", required=True)
    r.set_defaults(func=cmd_synthcity_render)

    ix = sub.add_parser("index", help="spatial index").add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = ix.add_parser("build", help="build and save the spatial index of a manifest")
    b.add_argument("manifest")
    b.add_argument("-o", "--out", required=True)
    b.set_defaults(func=cmd_index_build)

    rt = sub.add_parser("retrieve", help="two-stage reference retrieval for a trajectory")
    rt.add_argument("--idx", required=True)
    rt.add_argument("--traj", required=True)
    rt.add_argument("-K", type=int, default=5)
    rt.add_argument("--threshold", type=float, default=0.3)
    rt.add_argument("--radius", type=float, default=40.0)
    rt.add_argument("--stride", type=int, default=8)
    rt.add_argument("--exclude", nargs="*", help="panorama ids to exclude")
    rt.add_argument("-o", "--out")
    rt.set_defaults(func=cmd_retrieve)

    w = sub.add_parser("warp", help="forward-warp references into every trajectory pose")
    w.add_argument("--refs", required=True)
    w.add_argument("--traj", required=True)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("-o", "--out", required=True)
    w.set_defaults(func=cmd_warp)

    a = sub.add_parser("align", help="GPS similarity alignment of estimator chunks")
    a.add_argument("--chunks", required=True)
    a.add_argument("--origin", required=True, help="lat,lon[,alt]")
    a.add_argument("--method", choices=("endpoints", "lstsq"), default="endpoints")
    a.add_argument("--shared-frame", action="store_true", help="chunks share one estimator frame; merge short chunks")
    a.add_argument("-o", "--out", required=True)
    a.set_defaults(func=cmd_align)

    ds = sub.add_parser("dataset", help="training samples").add_subparsers(dest="action", required=True, parser_class=_Parser)
    d = ds.add_parser("build", help="cross-temporal training samples along routes")
    d.add_argument("--routes", required=True)
    d.add_argument("--idx", required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("-N", type=int, default=20)
    d.add_argument("-K", type=int, default=5)
    d.add_argument("--radius", type=float, default=40.0)
    d.add_argument("--min-gap", type=float, default=3600.0, help="seconds")
    d.add_argument("--source", choices=("streetview", "synthetic", "drive-video"), default="synthetic")
    d.add_argument("--stride", type=int, help="records between windows (default N)")
    d.add_argument("-o", "--out", required=True)
    d.set_defaults(func=cmd_dataset_build)

    pl = sub.add_parser("plan", help="token plan and autoregressive run plan")
    pl.add_argument("--mode", choices=("tf", "sf"), required=True)
    pl.add_argument("--frames", type=int, help="total frames to plan (default one chunk)")
    pl.add_argument("--config", help="JSON file of chunk config overrides")
    pl.add_argument("-o", "--out")
    pl.set_defaults(func=cmd_plan)

    ev = sub.add_parser("eval", help="metrics").add_subparsers(dest="action", required=True, parser_class=_Parser)
    e1 = ev.add_parser("rot-trans", help="chunk-relative rotation and translation errors")
    e1.add_argument("--pred", required=True)
    e1.add_argument("--gt", required=True)
    e1.add_argument("--chunk-size", type=int, default=77)
    e1.set_defaults(func=cmd_eval_rot_trans)
    e2 = ev.add_parser("mpsnr", help="PSNR over static pixels")
    e2.add_argument("--pred", required=True)
    e2.add_argument("--gt", required=True)
    e2.add_argument("--no-valid-only", dest="valid_only", action="store_false", help="also score invalid warp pixels")
    e2.set_defaults(func=cmd_eval_mpsnr)
    e3 = ev.add_parser("window", help="sliding-window scores from an external scorer")
    e3.add_argument("--frames", required=True)
    e3.add_argument("--scorer-cmd", required=True, help="command taking a window manifest path, printing a float")
    e3.add_argument("--window", type=int, default=200)
    e3.add_argument("--stride", type=int, default=55)
    e3.add_argument("--workers", type=int, default=1)
    e3.set_defaults(func=cmd_eval_window)
    for e in (e1, e2, e3):
        e.add_argument("--sequence", help="sequence id for the report")
        e.add_argument("--csv", help="write CSV here instead of stdout")
        e.add_argument("--json", help="also write a JSON summary")
    return p


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        return args.func(args)
    except (DegenerateInputError, NoSinkAvailable) as exc:
        return _fail(exc, EXIT_DEGENERATE)
    except (ValidationError, SWMError, FileNotFoundError, KeyError) as exc:
        return _fail(exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
