import hashlib
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from swm.cli import build_parser, main
from swm.geo_core import CameraPose, local_to_geo
from swm.pano_index import read_index_file
from swm.manifest import entry, read_manifest, trajectory_doc, write_manifest
from swm.synthcity import DEFAULT_VIEW_INTRINSICS

from helpers import ORIGIN

SNAPSHOT = os.path.join(os.path.dirname(__file__), "snapshots", "help.txt")


def all_help(parser, path=("swm",)):
    out = [f"$ {' '.join(path)} --help\n{parser.format_help()}"]
    for action in parser._actions:
        if action.__class__.__name__ == "_SubParsersAction":
            for name, sub in action.choices.items():
                out.extend(all_help(sub, path + (name,)))
    return out


def help_text(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    return "\n".join(all_help(build_parser()))


def test_help_snapshot(monkeypatch):
    text = help_text(monkeypatch)
    if os.environ.get("SWM_UPDATE_SNAPSHOTS"):
        with open(SNAPSHOT, "w", encoding="utf-8") as f:
            f.write(text)
    with open(SNAPSHOT, encoding="utf-8") as f:
        assert text == f.read()


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "message", "exit_code"}
    return doc


class TestPlan:
    def test_tf_defaults(self, capsys):
        code, out, _ = run(["plan", "--mode", "tf"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["schema"] == "swm.plan.v1"
        sink = [t for t in doc["tokens"] if t["kind"] == "sink"]
        assert sink[0]["rope_position"] == 30
        assert [t["rope_position"] for t in doc["tokens"] if t["kind"] == "reference"] == [75, 80, 85, 90, 95]

    def test_sf_run(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"K": 2}))
        code, out, _ = run(["plan", "--mode", "sf", "--frames", 30, "--config", cfg], capsys)
        doc = json.loads(out)
        assert doc["config"]["K"] == 2 and len(doc["run"]["chunks"]) == 3
        assert doc["run"]["chunks"][-1]["frames"] == [24, 30]

    def test_bad_config_exits_2(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"H": 50}))
        code, _, err = run(["plan", "--mode", "tf", "--config", cfg], capsys)
        assert code == 2
        doc = error_of(err)
        assert doc["error"] == "ConfigurationError" and "H <= L" in doc["message"] and doc["exit_code"] == 2


class TestErrors:
    def test_usage_error(self, capsys):
        code, _, err = run(["retrieve", "--idx"], capsys)
        assert code == 2 and error_of(err)["error"] == "ValidationError"

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(["index", "build", tmp_path / "nope.jsonl", "-o", tmp_path / "i"], capsys)
        assert code == 2 and error_of(err)["exit_code"] == 2

    def test_bad_schema(self, capsys, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"kind": "pano", "schema": "swm.pano.v0"}) + "\n")
        code, _, err = run(["index", "build", p, "-o", tmp_path / "i"], capsys)
        assert code == 2 and "not recognized" in error_of(err)["message"]

    def test_degenerate_exits_3(self, capsys, tmp_path):
        pred = tmp_path / "p.json"
        still = [CameraPose.looking([0, 0, 0], 0.0)] * 4
        pred.write_text(json.dumps(trajectory_doc(still, DEFAULT_VIEW_INTRINSICS)))
        code, _, err = run(["eval", "rot-trans", "--pred", pred, "--gt", pred, "--chunk-size", 4], capsys)
        assert code == 3 and error_of(err)["exit_code"] == 3

    def test_subprocess_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "swm", "plan", "--mode", "xx"], capture_output=True, text=True)
        assert res.returncode == 2
        assert json.loads(res.stderr.strip().splitlines()[-1])["exit_code"] == 2


class TestEval:
    def test_rot_trans_reports(self, capsys, tmp_path):
        gt = [CameraPose.looking([i, 0, 2.5], 0.0) for i in range(10)]
        pred = [CameraPose.looking([i, 0.1 * i, 2.5], 0.02 * i) for i in range(10)]
        for name, poses in (("gt", gt), ("pred", pred)):
            (tmp_path / f"{name}.json").write_text(json.dumps(trajectory_doc(poses, DEFAULT_VIEW_INTRINSICS)))
        code, out, _ = run(["eval", "rot-trans", "--pred", tmp_path / "pred.json", "--gt", tmp_path / "gt.json",
                            "--chunk-size", 5, "--sequence", "x", "--json", tmp_path / "r.json"], capsys)
        assert code == 0 and out.splitlines()[0] == "sequence_id,metric,value"
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["metrics"]["rot_err"]["x"] > 0

    def test_window(self, capsys, tmp_path):
        write_manifest(tmp_path / "f.jsonl", [entry("frame", index=i, paths={}) for i in range(365)])
        script = tmp_path / "s.py"
        script.write_text("import sys, json\nprint(json.loads(open(sys.argv[-1]).readline())['index'])\n")
        code, out, _ = run(["eval", "window", "--frames", tmp_path / "f.jsonl", "--scorer-cmd", f"{sys.executable} {script}"], capsys)
        assert code == 0
        rows = [l.split(",") for l in out.strip().splitlines()[1:]]
        assert [(r[0], float(r[2])) for r in rows] == [(f"sequence@{s}", float(s)) for s in (0, 55, 110, 165)]


def test_align_round_trip(capsys, tmp_path, rng):
    lines = []
    for c in range(2):
        for i in range(6):
            x = 10.0 * c + 2.0 * i
            g = local_to_geo(np.array([[x, 0, 2.5]]), ORIGIN)[0]
            est = CameraPose.looking([0.5 * x, 0, 0], 0.0)
            lines.append(entry("frame", index=6 * c + i, chunk=c, pose=est.to_row_major(), geo=g.to_dict(), paths={}))
    write_manifest(tmp_path / "c.jsonl", lines)
    code, _, _ = run(["align", "--chunks", tmp_path / "c.jsonl", "--origin", f"{ORIGIN.latitude},{ORIGIN.longitude}",
                      "-o", tmp_path / "out" / "m.jsonl"], capsys)
    assert code == 0
    out = read_manifest(tmp_path / "out" / "m.jsonl")
    assert all(e["metric"] for e in out)
    assert out[3]["similarity"]["scale"] == pytest.approx(2.0)
    np.testing.assert_allclose(CameraPose.from_row_major(out[-1]["pose"]).translation, [20, 0, 2.5], atol=1e-6)


def tree_hash(root):
    h = hashlib.sha256()
    for dirpath, dirnames, files in os.walk(root):
        dirnames.sort()
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            h.update(os.path.relpath(p, root).encode())
            with open(p, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def small_city(tmp_path_factory):
    out = tmp_path_factory.mktemp("city") / "c"
    assert main(["synthcity", "gen", "--seed", "7", "--extent", "120", "-o", str(out)]) == 0
    return out


def test_gen_is_deterministic(small_city, tmp_path, capsys):
    again = tmp_path / "c"
    assert main(["synthcity", "gen", "--seed", "7", "--extent", "120", "-o", str(again)]) == 0
    assert tree_hash(small_city) == tree_hash(again)


def test_small_pipeline(small_city, tmp_path, capsys):
    c = small_city
    assert run(["index", "build", c / "manifest.jsonl", "-o", tmp_path / "rebuilt.swmidx"], capsys)[0] == 0
    a, b = read_index_file(tmp_path / "rebuilt.swmidx"), read_index_file(c / "index.swmidx")
    # the manifest path is stored relative to each index file
    assert os.path.samefile(os.path.join(tmp_path, a.pop("manifest")), os.path.join(c, b.pop("manifest")))
    assert a == b
    assert run(["synthcity", "traj", "--city", c, "--seed", 2, "--frames", 6, "-o", tmp_path / "t.json"], capsys)[0] == 0
    assert run(["retrieve", "--idx", tmp_path / "rebuilt.swmidx", "--traj", tmp_path / "t.json", "-o", tmp_path / "r.json"], capsys)[0] == 0
    refs = json.loads((tmp_path / "r.json").read_text())
    assert refs["schema"] == "swm.retrieval.v1" and refs["references"]
    assert run(["warp", "--refs", tmp_path / "r.json", "--traj", tmp_path / "t.json", "-o", tmp_path / "w"], capsys)[0] == 0
    assert run(["synthcity", "render", "--city", c, "--traj", tmp_path / "t.json", "-o", tmp_path / "gt"], capsys)[0] == 0
    code, out, _ = run(["eval", "mpsnr", "--pred", tmp_path / "w" / "frames.jsonl", "--gt", tmp_path / "gt" / "frames.jsonl"], capsys)
    assert code == 0
    assert float(out.splitlines()[1].split(",")[2]) >= 30.0
    code, out, _ = run(["dataset", "build", "--routes", c / "routes.jsonl", "--idx", c / "index.swmidx", "--seed", 1,
                        "-N", 4, "-K", 2, "-o", tmp_path / "ds" / "s.jsonl"], capsys)
    assert code == 0
    samples = read_manifest(tmp_path / "ds" / "s.jsonl")
    assert samples and all(e["kind"] == "sample" for e in samples)
    sessions = {e["id"][:2] for e in samples}
    assert sessions == {"s0", "s1"}
    for e in samples:
        assert all(r.split("-")[0] != e["target_ids"][0].split("-")[0] for r in e["reference_ids"])
