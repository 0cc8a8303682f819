import csv
import io
import json
import math
import sys

import numpy as np
import pytest

from oracles import random_rotation, rodrigues
from swm.errors import DegenerateInputError, ValidationError
from swm.geo_core import CameraPose
from swm.metrics import (
    ProcessScorer,
    TrajectoryEval,
    benchmark_spec,
    masked_psnr,
    masked_psnr_frames,
    results_csv,
    results_json,
    rot_err,
    sliding_window_eval,
    trans_err,
    trans_err_detail,
    window_starts,
)


def random_traj(rng, n=40):
    return [CameraPose(random_rotation(rng), rng.normal(0, 10, 3)) for _ in range(n)]


def transformed(poses, R, t, s=1.0):
    return [CameraPose(R @ p.rotation, s * (R @ p.translation) + t) for p in poses]


class TestTrajectory:
    def test_identical_is_zero(self, rng):
        tr = random_traj(rng)
        ev = TrajectoryEval(tr, tr, 10)
        assert rot_err(ev) == 0.0 and trans_err(ev) == 0.0

    def test_global_rigid_and_scale_invariance(self, rng):
        for _ in range(20):
            gt, pred = random_traj(rng), random_traj(rng)
            base = TrajectoryEval(pred, gt, 8)
            R, t, s = random_rotation(rng), rng.normal(0, 100, 3), rng.uniform(0.1, 10)
            moved = TrajectoryEval(transformed(pred, R, t), gt, 8)
            assert abs(rot_err(moved) - rot_err(base)) < 1e-9
            assert abs(trans_err(moved) - trans_err(base)) < 1e-9
            scaled = TrajectoryEval(transformed(pred, np.eye(3), np.zeros(3), s), gt, 8)
            assert abs(trans_err(scaled) - trans_err(base)) < 1e-9

    def test_ten_degree_offset(self, rng):
        gt = random_traj(rng, 30)
        off = rodrigues(rng.normal(size=3), math.radians(10))
        # offset every chunk-relative rotation by the same 10 degrees
        pred = []
        for c in range(0, 30, 10):
            first = gt[c]
            pred.append(first)
            for p in gt[c + 1 : c + 10]:
                rel = first.rotation.T @ p.rotation
                pred.append(CameraPose(first.rotation @ rel @ off, p.translation))
        assert abs(rot_err(TrajectoryEval(pred, gt, 10)) - math.radians(10)) < 1e-9
        assert math.radians(10) == pytest.approx(0.17453, abs=1e-5)

    def test_perpendicular_closed_form(self):
        n = 12
        gt = [CameraPose(np.eye(3), [float(i), 0, 0]) for i in range(n)]
        pred = [CameraPose(np.eye(3), [0, 3.0 * i, 0]) for i in range(n)]
        expected = sum(math.hypot(i / (n - 1), i / (n - 1)) for i in range(1, n)) / (n - 1)
        assert abs(trans_err(TrajectoryEval(pred, gt, n)) - expected) < 1e-12

    def test_static_chunks_skipped(self, caplog):
        gt = [CameraPose(np.eye(3), [float(i), 0, 0]) for i in range(8)]
        pred = [CameraPose(np.eye(3), [float(i) if i >= 4 else 0.0, 0, 0]) for i in range(8)]
        value, skipped = trans_err_detail(TrajectoryEval(pred, gt, 4))
        assert skipped == [0] and value == pytest.approx(0.0, abs=1e-12)
        trans_err(TrajectoryEval(pred, gt, 4))
        assert "skipped" in caplog.text
        still = [CameraPose(np.eye(3), np.zeros(3))] * 8
        with pytest.raises(DegenerateInputError):
            trans_err(TrajectoryEval(still, gt, 4))

    def test_trailing_single_frame_dropped(self, rng):
        assert [len(c) for c in TrajectoryEval(random_traj(rng, 21), random_traj(rng, 21), 10).chunks()] == [10, 10]

    def test_validation(self, rng):
        with pytest.raises(ValidationError):
            TrajectoryEval(random_traj(rng, 3), random_traj(rng, 4), 2)
        with pytest.raises(ValidationError):
            TrajectoryEval(random_traj(rng, 3), random_traj(rng, 3), 1)


class TestPSNR:
    def test_gray_offset(self):
        gt = np.full((3, 16, 16, 3), 100, np.uint8)
        val = masked_psnr(gt + 16, gt)
        assert abs(val - 10 * math.log10(255**2 / 16**2)) < 1e-9
        # 20*log10(255/16) = 24.0487
        assert val == pytest.approx(24.05, abs=0.01)

    def test_identical_is_inf(self, rng):
        f = rng.random((2, 8, 8))
        assert masked_psnr(f, f) == math.inf

    def test_difference_inside_mask_only(self, rng):
        gt = rng.random((2, 8, 8, 3))
        pred = gt.copy()
        pred[:, :4] += 0.5
        m = np.zeros((2, 8, 8), bool)
        m[:, :4] = True
        assert masked_psnr(pred, gt, pred_masks=m) == math.inf
        assert masked_psnr(pred, gt, gt_masks=m) == math.inf
        assert masked_psnr(pred, gt) < 20

    def test_union_of_masks(self):
        gt = np.zeros((1, 4, 4))
        pred = gt.copy()
        pred[0, 0, 0] = pred[0, 3, 3] = 1.0
        a = np.zeros((1, 4, 4), bool)
        b = a.copy()
        a[0, 0, 0] = True
        b[0, 3, 3] = True
        assert masked_psnr(pred, gt, a, b) == math.inf

    def test_monotone_in_noise(self, rng):
        gt = rng.random((4, 16, 16))
        noise = rng.normal(size=gt.shape)
        vals = [masked_psnr(gt + a * noise, gt) for a in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(x >= y for x, y in zip(vals, vals[1:]))

    def test_skipped_frames(self):
        gt = np.zeros((2, 4, 4))
        m = np.zeros((2, 4, 4), bool)
        m[0] = True
        vals, skipped = masked_psnr_frames(gt + 0.1, gt, m)
        assert skipped == 1 and np.isnan(vals[0]) and vals[1] == pytest.approx(20.0)
        with pytest.raises(DegenerateInputError, match="no static pixels"):
            masked_psnr(gt + 0.1, gt, np.ones((2, 4, 4), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            masked_psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


class TestWindows:
    def test_reference_starts(self):
        assert window_starts(365, 200, 55) == [0, 55, 110, 165]
        assert window_starts(200, 200) == [0]
        assert window_starts(1460, 200, 55) == list(range(0, 1261, 55))
        with pytest.raises(ValidationError):
            window_starts(199, 200)

    def test_constant_scorer_and_ordering(self):
        frames = list(range(365))
        assert sliding_window_eval(frames, scorer=lambda w: 7.0) == [(s, 7.0) for s in (0, 55, 110, 165)]
        a = sliding_window_eval(frames, scorer=lambda w: float(w[0]), workers=4)
        assert a == [(s, float(s)) for s in (0, 55, 110, 165)]

    def test_process_scorer(self, tmp_path):
        script = tmp_path / "count.py"
        script.write_text("import sys\nprint(sum(1 for _ in open(sys.argv[-1])))\n")
        scorer = ProcessScorer([sys.executable, str(script)])
        frames = [str(tmp_path / f"{i}.png") for i in range(250)]
        assert sliding_window_eval(frames, 200, 50, scorer) == [(0, 200.0), (50, 200.0)]

    def test_process_scorer_bad_output(self, tmp_path):
        with pytest.raises(ValidationError):
            ProcessScorer([sys.executable, "-c", "print('x')"])(["a.png"])
        with pytest.raises(ValidationError):
            ProcessScorer([sys.executable, "-c", "raise SystemExit(3)"])(["a.png"])


class TestBenchmark:
    def test_frame_counts_and_exclusion(self, city, db):
        from swm.synthcity import polyline_distance

        std = benchmark_spec(city, db, "standard", n_sequences=5)
        lng = benchmark_spec(city, db, "long", n_sequences=2)
        assert all(s.frames == 365 for s in std) and all(s.frames == 1460 for s in lng)
        for s in std + lng:
            route = np.linalg.norm(np.diff(s.waypoints, axis=0), axis=1).sum()
            assert route == pytest.approx(s.length_m, rel=1e-9)
            on_route = polyline_distance(np.array([p.translation for p in s.poses]), s.waypoints)
            assert on_route.max() < 1e-6
            own = [r for r in db if r.session_id == "s0"]
            d = polyline_distance(np.array([r.local_position for r in own]), s.waypoints)
            assert {r.id for r, di in zip(own, d) if di <= city.road_half_width} == s.exclusion
            assert s.exclusion

    def test_deterministic(self, city, db):
        a = benchmark_spec(city, db, n_sequences=3, seed=5)
        b = benchmark_spec(city, db, n_sequences=3, seed=5)
        assert all(np.array_equal(x.waypoints, y.waypoints) for x, y in zip(a, b))

    def test_errors(self, city, db):
        with pytest.raises(ValidationError):
            benchmark_spec(city, db, "medium")
        with pytest.raises(ValidationError):
            benchmark_spec(city, db, session="nope")


def test_reports():
    rows = [("a", "mpsnr", math.inf), ("a", "rot_err", 0.25)]
    parsed = list(csv.reader(io.StringIO(results_csv(rows))))
    assert parsed == [["sequence_id", "metric", "value"], ["a", "mpsnr", "inf"], ["a", "rot_err", "0.25"]]
    doc = json.loads(results_json(rows))
    assert doc["schema"] == "swm.eval.v1" and doc["metrics"]["mpsnr"]["a"] == "inf"
