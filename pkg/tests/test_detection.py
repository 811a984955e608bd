import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicefuse.detection import (
    Detection,
    EvalConfig,
    aggregate_slices,
    detections_csv,
    eval_report_csv,
    evaluate_map,
    interpolated_ap,
    nms_per_class,
    read_detections,
    top_k,
    write_detections,
)
from slicefuse.errors import DataError
from slicefuse.slicing import Box3D

from oracles import ap_oracle, greedy_nms_oracle


def det(x, y, score=1.0, cls=0, slice_index=0, frame="0"):
    return Detection(Box3D((x, y, 0.0), (4.0, 2.0, 1.5), 0.0, cls, score), slice_index, frame)


class TestTopK:
    def test_fewer_than_k(self):
        d = [det(0, 0, 0.1), det(1, 0, 0.9), det(2, 0, 0.5)]
        assert [x.score for x in top_k(d, 500)] == [0.9, 0.5, 0.1]

    def test_ties_keep_input_order(self):
        d = [det(float(i), 0.0, 0.5) for i in range(501)]
        kept = top_k(d, 500)
        assert kept == d[:500]

    def test_sort_oracle(self, np_rng):
        scores = np.round(np_rng.uniform(size=800), 2)  # plenty of ties
        d = [det(float(i), 0.0, float(s)) for i, s in enumerate(scores)]
        expect = [d[i] for i in sorted(range(800), key=lambda i: (-scores[i], i))[:500]]
        assert top_k(d, 500) == expect


class TestNms:
    def test_same_centre_same_class(self):
        a, b = det(0, 0, 0.9), det(0, 0, 0.8)
        assert nms_per_class([b, a], 0.5) == [a]

    def test_different_classes_kept(self):
        a, b = det(0, 0, 0.9, cls=0), det(0, 0, 0.8, cls=1)
        assert nms_per_class([a, b], 0.5) == [a, b]

    def test_boundary_distance_not_suppressed(self):
        a, b = det(0, 0, 0.9), det(0.5, 0, 0.8)
        assert nms_per_class([a, b], 0.5) == [a, b]

    def test_per_class_radius(self):
        a, b = det(0, 0, 0.9, cls=2), det(1.5, 0, 0.8, cls=2)
        assert nms_per_class([a, b], {2: 2.0}) == [a]
        assert nms_per_class([a, b], {0: 2.0}) == [a, b]

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            nms_per_class([det(0, 0)], 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        raw = [(float(np.round(rng.uniform(), 2)), int(rng.integers(0, 3)), float(rng.uniform(0, 5)), float(rng.uniform(0, 5)), k) for k in range(50)]
        dets = [det(x, y, s, c) for s, c, x, y, _ in raw]
        radius = {0: 0.5, 1: 1.0, 2: 1.5}
        got = nms_per_class(dets, radius)
        want = [dets[k] for k in greedy_nms_oracle(raw, radius)]
        assert got == want

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_idempotent_and_shift_invariant(self, seed):
        rng = np.random.default_rng(seed)
        dets = [det(*rng.uniform(0, 4, 2), float(rng.uniform(0, 0.5)), int(rng.integers(0, 2))) for _ in range(40)]
        once = nms_per_class(dets, 0.7)
        assert nms_per_class(once, 0.7) == once
        shifted = [Detection(Box3D(d.box.center, d.box.dims, d.box.yaw, d.class_id, d.score + 0.3)) for d in dets]
        assert [d.xy for d in nms_per_class(shifted, 0.7)] == [d.xy for d in once]


class TestAggregate:
    def test_fragmented_object(self):
        a, b = det(10.0, 0.1, 0.7, slice_index=0), det(10.05, -0.1, 0.8, slice_index=7)
        out = aggregate_slices([[a], [], [], [], [], [], [], [b]], 0.5)
        assert out == [b] and out[0].slice_index == 7

    def test_disjoint_is_concatenation(self):
        s0, s1 = [det(10, 1, 0.9)], [det(-10, 1, 0.4), det(-20, 1, 0.3)]
        assert aggregate_slices([s0, s1]) == s0 + s1

    def test_equals_pooled_nms(self, np_rng):
        per = [[det(*np_rng.uniform(-5, 5, 2), float(np_rng.uniform()), int(np_rng.integers(0, 3)), k) for _ in range(20)] for k in range(8)]
        pooled = [d for s in per for d in s]
        assert aggregate_slices(per, 1.0) == nms_per_class(pooled, 1.0)


CFG = EvalConfig((0.5, 1.0, 2.0, 4.0), (0, 1, 2))


class TestEvaluate:
    def test_perfect(self):
        gts = [Box3D((x, 2.0 * x, 0.0), (4, 2, 1.5), 0.0, x % 3) for x in range(1, 10)]
        res = evaluate_map([Detection(g) for g in gts], gts, CFG)
        assert res.mean_ap == 1.0
        assert all(v == 1.0 for v in res.ap.values())

    def test_single_detection_1p5m_away(self):
        gt = Box3D((10.0, 0.0, 0.0), (4, 2, 1.5), 0.0, 0)
        res = evaluate_map([det(11.5, 0.0, 0.6)], [gt], EvalConfig((0.5, 1.0, 2.0, 4.0), (0,)))
        assert [res.ap[(0, t)] for t in (0.5, 1.0, 2.0, 4.0)] == [0.0, 0.0, 1.0, 1.0]
        assert res.class_ap(0) == 0.5 and res.mean_ap == 0.5

    def test_absent_class(self):
        gt = Box3D((10.0, 0.0, 0.0), (4, 2, 1.5), 0.0, 0)
        res = evaluate_map([Detection(gt)], [gt], CFG)
        assert res.absent == (1, 2)
        assert res.class_ap(1) is None and res.mean_ap == 1.0
        assert evaluate_map([], [], CFG).mean_ap is None

    def test_frames_do_not_cross_match(self):
        gt = Box3D((0.0, 0.0, 0.0), (4, 2, 1.5), 0.0, 0)
        res = evaluate_map([det(0.0, 0.0, frame="b")], {"a": [gt]}, EvalConfig((1.0,), (0,)))
        assert res.mean_ap == 0.0

    def test_duplicate_does_not_help(self, np_rng):
        gts = [Box3D((float(x), 0.0, 0.0), (4, 2, 1.5), 0.0, 0) for x in range(0, 50, 5)]
        dets = [det(g.center[0] + 0.3, 0.0, float(np_rng.uniform(0.5, 1.0))) for g in gts[:7]]
        dets += [det(100.0 + k, 0.0, float(np_rng.uniform(0.0, 1.0))) for k in range(5)]
        base = evaluate_map(dets, gts, EvalConfig((0.5, 1.0), (0,))).mean_ap
        dup = dets + [det(gts[0].center[0] + 0.1, 0.0, 0.01)]
        assert evaluate_map(dup, gts, EvalConfig((0.5, 1.0), (0,))).mean_ap <= base
        assert 0.0 <= base <= 1.0

    def test_interpolated_ap_edge_cases(self):
        assert interpolated_ap(np.array([], bool), 3) == 0.0
        assert interpolated_ap(np.array([True, True]), 2) == 1.0
        # recall 0.5 reached at precision 1: 51 of 101 points
        assert interpolated_ap(np.array([True]), 2) == pytest.approx(51 / 101)
        with pytest.raises(ValueError):
            interpolated_ap(np.array([True]), 0)

    def test_thresholds_must_increase(self):
        with pytest.raises(ValueError):
            EvalConfig((1.0, 0.5))

    def test_random_scenes_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            gts = {f: [Box3D((*rng.uniform(-20, 20, 2), 0.0), (4, 2, 1.5), 0.0, int(rng.integers(0, 3))) for _ in range(rng.integers(0, 12))] for f in ("a", "b")}
            dets = []
            for f, boxes in gts.items():
                for g in boxes:
                    if rng.uniform() < 0.8:
                        dets.append(det(*(np.array(g.center[:2]) + rng.normal(0, 1.0, 2)), float(np.round(rng.uniform(), 2)), g.class_id, frame=f))
                dets += [det(*rng.uniform(-20, 20, 2), float(np.round(rng.uniform(), 2)), int(rng.integers(0, 3)), frame=f) for _ in range(rng.integers(0, 6))]
            res = evaluate_map(dets, gts, CFG)
            for c in CFG.classes:
                g = [(f, b.center[0], b.center[1]) for f, bs in gts.items() for b in bs if b.class_id == c]
                if not g:
                    assert (c, 0.5) not in res.ap
                    continue
                d = [(x.score, x.frame_id, *x.xy) for x in dets if x.class_id == c]
                for t in CFG.thresholds:
                    assert res.ap[(c, t)] == pytest.approx(ap_oracle(d, g, t), abs=1e-12)


class TestCsv:
    def test_round_trip(self, tmp_path):
        d = [det(1.25, -3.5, 0.75, 2, 3, "f1"), det(0.0, 4.0, 0.5, 0, 0, "f2")]
        write_detections(d, tmp_path / "d.csv")
        back = read_detections(tmp_path / "d.csv")
        assert [(x.frame_id, x.slice_index, x.class_id, x.score, x.xy) for x in back] == [
            (x.frame_id, x.slice_index, x.class_id, x.score, x.xy) for x in d
        ]
        assert detections_csv(d).splitlines()[0] == "frame_id,slice,class,score,cx,cy,cz,l,w,h,yaw"

    def test_bad_file(self, tmp_path):
        (tmp_path / "d.csv").write_text("frame_id,slice\nx,notanint\n")
        with pytest.raises(DataError):
            read_detections(tmp_path / "d.csv")
        with pytest.raises(DataError):
            read_detections(tmp_path / "missing.csv")

    def test_eval_report(self):
        gt = Box3D((10.0, 0.0, 0.0), (4, 2, 1.5), 0.0, 0)
        text = eval_report_csv(evaluate_map([det(11.5, 0.0)], [gt], CFG), {0: "car", 1: "pedestrian", 2: "truck"})
        lines = text.splitlines()
        assert lines[0] == "class,threshold,ap"
        assert "car,2,1.000000" in lines and "pedestrian,1,absent" in lines
        assert lines[-1] == "mAP,all,0.500000"
