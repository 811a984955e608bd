import json

import numpy as np
import pytest

from slicefuse.detection import aggregate_slices, nms_per_class
from slicefuse.detector import OccupancyPeakDetector, image_energy
from slicefuse.errors import ConfigError
from slicefuse.fusion import crop, fuse, uncrop
from slicefuse.grid import BevMap, GridSpec, Quadrant
from slicefuse.image_bev import batch_standardize, reduce_volume_to_bev, splat_to_volume
from slicefuse.pillars import encode_pillars, pillarize
from slicefuse.pipeline import (
    DESK_GRID,
    RunConfig,
    compute_features,
    make_encoder,
    noise_sweep,
    noise_trend,
    project_scene,
    run_pipeline,
)
from slicefuse.slicing import slice_sweep
from slicefuse.synthetic import CLASSES, generate_synthetic_scene


@pytest.fixture(scope="module")
def scene():
    return generate_synthetic_scene(3, 8)


@pytest.fixture(scope="module")
def clean_run(scene):
    return run_pipeline(scene, RunConfig())


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = RunConfig()
        assert cfg.grid == DESK_GRID and cfg.eval_config.thresholds == (0.5, 1.0, 2.0, 4.0)

    @pytest.mark.parametrize(
        "bad",
        [
            {"n_slices": 0},
            {"noise_deg": -1.0},
            {"nms_radius": 0.0},
            {"nms_radius": {"0": -1}},
            {"thresholds": [1.0, 0.5]},
            {"grid": {"cell_z": 0.7}},
            {"grid": {"cell_xy": 0.3}},
            {"unknown_key": 1},
            {"n_slices": "eight"},
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)

    def test_round_trip_and_load(self, tmp_path):
        cfg = RunConfig(n_slices=4, nms_radius={0: 1.0, 2: 2.0}, disabled_cameras=(1,), seed=3)
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert RunConfig.load(p) == cfg
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(p)


class TestRun:
    def test_detections_and_eval(self, clean_run, scene):
        assert clean_run.evaluation is not None
        assert 0.0 <= clean_run.mean_ap <= 1.0
        assert len(clean_run.per_slice) == 8
        assert all(0.0 <= d.score <= 1.0 and d.frame_id == scene.frame_id for d in clean_run.detections)

    def test_aggregation_is_pooled_nms(self, clean_run):
        pooled = [d for s in clean_run.per_slice for d in s]
        assert clean_run.detections == nms_per_class(pooled, 0.5)
        assert clean_run.detections == aggregate_slices(clean_run.per_slice)

    def test_deterministic(self, scene, clean_run, tmp_path):
        a = run_pipeline(scene, RunConfig(out_dir=str(tmp_path / "a")))
        b = run_pipeline(scene, RunConfig(out_dir=str(tmp_path / "b")))
        assert [d.box for d in a.detections] == [d.box for d in clean_run.detections]
        for name in ("detections.csv", "per_slice_detections.csv", "run_config.json", "eval.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_loaded_bundle_matches_memory(self, scene, clean_run, tmp_path):
        from slicefuse.scene_io import SceneBundle

        scene.save(tmp_path / "s")
        again = run_pipeline(SceneBundle.load(tmp_path / "s"), RunConfig())
        assert [d.box for d in again.detections] == [d.box for d in clean_run.detections]

    def test_zero_noise_sweep_equals_clean_run(self, scene, clean_run):
        rows = noise_sweep([scene], RunConfig(), ((0.0, 0.0),))
        assert rows[0]["mAP"] == clean_run.mean_ap

    def test_disabled_camera_features(self, scene):
        feats = compute_features(scene, RunConfig(disabled_cameras=(2, 4)))
        assert sorted(feats) == [0, 1, 3, 5]
        assert compute_features(scene, RunConfig(use_images=False)) == {}

    def test_single_slice_equals_full_scan_maps(self, scene):
        cfg = RunConfig(n_slices=1)
        grid = cfg.grid
        (sl,) = slice_sweep(scene.points, 1)
        p_full = encode_pillars(pillarize(sl.points, grid), grid, make_encoder(grid, 0))
        full = fuse(p_full, project_scene(scene, cfg))
        feats = compute_features(scene, cfg)
        vols = [splat_to_volume([feats[k] for k in sorted(feats)], scene.rig, grid, Quadrant(q)) for q in range(4)]
        maps = [reduce_volume_to_bev(v) for v in batch_standardize(vols)]
        acc = np.zeros(full.values.shape)
        for q in range(4):
            acc += uncrop(fuse(crop(p_full, Quadrant(q)), maps[q]), Quadrant(q), (grid.nx, grid.ny)).values
        np.testing.assert_array_equal(acc, full.values)

    def test_empty_scene(self):
        s = generate_synthetic_scene(9, 0)
        res = run_pipeline(s, RunConfig())
        assert res.evaluation is None


class TestDetector:
    GRID = GridSpec(cell_xy=0.4, channels=2)

    def _detector(self):
        return OccupancyPeakDetector({k: v[1] for k, v in CLASSES.items()})

    def _map(self, blobs, image=True):
        nx = 64
        vals = np.zeros((nx, nx, 4))
        # cameras see a uniform background everywhere
        vals[..., 2:] = 1.0
        for i0, j0, li, lj in blobs:
            vals[i0 : i0 + li, j0 : j0 + lj, 0] = 1.0
            if image:
                vals[i0 : i0 + li, j0 : j0 + lj, 2:] = 3.0
        return BevMap(vals, np.any(vals != 0, axis=2))

    def test_empty(self):
        assert self._detector()(self._map([]), 2, self.GRID) == []

    def test_classifies_by_footprint(self):
        # 4.4 x 2.0 m car and 8 x 2.4 m truck footprints on a 0.4 m grid
        boxes = self._detector()(self._map([(5, 5, 11, 5), (30, 30, 20, 6)]), 2, self.GRID)
        assert sorted(b.class_id for b in boxes) == [0, 2]

    def test_image_support_raises_score(self):
        with_img = self._detector()(self._map([(5, 5, 11, 5)]), 2, self.GRID)[0].score
        without = self._detector()(self._map([(5, 5, 11, 5)], image=False), 2, self.GRID)[0].score
        assert with_img > without

    def test_origin_offsets_centres(self):
        d = self._detector()
        a = d(self._map([(5, 5, 11, 5)]), 2, self.GRID, (0, 0))[0]
        b = d(self._map([(5, 5, 11, 5)]), 2, self.GRID, (10, 20))[0]
        assert b.center[0] - a.center[0] == pytest.approx(4.0)
        assert b.center[1] - a.center[1] == pytest.approx(8.0)

    def test_image_energy_range(self, np_rng):
        img = np.zeros((10, 10, 3))
        img[2:5, 2:5] = np_rng.normal(size=3)
        img[6:, 6:] = np_rng.normal(size=3)
        e = image_energy(img)
        assert e.max() == 1.0 and e.min() >= 0.0
        assert not image_energy(np.zeros((4, 4, 3))).any()


def test_fused_beats_lidar_only():
    """Direction only: the image stream helps on sparse synthetic scenes."""
    fused, lidar = [], []
    for seed in range(10):
        s = generate_synthetic_scene(seed, 8)
        fused.append(run_pipeline(s, RunConfig()).mean_ap)
        lidar.append(run_pipeline(s, RunConfig(use_images=False)).mean_ap)
    assert np.mean(fused) > np.mean(lidar)
    assert sum(f > l for f, l in zip(fused, lidar)) >= 7


def test_noise_trend_summary():
    rows = [
        {"frame_id": f, "noise_deg": d, "noise_cm": c, "mAP": m}
        for f, vals in (("a", (0.9, 0.8, 0.7, 0.6)), ("b", (0.5, 0.5, 0.4, 0.5)), ("c", (0.3, 0.3, 0.3, 0.3)))
        for (d, c), m in zip(((0.0, 0.0), (1.0, 10.0), (3.0, 30.0), (5.0, 50.0)), vals)
    ]
    t = noise_trend(rows)
    assert t["means"] == pytest.approx([1.7 / 3, 1.6 / 3, 1.4 / 3, 1.4 / 3])
    assert t["monotone"] and t["wins"] == 1 and t["losses"] == 0
    assert t["p_value"] == pytest.approx(0.5)
