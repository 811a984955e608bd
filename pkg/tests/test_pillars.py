import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicefuse.errors import ConfigError, DataError
from slicefuse.grid import GridSpec
from slicefuse.pillars import PillarEncoder, encode_pillars, pillarize

DEFAULT = GridSpec()
G8 = GridSpec(channels=8)


def rec(x, y, z=0.0, r=0.5, m=0.01, s=0.0):
    return [x, y, z, r, m, s]


def oracle_encode(points, grid, weights):
    """Loop-over-pillars reference for the encoder contract."""
    values = np.zeros((grid.nx, grid.ny, weights.shape[0]))
    mask = np.zeros((grid.nx, grid.ny), dtype=bool)
    groups = {}
    for p in points:
        if not (grid.x_range[0] <= p[0] < grid.x_range[1] and grid.y_range[0] <= p[1] < grid.y_range[1] and grid.z_range[0] <= p[2] < grid.z_range[1]):
            continue
        key = (int((p[0] - grid.x_range[0]) // grid.cell_xy), int((p[1] - grid.y_range[0]) // grid.cell_xy))
        groups.setdefault(key, []).append(p)
    for key, members in groups.items():
        pts = np.array(members)
        centroid = pts[:, :3].mean(axis=0)
        feats = []
        for p in pts:
            a = np.concatenate([p[:6], p[:3] - centroid])
            feats.append(np.maximum(weights @ a, 0.0))
        values[key] = np.max(feats, axis=0)
        mask[key] = True
    return values, mask


class TestPillarize:
    def test_origin_cell(self):
        p = pillarize(np.array([rec(0.0, 0.0)]), DEFAULT)
        assert list(p) == [(256, 256)]

    def test_grid_corner(self):
        assert list(pillarize(np.array([rec(-51.2, -51.2)]), DEFAULT)) == [(0, 0)]

    def test_out_of_range_dropped(self):
        p = pillarize(np.array([rec(60.0, 0.0), rec(1.0, 1.0), rec(0.0, 0.0, z=6.0)]), DEFAULT)
        assert p.dropped == 2 and len(p) == 1

    def test_upper_edge_excluded(self):
        assert pillarize(np.array([rec(51.2, 0.0)]), DEFAULT).dropped == 1

    def test_each_point_in_exactly_one_pillar(self, np_rng):
        pts = np.column_stack([np_rng.uniform(-60, 60, (5000, 2)), np_rng.uniform(-4, 6, 5000), np.zeros((5000, 3))])
        p = pillarize(pts, DEFAULT)
        assert sum(len(v) for v in p.values()) + p.dropped == len(pts)
        for (i, j), members in p.items():
            assert np.all(np.floor((members[:, 0] + 51.2) / 0.2) == i)
            assert np.all(np.floor((members[:, 1] + 51.2) / 0.2) == j)


class TestEncoder:
    def test_bundled_fixture_matches_seeded_weights(self):
        b = PillarEncoder.bundled()
        ref = PillarEncoder.from_seed(64, 0)
        np.testing.assert_array_equal(b.weights, ref.weights)
        assert b.to_bytes() == ref.to_bytes()
        assert b.seed == 0 and b.channels == 64

    def test_blob_round_trip(self, tmp_path):
        e = PillarEncoder.from_seed(8, 42)
        e.save(tmp_path / "w.bin")
        back = PillarEncoder.load(tmp_path / "w.bin")
        np.testing.assert_array_equal(back.weights, e.weights)
        assert back.seed == 42

    def test_bad_blob(self):
        with pytest.raises(DataError):
            PillarEncoder.from_bytes(b"nope")
        blob = PillarEncoder.from_seed(8, 0).to_bytes()
        with pytest.raises(DataError):
            PillarEncoder.from_bytes(blob[:-4])

    def test_weights_in_scaled_range(self):
        w = PillarEncoder.from_seed(64, 3).weights
        assert np.abs(w).max() <= 1 / 3 and w.shape == (64, 9)

    def test_empty_slice(self):
        bev = encode_pillars(pillarize(np.zeros((0, 6)), G8), G8, PillarEncoder.from_seed(8, 0))
        assert not bev.values.any() and not bev.mask.any()

    def test_single_point_hand_evaluation(self):
        enc = PillarEncoder.from_seed(8, 0)
        p = np.array([rec(3.1, -7.3, 0.4, 0.8, 0.02, 5.0)])
        bev = encode_pillars(pillarize(p, G8), G8, enc)
        i, j = int((3.1 + 51.2) // 0.2), int((-7.3 + 51.2) // 0.2)
        a = np.array([3.1, -7.3, 0.4, 0.8, 0.02, 5.0, 0.0, 0.0, 0.0])
        expect = np.array([max(sum(enc.weights[c, k] * a[k] for k in range(9)), 0.0) for c in range(8)])
        np.testing.assert_allclose(bev.values[i, j], expect, rtol=0, atol=1e-12)
        assert bev.mask.sum() == 1

    def test_matches_loop_oracle(self, np_rng):
        enc = PillarEncoder.from_seed(8, 1)
        g = GridSpec(x_range=(-4.0, 4.0), y_range=(-4.0, 4.0), cell_xy=0.5, channels=8)
        pts = np.column_stack([np_rng.uniform(-5, 5, (800, 2)), np_rng.uniform(-3, 5, 800), np_rng.uniform(0, 1, (800, 2)), np_rng.integers(0, 8, 800)])
        bev = encode_pillars(pillarize(pts, g), g, enc)
        values, mask = oracle_encode(pts, g, enc.weights)
        np.testing.assert_allclose(bev.values, values, atol=1e-12)
        np.testing.assert_array_equal(bev.mask, mask)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigError):
            encode_pillars(pillarize(np.zeros((0, 6)), G8), G8, PillarEncoder.from_seed(16, 0))

    def test_nonnegative(self, np_rng):
        pts = np.column_stack([np_rng.uniform(-50, 50, (3000, 2)), np_rng.uniform(-3, 5, 3000), np.zeros((3000, 3))])
        bev = encode_pillars(pillarize(pts, G8), G8, PillarEncoder.from_seed(8, 0))
        assert bev.values.min() >= 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        g = GridSpec(x_range=(-2.0, 2.0), y_range=(-2.0, 2.0), cell_xy=1.0, channels=8)
        pts = np.column_stack([rng.uniform(-2, 2, (60, 2)), rng.uniform(-3, 5, 60), rng.uniform(0, 1, (60, 3))])
        enc = PillarEncoder.from_seed(8, 0)
        a = encode_pillars(pillarize(pts, g), g, enc)
        b = encode_pillars(pillarize(pts[rng.permutation(60)], g), g, enc)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_locality(self, np_rng):
        enc = PillarEncoder.from_seed(8, 0)
        pts = np.column_stack([np_rng.uniform(-10, 10, (400, 2)), np_rng.uniform(-2, 2, 400), np.zeros((400, 3))])
        before = encode_pillars(pillarize(pts, G8), G8, enc)
        moved = pts.copy()
        cell = np.floor((moved[0, :2] + 51.2) / 0.2)
        moved[0, :2] = -51.2 + (cell + np_rng.uniform(0.1, 0.9, 2)) * 0.2
        after = encode_pillars(pillarize(moved, G8), G8, enc)
        changed = np.argwhere(np.any(before.values != after.values, axis=2))
        assert all(tuple(c) == tuple(cell.astype(int)) for c in changed)
        np.testing.assert_array_equal(before.mask, after.mask)
