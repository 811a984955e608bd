"""Pillarization of a point-cloud slice and the reference pillar encoder.

The reference encoder stands in for a learned PointNet: each point is
augmented to ``x, y, z, r, m, s, dx, dy, dz`` (offsets from the centroid of
its pillar's points), passed through a fixed seeded linear map, clamped at
zero and max-pooled over the pillar.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .grid import BevMap, GridSpec
from .rng import substream

N_INPUTS = 9
_MAGIC = b"SFPW"
_HEADER = struct.Struct("<4sIIIQ")  # magic, version, channels, inputs, seed


class Pillars(Mapping):
    """Points grouped by BEV cell; maps ``(i, j)`` to an ``(k, 6)`` array.

    ``points`` is sorted by cell id; ``starts[n]`` is the first row of the
    ``n``-th occupied cell in ``cells``.
    """

    def __init__(self, points: np.ndarray, cells: np.ndarray, starts: np.ndarray, dropped: int, shape):
        self.points = points
        self.cells = cells
        self.starts = starts
        self.dropped = dropped
        self.shape = shape
        self._index = {(int(i), int(j)): n for n, (i, j) in enumerate(cells)}

    def _bounds(self, n: int):
        end = self.starts[n + 1] if n + 1 < len(self.starts) else len(self.points)
        return self.starts[n], end

    def __getitem__(self, key):
        lo, hi = self._bounds(self._index[tuple(key)])
        return self.points[lo:hi]

    def __iter__(self):
        return iter(self._index)

    def __len__(self):
        return len(self._index)

    def counts(self) -> np.ndarray:
        return np.diff(np.append(self.starts, len(self.points)))


def pillarize(points, grid: GridSpec) -> Pillars:
    """Assign in-range points to BEV cells by floor division; drop the rest."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 6)
    keep = grid.in_range(pts[:, 0], pts[:, 1], pts[:, 2])
    pts = pts[keep]
    i, j = grid.cell_of(pts[:, 0], pts[:, 1])
    # guards float round-up at the upper edge
    i = np.clip(i, 0, grid.nx - 1)
    j = np.clip(j, 0, grid.ny - 1)
    flat = i * grid.ny + j
    # canonical order inside a pillar makes the centroid sum, and so the
    # encoding, bit-identical under any input permutation
    order = np.lexsort(tuple(pts[:, c] for c in range(5, -1, -1)) + (flat,))
    flat = flat[order]
    uniq, starts = np.unique(flat, return_index=True)
    cells = np.stack([uniq // grid.ny, uniq % grid.ny], axis=1) if len(uniq) else np.zeros((0, 2), np.int64)
    return Pillars(pts[order], cells, starts, int((~keep).sum()), (grid.nx, grid.ny))


class PillarEncoder:
    """Fixed linear map from 9 augmented inputs to ``channels`` features."""

    def __init__(self, weights: np.ndarray, seed: int | None = None):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != N_INPUTS:
            raise ConfigError(f"encoder weights must be (c, {N_INPUTS}), got {w.shape}")
        self.weights = w
        self.seed = seed

    @property
    def channels(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_seed(cls, channels: int = 64, seed: int = 0) -> "PillarEncoder":
        rng = substream(seed, "pillar_encoder")
        scale = 1.0 / np.sqrt(N_INPUTS)
        w = rng.uniform(-scale, scale, size=channels * N_INPUTS).reshape(channels, N_INPUTS)
        # blob stores float32, keep both paths identical
        return cls(w.astype(np.float32).astype(np.float64), seed)

    @classmethod
    def bundled(cls) -> "PillarEncoder":
        """The shipped 64-channel fixture (seed 0)."""
        ref = resources.files("slicefuse") / "data" / "pillar_weights_c64_s0.bin"
        return cls.from_bytes(ref.read_bytes())

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(_MAGIC, 1, self.channels, N_INPUTS, self.seed or 0)
        return header + self.weights.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PillarEncoder":
        if len(blob) < _HEADER.size:
            raise DataError("encoder blob too short")
        magic, version, c, n_in, seed = _HEADER.unpack_from(blob)
        if magic != _MAGIC or version != 1 or n_in != N_INPUTS:
            raise DataError("not a version-1 pillar encoder blob")
        payload = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
        if payload.size != c * n_in:
            raise DataError("encoder payload size mismatch")
        return cls(payload.reshape(c, n_in).astype(np.float64), seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PillarEncoder":
        return cls.from_bytes(Path(path).read_bytes())

    def point_features(self, augmented: np.ndarray) -> np.ndarray:
        return np.maximum(augmented @ self.weights.T, 0.0)


def augment(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Append centroid offsets to ``(k, 6)`` points; ``centroids`` per row."""
    return np.concatenate([points[:, :6], points[:, :3] - centroids], axis=1)


def encode_pillars(pillars: Pillars, grid: GridSpec, encoder: PillarEncoder) -> BevMap:
    if encoder.channels != grid.channels:
        raise ConfigError(f"encoder has {encoder.channels} channels, grid expects {grid.channels}")
    bev = BevMap.zeros(grid.nx, grid.ny, grid.channels)
    if len(pillars) == 0:
        return bev
    pts = pillars.points
    counts = pillars.counts()
    sums = np.add.reduceat(pts[:, :3], pillars.starts, axis=0)
    centroids = np.repeat(sums / counts[:, None], counts, axis=0)
    feats = encoder.point_features(augment(pts, centroids))
    pooled = np.maximum.reduceat(feats, pillars.starts, axis=0)
    ci, cj = pillars.cells[:, 0], pillars.cells[:, 1]
    bev.values[ci, cj] = pooled
    bev.mask[ci, cj] = True
    return bev
