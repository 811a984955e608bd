"""Azimuthal slicing of a LiDAR sweep and corner-rule box assignment.

Point arrays are ``(N, 6)`` float arrays with columns ``x, y, z, r, m, s``
(reflectance, relative timestamp, slice index). Inputs with five columns
are accepted wherever the slice index has not been assigned yet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calib import CameraRig

COLUMNS = ("x", "y", "z", "r", "m", "s")


class PointRecord(NamedTuple):
    x: float
    y: float
    z: float
    r: float
    m: float
    s: int = 0


@dataclass(frozen=True)
class SliceSpec:
    n_slices: int
    index: int

    def __post_init__(self):
        if self.n_slices < 1:
            raise ValueError("n_slices must be >= 1")
        if not 0 <= self.index < self.n_slices:
            raise ValueError(f"slice index {self.index} out of range for n={self.n_slices}")

    @property
    def width_deg(self) -> float:
        return 360.0 / self.n_slices

    @property
    def az_start_deg(self) -> float:
        return self.index * 360.0 / self.n_slices

    @property
    def az_end_deg(self) -> float:
        return (self.index + 1) * 360.0 / self.n_slices

    def contains(self, az_deg) -> np.ndarray:
        return slice_index_of(az_deg, self.n_slices) == self.index


@dataclass(frozen=True)
class Box3D:
    center: tuple
    dims: tuple  # (length, width, height)
    yaw: float
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        if len(self.center) != 3 or len(self.dims) != 3:
            raise ValueError("center and dims must be 3-vectors")
        if min(self.dims) <= 0:
            raise ValueError("box dimensions must be positive")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PointCloudSlice:
    spec: SliceSpec
    points: np.ndarray

    def __len__(self):
        return len(self.points)


def wrap_angle(a: float) -> float:
    """Wrap radians into [-pi, pi)."""
    w = (a + math.pi) % (2 * math.pi) - math.pi
    return w if w < math.pi else -math.pi


def azimuth_deg(x, y):
    """Counter-clockwise angle from +x in [0, 360). Scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((x == 0) & (y == 0)):
        raise ValueError("azimuth undefined at the origin")
    az = np.degrees(np.arctan2(y, x))
    az = np.where(az < 0, az + 360.0, az)
    # -tiny + 360 rounds to exactly 360
    az = np.where(az >= 360.0, 0.0, az)
    return float(az) if az.ndim == 0 else az


def slice_index_of(az_deg, n: int):
    """Half-open sector index of an azimuth: floor(az * n / 360)."""
    idx = np.floor(np.asarray(az_deg, dtype=np.float64) * n / 360.0).astype(np.int64)
    return np.minimum(idx, n - 1)


def slice_sweep(points, n: int) -> list[PointCloudSlice]:
    """Partition a sweep into ``n`` azimuthal slices, preserving input order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (5, 6):
        raise ValueError("points must be an (N, 5) or (N, 6) array")
    out = np.zeros((len(pts), 6))
    out[:, :5] = pts[:, :5]
    idx = slice_index_of(azimuth_deg(pts[:, 0], pts[:, 1]), n) if len(pts) else np.zeros(0, np.int64)
    out[:, 5] = idx
    return [PointCloudSlice(SliceSpec(n, k), out[idx == k]) for k in range(n)]


def box_corners_bev(box: Box3D) -> np.ndarray:
    """The four footprint corners ``(4, 2)``, length axis along the yaw direction."""
    half_l, half_w = box.dims[0] / 2.0, box.dims[1] / 2.0
    local = np.array([[half_l, half_w], [half_l, -half_w], [-half_l, -half_w], [-half_l, half_w]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array(box.center[:2])


def assign_boxes_to_slice(boxes, spec: SliceSpec) -> list[Box3D]:
    """Boxes with at least one BEV corner inside the slice sector."""
    kept = []
    for box in boxes:
        corners = box_corners_bev(box)
        if np.any(spec.contains(azimuth_deg(corners[:, 0], corners[:, 1]))):
            kept.append(box)
    return kept


def arcs_intersect(a_start: float, a_len: float, b_start: float, b_len: float) -> bool:
    """Whether arc ``[a, a+a_len]`` meets half-open arc ``[b, b+b_len)`` on the circle."""
    if a_len >= 360 or b_len >= 360:
        return True
    return (b_start - a_start) % 360.0 <= a_len or (a_start - b_start) % 360.0 < b_len


def cameras_for_slice(spec: SliceSpec, rig: CameraRig) -> list[int]:
    """Indices of cameras whose horizontal FoV overlaps the slice sector."""
    hits = []
    for k, cam in enumerate(rig):
        start = (cam.azimuth_center_deg - cam.fov_deg / 2.0) % 360.0
        if arcs_intersect(start, cam.fov_deg, spec.az_start_deg, spec.width_deg):
            hits.append(k)
    return hits
