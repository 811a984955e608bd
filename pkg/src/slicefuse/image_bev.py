"""Camera features to voxel volume to BEV.

Splatting is voxel-centric: every voxel centre is projected into each camera
and takes the feature of the quarter-resolution pixel it lands in (nearest
pixel, no interpolation). Voxels seen by several cameras hold the average;
voxels seen by none stay exactly zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from .calib import CameraRig, project_points
from .errors import ConfigError, DataError
from .grid import BevMap, GridSpec, Quadrant
from .rng import substream

FEATURE_STRIDE = 4
BN_EPS = 1e-5
_FEAT_MAGIC = b"SFFI"
_FEAT_HEADER = struct.Struct("<4sIIII")  # magic, version, h, w, c


@dataclass(frozen=True, eq=False)
class FeatureImage:
    values: np.ndarray  # (H/4, W/4, C)
    camera_index: int

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """``(X, Y, Z, C)`` values with per-voxel contribution counts.

    ``origin`` is the grid cell of element ``[0, 0]`` (non-zero for crops).
    """

    values: np.ndarray
    count: np.ndarray
    origin: tuple = (0, 0)

    @property
    def shape(self) -> tuple:
        return self.values.shape


class FeatureProvider(Protocol):
    def __call__(self, image: np.ndarray, camera_index: int) -> FeatureImage: ...


def box_downsample(image: np.ndarray, factor: int = FEATURE_STRIDE) -> np.ndarray:
    """Mean over ``factor x factor`` blocks; trailing partial blocks are cut."""
    h, w = image.shape[0] // factor, image.shape[1] // factor
    block = np.asarray(image[: h * factor, : w * factor], dtype=np.float64)
    return block.reshape(h, factor, w, factor, -1).mean(axis=(1, 3))


class ReferenceFeatureProvider:
    """Box-downsample RGB by 4 then a fixed seeded 3 -> C linear map.

    Black pixels map to zero features.
    """

    def __init__(self, channels: int = 64, seed: int = 0):
        rng = substream(seed, "feature_provider")
        self.weights = rng.uniform(-1.0, 1.0, size=3 * channels).reshape(3, channels)

    @property
    def channels(self) -> int:
        return self.weights.shape[1]

    def __call__(self, image: np.ndarray, camera_index: int) -> FeatureImage:
        rgb = box_downsample(np.asarray(image)[..., :3]) / 255.0
        return FeatureImage(rgb @ self.weights, camera_index)


class PrecomputedFeatureProvider:
    """Serves feature maps read from files, keyed by camera index."""

    def __init__(self, paths: dict):
        self.paths = {int(k): Path(v) for k, v in paths.items()}

    def __call__(self, image, camera_index: int) -> FeatureImage:
        return FeatureImage(read_feature_file(self.paths[camera_index]), camera_index)


def write_feature_file(values: np.ndarray, path) -> None:
    h, w, c = values.shape
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(_FEAT_MAGIC, 1, h, w, c))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _FEAT_HEADER.size:
        raise DataError(f"{path}: truncated feature file")
    magic, version, h, w, c = _FEAT_HEADER.unpack_from(blob)
    if magic != _FEAT_MAGIC or version != 1:
        raise DataError(f"{path}: not a feature file")
    data = np.frombuffer(blob, dtype="<f4", offset=_FEAT_HEADER.size)
    if data.size != h * w * c:
        raise DataError(f"{path}: payload size mismatch")
    return data.reshape(h, w, c).astype(np.float64)


def read_image(path) -> np.ndarray:
    """Read any Pillow-supported image (PPM, PNG, ...) as ``(H, W, 3)`` uint8."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path)


def voxel_centers(grid: GridSpec, region: tuple) -> np.ndarray:
    i0, i1, j0, j1 = region
    xs = grid.cell_center_x(np.arange(i0, i1))
    ys = grid.cell_center_y(np.arange(j0, j1))
    zs = grid.cell_center_z(np.arange(grid.nz))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def feature_pixels(points: np.ndarray, rig: CameraRig, cam_index: int, feat_shape: tuple):
    """Quarter-resolution pixel ``(row, col)`` hit by each point, plus a hit mask."""
    cam = rig[cam_index]
    k = cam.intrinsics
    u, v, _, valid = project_points(points, k, cam.extrinsics)
    fh, fw = feat_shape[:2]
    col = np.floor(np.where(valid, u, 0.0) * fw / k.image_w).astype(np.int64)
    row = np.floor(np.where(valid, v, 0.0) * fh / k.image_h).astype(np.int64)
    valid &= (col < fw) & (row < fh)
    return row, col, valid


def splat_to_volume(
    features: Sequence[FeatureImage],
    rig: CameraRig,
    grid: GridSpec,
    crop_region: Optional[Quadrant] = None,
) -> VoxelVolume:
    """Fill voxels with the features of the pixels their centres project to."""
    for f in features:
        if f.channels != grid.channels:
            raise ConfigError(f"feature map has {f.channels} channels, grid expects {grid.channels}")
    if crop_region is None:
        region = (0, grid.nx, 0, grid.ny)
    else:
        region = Quadrant(int(getattr(crop_region, "index", crop_region))).bounds(grid.nx, grid.ny)
    i0, i1, j0, j1 = region
    centers = voxel_centers(grid, region)
    total = np.zeros((len(centers), grid.channels))
    count = np.zeros(len(centers), dtype=np.int64)
    # fixed accumulation order keeps the average bit-identical under input permutation
    for f in sorted(features, key=lambda f: f.camera_index):
        row, col, hit = feature_pixels(centers, rig, f.camera_index, f.values.shape)
        total[hit] += f.values[row[hit], col[hit]]
        count[hit] += 1
    values = np.zeros_like(total)
    seen = count > 0
    values[seen] = total[seen] / count[seen, None]
    shape = (i1 - i0, j1 - j0, grid.nz)
    return VoxelVolume(values.reshape(*shape, grid.channels), count.reshape(shape), (i0, j0))


def batch_standardize(volumes: Sequence[VoxelVolume], eps: float = BN_EPS) -> list[VoxelVolume]:
    """Per-channel standardisation over occupied voxels of the whole batch."""
    if not volumes:
        raise ValueError("batch must hold at least one volume")
    occupied = [v.values[v.count > 0] for v in volumes]
    pooled = np.concatenate(occupied, axis=0)
    if len(pooled) == 0:
        return list(volumes)
    mean = pooled.mean(axis=0)
    scale = 1.0 / np.sqrt(pooled.var(axis=0) + eps)
    out = []
    for v in volumes:
        vals = np.zeros_like(v.values)
        seen = v.count > 0
        vals[seen] = (v.values[seen] - mean) * scale
        out.append(VoxelVolume(vals, v.count, v.origin))
    return out


def _avg_pool_z(values: np.ndarray) -> np.ndarray:
    x, y, z, c = values.shape
    return values.reshape(x, y, z // 2, 2, c).mean(axis=3)


VoxelTransform = Callable[[np.ndarray], np.ndarray]


def reduce_volume_to_bev(v: VoxelVolume, transform: Optional[VoxelTransform] = None) -> BevMap:
    """Average-pool z by 2, optional transform, average-pool z by 2, max over z."""
    if v.values.shape[2] % 4:
        raise ConfigError("volume depth must be divisible by 4")
    half = _avg_pool_z(v.values)
    if transform is not None:
        out = transform(half)
        if out.shape != half.shape:
            raise ConfigError(f"voxel transform changed shape {half.shape} -> {out.shape}")
        half = out
    quarter = _avg_pool_z(half)
    return BevMap(quarter.max(axis=2), v.count.any(axis=2))
