"""On-disk formats: point clouds, scenes (GT boxes) and scene bundles.

Point cloud file (little-endian): ``b"SFPC"``, uint32 version, uint64 point
count, then ``count`` records of five float32 ``x, y, z, r, m``. The slice
index is assigned at load time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calib import CameraRig, load_calibration, save_calibration
from .errors import DataError
from .image_bev import read_image, write_image
from .slicing import Box3D

_PC_MAGIC = b"SFPC"
_PC_HEADER = struct.Struct("<4sIQ")


def write_point_cloud(points: np.ndarray, path) -> None:
    pts = np.ascontiguousarray(np.asarray(points)[:, :5], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_PC_HEADER.pack(_PC_MAGIC, 1, len(pts)))
        fh.write(pts.tobytes())


def read_point_cloud(path) -> np.ndarray:
    """Return an ``(N, 5)`` float64 array."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read point cloud {path}: {exc}") from exc
    if len(blob) < _PC_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, count = _PC_HEADER.unpack_from(blob)
    if magic != _PC_MAGIC or version != 1:
        raise DataError(f"{path}: not a version-1 point cloud file")
    expected = _PC_HEADER.size + count * 5 * 4
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_PC_HEADER.size).reshape(count, 5)
    return data.astype(np.float64)


def box_to_dict(b: Box3D) -> dict:
    return {"center": list(b.center), "dims": list(b.dims), "yaw": b.yaw, "class_id": b.class_id}


def box_from_dict(d: dict) -> Box3D:
    return Box3D(tuple(d["center"]), tuple(d["dims"]), float(d["yaw"]), int(d.get("class_id", 0)), float(d.get("score", 1.0)))


def write_scene(boxes, path, frame_id: str = "0") -> None:
    Path(path).write_text(json.dumps({"frame_id": frame_id, "boxes": [box_to_dict(b) for b in boxes]}, indent=1))


def read_scene(path) -> tuple[str, list[Box3D]]:
    try:
        data = json.loads(Path(path).read_text())
        return str(data.get("frame_id", "0")), [box_from_dict(b) for b in data["boxes"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot read scene {path}: {exc}") from exc


@dataclass(eq=False)
class SceneBundle:
    """One frame: point cloud, GT boxes, calibration and per-camera images.

    ``images[k]`` may be ``None`` for a missing camera. ``feature_paths``
    optionally maps camera index to a precomputed feature file.
    """

    points: np.ndarray
    boxes: list
    rig: CameraRig
    images: list
    frame_id: str = "0"
    feature_paths: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.rig):
            raise DataError(f"{len(self.images)} images for {len(self.rig)} cameras")

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {
            "frame_id": self.frame_id,
            "points": "points.bin",
            "scene": "scene.json",
            "calibration": "calibration.json",
            "images": [],
            "features": {str(k): str(v) for k, v in self.feature_paths.items()},
        }
        write_point_cloud(self.points, d / "points.bin")
        write_scene(self.boxes, d / "scene.json", self.frame_id)
        save_calibration(self.rig, d / "calibration.json")
        for k, img in enumerate(self.images):
            if img is None:
                manifest["images"].append(None)
                continue
            name = f"cam{k}.ppm"
            write_image(img, d / name)
            manifest["images"].append(name)
        path = d / "bundle.json"
        path.write_text(json.dumps(manifest, indent=1))
        self.paths = {k: v for k, v in manifest.items()}
        return path

    @classmethod
    def load(cls, path) -> "SceneBundle":
        p = Path(path)
        if p.is_dir():
            p = p / "bundle.json"
        try:
            manifest = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read bundle manifest {p}: {exc}") from exc
        base = p.parent

        def rel(name: Optional[str]):
            return None if name is None else base / name

        try:
            points = read_point_cloud(rel(manifest["points"]))
            rig = load_calibration(rel(manifest["calibration"]))
            frame_id, boxes = read_scene(rel(manifest["scene"])) if manifest.get("scene") else (manifest.get("frame_id", "0"), [])
            images = [None if n is None else read_image(rel(n)) for n in manifest.get("images", [None] * len(rig))]
        except KeyError as exc:
            raise DataError(f"bundle manifest missing {exc}") from exc
        feats = {int(k): rel(v) for k, v in manifest.get("features", {}).items()}
        return cls(points, boxes, rig, images, str(manifest.get("frame_id", frame_id)), feats, manifest)
