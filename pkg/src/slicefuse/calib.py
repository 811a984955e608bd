"""Pinhole camera models, rigid transforms and calibration-noise injection.

Conventions: the extrinsics map the ego (LiDAR) frame into the camera frame,
``p_cam = R @ p_ego + t``. The camera frame is +z forward, +x right, +y down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .rng import Xoshiro256

# R = Rz(yaw) @ Ry(pitch) @ Rx(roll)
EULER_ORDER = "ZYX"


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.image_w and 0 <= self.cy < self.image_h):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, fov_deg: float, image_w: int, image_h: int) -> "Intrinsics":
        """Square-pixel camera with the given horizontal FoV, centred principal point."""
        f = (image_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, image_w / 2.0, image_h / 2.0, image_w, image_h)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rotation, (3, 3))
        trans = _frozen(self.translation, (3,))
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation is not proper (det != +1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @property
    def camera_center(self) -> np.ndarray:
        """Camera optical centre in the ego frame."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    fov_deg: float
    azimuth_center_deg: float
    name: str = ""

    def __post_init__(self):
        if not (0 < self.fov_deg <= 180):
            raise ValueError("fov_deg must lie in (0, 180]")
        if not (0 <= self.azimuth_center_deg < 360):
            raise ValueError("azimuth_center_deg must lie in [0, 360)")


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, idx) -> Camera:
        return self.cameras[idx]

    def __iter__(self):
        return iter(self.cameras)

    def with_extrinsics(self, extrinsics: Sequence[Extrinsics]) -> "CameraRig":
        return CameraRig(
            tuple(
                Camera(c.intrinsics, e, c.fov_deg, c.azimuth_center_deg, c.name)
                for c, e in zip(self.cameras, extrinsics)
            )
        )


@dataclass(frozen=True)
class CalibNoise:
    max_angle_deg: float = 0.0
    max_trans_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_angle_deg < 0 or self.max_trans_m < 0:
            raise ValueError("noise bounds must be non-negative")


def project_points(points, intr: Intrinsics, extr: Extrinsics):
    """Vectorised projection of ego-frame points.

    Returns ``(u, v, depth, valid)`` arrays; ``valid`` marks points with
    positive depth that land inside ``[0, W) x [0, H)``.
    """
    pc = extr.to_camera(np.atleast_2d(points))
    depth = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pc[:, 0] / depth + intr.cx
        v = intr.fy * pc[:, 1] / depth + intr.cy
    valid = (depth > 0) & (u >= 0) & (u < intr.image_w) & (v >= 0) & (v < intr.image_h)
    return u, v, depth, valid


def project_point(p, intr: Intrinsics, extr: Extrinsics) -> Optional[tuple]:
    """Project one ego-frame point; ``None`` when it is outside the frustum."""
    u, v, d, ok = project_points(np.asarray(p, dtype=np.float64).reshape(1, 3), intr, extr)
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(d[0])


def cast_pixel_ray(u: float, v: float, intr: Intrinsics, extr: Extrinsics):
    """Back-project pixel ``(u, v)`` to an ego-frame ray ``(origin, unit direction)``."""
    if not (0 <= u < intr.image_w and 0 <= v < intr.image_h):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.image_w}x{intr.image_h} image")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d = extr.rotation.T @ d_cam
    return extr.camera_center, d / np.linalg.norm(d)


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix Rz(yaw) @ Ry(pitch) @ Rx(roll); angles in degrees."""
    r, p, y = (math.radians(a) for a in (roll, pitch, yaw))
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def sample_noise(noise: CalibNoise, rng: Xoshiro256):
    """Draw (roll, pitch, yaw) in degrees and a translation offset in metres."""
    a, t = noise.max_angle_deg, noise.max_trans_m
    angles = tuple(rng.uniform(-a, a) for _ in range(3))
    offset = np.array([rng.uniform(-t, t) for _ in range(3)])
    return angles, offset


def perturb_extrinsics(extr: Extrinsics, noise: CalibNoise, rng: Xoshiro256 | None = None) -> Extrinsics:
    """Left-compose a random rotation and add a random translation offset.

    Draw order is roll, pitch, yaw, tx, ty, tz. Without ``rng`` a fresh
    generator seeded from ``noise.seed`` is used.
    """
    if rng is None:
        rng = Xoshiro256(noise.seed)
    angles, offset = sample_noise(noise, rng)
    r_noise = euler_to_rotation(*angles)
    return Extrinsics(r_noise @ extr.rotation, extr.translation + offset)


def perturb_rig(rig: CameraRig, noise: CalibNoise) -> CameraRig:
    """Perturb every camera from one generator, in camera order."""
    rng = Xoshiro256(noise.seed)
    return rig.with_extrinsics([perturb_extrinsics(c.extrinsics, noise, rng) for c in rig])


def extrinsics_facing(azimuth_deg: float, position=(0.0, 0.0, 0.0)) -> Extrinsics:
    """Level camera at ``position`` looking along ego azimuth ``azimuth_deg``."""
    a = math.radians(azimuth_deg)
    fwd = np.array([math.cos(a), math.sin(a), 0.0])
    right = np.array([math.sin(a), -math.cos(a), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rot = np.stack([right, down, fwd])
    return Extrinsics(rot, -rot @ np.asarray(position, dtype=np.float64))


NUSCENES_LAYOUT = (
    ("CAM_FRONT", 0.0, 70.0),
    ("CAM_FRONT_LEFT", 55.0, 70.0),
    ("CAM_BACK_LEFT", 110.0, 70.0),
    ("CAM_BACK", 180.0, 110.0),
    ("CAM_BACK_RIGHT", 250.0, 70.0),
    ("CAM_FRONT_RIGHT", 305.0, 70.0),
)


def nuscenes_like_rig(image_w: int = 1600, image_h: int = 900, mount_radius: float = 0.5) -> CameraRig:
    """Six level cameras: five 70 degree and one 110 degree rear camera."""
    cams = []
    for name, az, fov in NUSCENES_LAYOUT:
        a = math.radians(az)
        pos = (mount_radius * math.cos(a), mount_radius * math.sin(a), 0.0)
        cams.append(Camera(Intrinsics.from_fov(fov, image_w, image_h), extrinsics_facing(az, pos), fov, az, name))
    return CameraRig(tuple(cams))


def rig_to_dict(rig: CameraRig) -> dict:
    out = []
    for c in rig:
        k = c.intrinsics
        out.append(
            {
                "name": c.name,
                "fx": k.fx,
                "fy": k.fy,
                "cx": k.cx,
                "cy": k.cy,
                "image_w": k.image_w,
                "image_h": k.image_h,
                "rotation": c.extrinsics.rotation.reshape(-1).tolist(),
                "translation": c.extrinsics.translation.tolist(),
                "fov_deg": c.fov_deg,
                "azimuth_center_deg": c.azimuth_center_deg,
            }
        )
    return {"cameras": out}


def rig_from_dict(data: dict) -> CameraRig:
    try:
        cams = []
        for c in data["cameras"]:
            intr = Intrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                              int(c["image_w"]), int(c["image_h"]))
            extr = Extrinsics(np.array(c["rotation"], dtype=np.float64).reshape(3, 3),
                              np.array(c["translation"], dtype=np.float64))
            cams.append(Camera(intr, extr, float(c["fov_deg"]), float(c["azimuth_center_deg"]), c.get("name", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad calibration record: {exc}") from exc
    return CameraRig(tuple(cams))


def save_calibration(rig: CameraRig, path) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=2))


def load_calibration(path) -> CameraRig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read calibration {path}: {exc}") from exc
    return rig_from_dict(data)
