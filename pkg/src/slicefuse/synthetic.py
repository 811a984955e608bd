"""Deterministic synthetic scenes for desk-scale runs.

Objects are boxes resting on a flat ground plane. The LiDAR samples their
top and side faces with a range-dependent density, plus sparse ground
returns and low "vegetation" patches that have no ground truth and are not
drawn in the images. Cameras see flat class-coloured silhouettes on black.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial import ConvexHull

from .calib import CameraRig, nuscenes_like_rig
from .rng import substream
from .scene_io import SceneBundle
from .slicing import Box3D, azimuth_deg

GROUND_Z = -1.8
ROTATION_PERIOD_S = 0.05  # 20 Hz sweep

# class_id -> (name, (length, width, height), RGB)
CLASSES = {
    0: ("car", (4.5, 1.9, 1.6), (220, 60, 60)),
    1: ("pedestrian", (0.7, 0.7, 1.8), (60, 220, 60)),
    2: ("truck", (8.0, 2.6, 3.2), (60, 60, 220)),
}
CLASS_NAMES = {k: v[0] for k, v in CLASSES.items()}
CLASS_WEIGHTS = (0.55, 0.3, 0.15)

SYNTH_IMAGE_SIZE = (800, 448)
# Sparse enough that most clutter falls outside every object's image wedge.
DEFAULT_N_OBJECTS = 8


def default_rig() -> CameraRig:
    return nuscenes_like_rig(*SYNTH_IMAGE_SIZE)


def _footprint_radius(dims) -> float:
    return 0.5 * math.hypot(dims[0], dims[1])


def place_boxes(rng, n_objects: int, r_min: float = 5.0, r_max: float = 42.0) -> list[Box3D]:
    boxes: list[Box3D] = []
    attempts = 0
    while len(boxes) < n_objects and attempts < 200 * (n_objects + 1):
        attempts += 1
        u = rng.random()
        cls = 0 if u < CLASS_WEIGHTS[0] else (1 if u < CLASS_WEIGHTS[0] + CLASS_WEIGHTS[1] else 2)
        base = CLASSES[cls][1]
        dims = tuple(d * rng.uniform(0.9, 1.1) for d in base)
        r = rng.uniform(r_min, r_max)
        az = rng.uniform(0.0, 2 * math.pi)
        yaw = rng.uniform(-math.pi, math.pi)
        x, y = r * math.cos(az), r * math.sin(az)
        rad = _footprint_radius(dims)
        if any(math.hypot(x - b.center[0], y - b.center[1]) < rad + _footprint_radius(b.dims) + 0.5 for b in boxes):
            continue
        boxes.append(Box3D((x, y, GROUND_Z + dims[2] / 2), dims, yaw, cls))
    return boxes


def _density(distance: float) -> float:
    """Points per square metre of surface at ``distance``."""
    return 60.0 * (10.0 / max(distance, 10.0)) ** 2


def sample_box_surface(rng, box: Box3D) -> np.ndarray:
    """Points on the top and four side faces, ``(n, 3)`` ego frame."""
    length, width, height = box.dims
    areas = np.array([length * width, length * height, length * height, width * height, width * height])
    n = max(8, int(round(areas.sum() * _density(math.hypot(*box.center[:2])))))
    face = np.searchsorted(np.cumsum(areas) / areas.sum(), rng.uniform(size=n), side="right")
    s = rng.uniform(-0.5, 0.5, size=n)
    t = rng.uniform(-0.5, 0.5, size=n)
    local = np.zeros((n, 3))
    top, side_l, side_w = face == 0, (face == 1) | (face == 2), face >= 3
    sign = np.where((face == 1) | (face == 3), 1.0, -1.0)
    local[top] = np.stack([s[top] * length, t[top] * width, np.full(top.sum(), height / 2)], axis=1)
    local[side_l] = np.stack([s[side_l] * length, sign[side_l] * width / 2, t[side_l] * height], axis=1)
    local[side_w] = np.stack([sign[side_w] * length / 2, s[side_w] * width, t[side_w] * height], axis=1)
    c, sn = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array(box.center)


def sample_ground(rng, n: int, r_min: float = 3.0, r_max: float = 50.0) -> np.ndarray:
    r = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2, size=n))
    az = rng.uniform(0.0, 2 * math.pi, size=n)
    z = GROUND_Z + rng.uniform(-0.05, 0.05, size=n)
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)


def sample_clutter(rng, n_patches: int, boxes) -> np.ndarray:
    """Low unlabelled patches (bushes, kerbs) away from the objects."""
    out = []
    placed = 0
    attempts = 0
    while placed < n_patches and attempts < 100 * (n_patches + 1):
        attempts += 1
        r = rng.uniform(6.0, 40.0)
        az = rng.uniform(0.0, 2 * math.pi)
        sx, sy, h = rng.uniform(0.6, 4.0), rng.uniform(0.6, 4.0), rng.uniform(0.3, 1.2)
        cx, cy = r * math.cos(az), r * math.sin(az)
        if any(math.hypot(cx - b.center[0], cy - b.center[1]) < _footprint_radius(b.dims) + max(sx, sy) for b in boxes):
            continue
        n = max(8, int(round(sx * sy * 0.7 * _density(r))))
        px = cx + rng.uniform(-sx / 2, sx / 2, size=n)
        py = cy + rng.uniform(-sy / 2, sy / 2, size=n)
        pz = GROUND_Z + rng.uniform(0.0, h, size=n)
        out.append(np.stack([px, py, pz], axis=1))
        placed += 1
    return np.concatenate(out) if out else np.zeros((0, 3))


def box_corners_3d(box: Box3D) -> np.ndarray:
    length, width, height = box.dims
    sx = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * length / 2
    sy = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * width / 2
    sz = np.array([1, 1, 1, 1, -1, -1, -1, -1]) * height / 2
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.stack([c * sx - s * sy, s * sx + c * sy, sz], axis=1) + np.array(box.center)


def render_silhouettes(boxes, rig: CameraRig) -> list[np.ndarray]:
    """Class-coloured filled box outlines on black, far boxes drawn first."""
    images = []
    for cam in rig:
        k = cam.intrinsics
        im = Image.new("RGB", (k.image_w, k.image_h))
        draw = ImageDraw.Draw(im)
        center = cam.extrinsics.camera_center
        order = sorted(boxes, key=lambda b: -float(np.linalg.norm(np.array(b.center) - center)))
        for b in order:
            corners = box_corners_3d(b)
            pc = cam.extrinsics.to_camera(corners)
            if np.any(pc[:, 2] <= 0.1):
                continue
            u = k.fx * pc[:, 0] / pc[:, 2] + k.cx
            v = k.fy * pc[:, 1] / pc[:, 2] + k.cy
            uv = np.stack([u, v], axis=1)
            hull = uv[ConvexHull(uv).vertices]
            draw.polygon([tuple(p) for p in hull], fill=CLASSES[b.class_id][2])
        images.append(np.asarray(im))
    return images


def generate_synthetic_scene(seed: int, n_objects: int, rig: CameraRig | None = None, frame_id: str | None = None) -> SceneBundle:
    """Build a full-sweep scene; identical inputs give bit-identical bundles."""
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    rig = rig or default_rig()
    boxes = place_boxes(substream(seed, "synthetic/boxes"), n_objects)
    rng = substream(seed, "synthetic/points")
    parts, refl = [], []
    for b in boxes:
        p = sample_box_surface(rng, b)
        parts.append(p)
        refl.append(rng.uniform(0.5, 0.9, size=len(p)))
    g = sample_ground(rng, 3000)
    parts.append(g)
    refl.append(rng.uniform(0.0, 0.2, size=len(g)))
    c = sample_clutter(rng, 4 + n_objects // 2, boxes)
    parts.append(c)
    refl.append(rng.uniform(0.1, 0.4, size=len(c)))
    xyz = np.concatenate(parts)
    # timestamps follow the azimuthal scan order
    m = azimuth_deg(xyz[:, 0], xyz[:, 1]) / 360.0 * ROTATION_PERIOD_S
    # stored as float32 on disk; keep memory and file bundles identical
    points = np.column_stack([xyz, np.concatenate(refl), m]).astype(np.float32).astype(np.float64)
    images = render_silhouettes(boxes, rig)
    return SceneBundle(points, boxes, rig, images, frame_id if frame_id is not None else f"synthetic-{seed}")
