import numpy as np
import pytest

from slicefuse.calib import Camera, CameraRig, Intrinsics, extrinsics_facing
from slicefuse.grid import GridSpec


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_grid():
    # 32 x 32 x 8 cells of 1 m, 4 channels
    return GridSpec(x_range=(-16.0, 16.0), y_range=(-16.0, 16.0), z_range=(-2.0, 2.0), cell_xy=1.0, cell_z=0.5, channels=4)


def facing_camera(az_deg, fov=70.0, w=160, h=96, position=(0.0, 0.0, 0.0), cx=None, cy=None):
    k = Intrinsics.from_fov(fov, w, h)
    if cx is not None or cy is not None:
        k = Intrinsics(k.fx, k.fy, k.cx if cx is None else cx, k.cy if cy is None else cy, w, h)
    return Camera(k, extrinsics_facing(az_deg, position), fov, az_deg % 360.0)


def rig_of(*cams):
    return CameraRig(tuple(cams))
