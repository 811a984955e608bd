"""Quadrant crop/uncrop, channel-wise fusion and the convolution FLOP model."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import BevMap, Quadrant
from .slicing import SliceSpec

# azimuth arc [start, start + 90) covered by each quadrant index
QUADRANT_ARC_START = {3: 0.0, 2: 90.0, 0: 180.0, 1: 270.0}


def quadrants_of_arc(start_deg: float, width_deg: float) -> list[Quadrant]:
    """Quadrants whose half-open azimuth arc meets ``[start, start + width)``."""
    out = []
    for q in range(4):
        a = QUADRANT_ARC_START[q]
        if width_deg >= 360 or (start_deg - a) % 360.0 < 90.0 or (a - start_deg) % 360.0 < width_deg:
            out.append(Quadrant(q))
    return out


def quadrants_of_slice(spec: SliceSpec) -> list[Quadrant]:
    """Quadrants whose azimuth arc meets the slice sector, ego at the grid centre."""
    return quadrants_of_arc(spec.az_start_deg, spec.width_deg)


def crop(bev: BevMap, q: Quadrant) -> BevMap:
    i0, i1, j0, j1 = q.bounds(*bev.mask.shape)
    return BevMap(bev.values[i0:i1, j0:j1].copy(), bev.mask[i0:i1, j0:j1].copy())


def uncrop(small: BevMap, q: Quadrant, full_dims: tuple) -> BevMap:
    """Zero-pad a quadrant map back to ``full_dims = (X, Y)``."""
    nx, ny = full_dims[:2]
    i0, i1, j0, j1 = q.bounds(nx, ny)
    if small.mask.shape != (i1 - i0, j1 - j0):
        raise ValueError(f"map of shape {small.mask.shape} does not fit quadrant of {(nx, ny)}")
    out = BevMap.zeros(nx, ny, small.channels)
    out.values[i0:i1, j0:j1] = small.values
    out.mask[i0:i1, j0:j1] = small.mask
    return out


def fuse(p_bev: BevMap, i_bev: BevMap) -> BevMap:
    """Concatenate along channels: LiDAR channels first, image channels after."""
    if p_bev.mask.shape != i_bev.mask.shape:
        raise ValueError("fused maps must share spatial dims")
    return BevMap(np.concatenate([p_bev.values, i_bev.values], axis=2), p_bev.mask | i_bev.mask)


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel: tuple  # (kx, ky, kz)
    out_dims: tuple  # (Dx, Dy, Dz)
    name: str = ""

    def __post_init__(self):
        vals = (self.in_channels, self.out_channels, *self.kernel, *self.out_dims)
        if len(self.kernel) != 3 or len(self.out_dims) != 3 or min(vals) < 1:
            raise ValueError("conv layer fields must be positive (kx, ky, kz) / (Dx, Dy, Dz)")


@dataclass(frozen=True)
class ConvCostSpec:
    name: str
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


def layer_flops(layer: ConvLayer, cropped: bool = False) -> int:
    """2 FLOPs per multiply-add over every output voxel."""
    dx, dy, dz = layer.out_dims
    if cropped:
        if dx % 2 or dy % 2:
            raise ValueError("cropping needs even output dims")
        dx, dy = dx // 2, dy // 2
    kx, ky, kz = layer.kernel
    return 2 * layer.in_channels * layer.out_channels * kx * ky * kz * dx * dy * dz


def conv_flops(spec: ConvCostSpec, cropped: bool = False) -> int:
    return sum(layer_flops(l, cropped) for l in spec.layers)


def image_bev_conv_stage(channels: int = 64, nx: int = 512, ny: int = 512, nz: int = 16) -> ConvCostSpec:
    """1x1 projection, residual 3x3x3 conv and z-stride-2 3x3x3 conv of the image stream.

    Channel widths are illustrative; only ratios are meaningful.
    """
    return ConvCostSpec(
        "3d_convolutions",
        (
            ConvLayer(channels, channels, (1, 1, 1), (nx, ny, nz), "projection_1x1"),
            ConvLayer(channels, channels, (3, 3, 3), (nx, ny, nz), "residual_3x3x3"),
            ConvLayer(channels, channels, (3, 3, 3), (nx, ny, nz // 2), "stride2_3x3x3"),
        ),
    )


def cost_report(stages: Sequence[ConvCostSpec], per_layer: bool = True) -> list[dict]:
    rows = []
    for stage in stages:
        items = [(f"{stage.name}/{l.name}", ConvCostSpec(l.name, (l,))) for l in stage.layers] if per_layer else []
        items.append((stage.name, stage))
        for label, spec in items:
            full, small = conv_flops(spec), conv_flops(spec, cropped=True)
            rows.append({"stage": label, "flops_full": full, "flops_cropped": small, "ratio": small / full})
    return rows


def cost_report_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "flops_full", "flops_cropped", "ratio"])
    for r in rows:
        w.writerow([r["stage"], r["flops_full"], r["flops_cropped"], f"{r['ratio']:.6f}"])
    return buf.getvalue()
