"""Non-learned occupancy-peak detector used as the default detection hook.

The fused map's LiDAR half gives cell occupancy; its image half gives a
foreground energy (distance of each cell's feature vector from the median
background vector, scaled to [0, 1]), thresholded into a foreground
mask. Occupied cells are grouped into connected blobs, each blob is
classified by its footprint extent against class templates, and the box
centre is placed at the peak of the template-sized window sum of
occupancy. The image stream only affects the score:
``(beta + foreground fraction) / (1 + beta)`` times a size term, so blobs
that no camera sees as foreground rank below those it does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .grid import BevMap, GridSpec
from .slicing import Box3D


class DetectorHook(Protocol):
    def __call__(self, fused: BevMap, lidar_channels: int, grid: GridSpec, origin: tuple) -> list[Box3D]: ...


def image_energy(img: np.ndarray) -> np.ndarray:
    """Per-cell energy in [0, 1]: distance from the median background feature."""
    support = np.any(img != 0, axis=2)
    energy = np.zeros(img.shape[:2])
    if not support.any():
        return energy
    background = np.median(img[support], axis=0)
    energy[support] = np.linalg.norm(img[support] - background, axis=1)
    top = energy.max()
    return energy / top if top > 0 else energy


def image_foreground(img: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    """Cells whose image energy exceeds ``threshold`` of the map maximum."""
    return (image_energy(img) > threshold).astype(np.float64)


@dataclass
class OccupancyPeakDetector:
    templates: dict  # class_id -> (length, width, height)
    beta: float = 0.25
    min_cells: int = 4
    ground_z: float = -1.8
    link_cells: int = 1  # dilation radius used to link sparse returns into blobs
    min_neighbors: int = 2  # occupied 8-neighbours needed to count as object surface
    fg_threshold: float = 0.1

    def classify(self, length: float, width: float) -> int:
        def cost(dims):
            return abs(math.log(length / dims[0])) + abs(math.log(width / dims[1]))

        return min(self.templates, key=lambda c: cost(self.templates[c]))

    def __call__(self, fused: BevMap, lidar_channels: int, grid: GridSpec, origin: tuple = (0, 0)) -> list[Box3D]:
        occ = np.any(fused.values[..., :lidar_channels] != 0, axis=2)
        # isolated ground returns have almost no occupied neighbours
        neighbors = ndimage.convolve(occ.astype(np.int32), np.ones((3, 3), dtype=np.int32), mode="constant") - occ
        occ = occ & (neighbors >= self.min_neighbors)
        energy = image_foreground(fused.values[..., lidar_channels:], self.fg_threshold)
        size = 2 * self.link_cells + 1
        linked = ndimage.binary_dilation(occ, structure=np.ones((size, size), dtype=bool))
        labels, n = ndimage.label(linked, structure=np.ones((3, 3), dtype=bool))
        if n == 0:
            return []
        boxes = []
        cell = grid.cell_xy
        for lab in range(1, n + 1):
            ii, jj = np.nonzero((labels == lab) & occ)
            if len(ii) < self.min_cells:
                continue
            xy = np.stack([ii, jj], axis=1).astype(np.float64) * cell
            evals, evecs = np.linalg.eigh(np.cov(xy.T))
            along = (xy - xy.mean(axis=0)) @ evecs
            lo, hi = np.percentile(along, [3, 97], axis=0)
            # cell centres span one cell less than the footprint
            width, length = hi - lo + cell
            cls = self.classify(length - cell / 2, width - cell / 2)
            dims = self.templates[cls]
            win = max(1, int(round(math.sqrt(dims[0] * dims[1]) / cell)))
            i0, i1 = max(ii.min() - win, 0), min(ii.max() + win + 1, occ.shape[0])
            j0, j1 = max(jj.min() - win, 0), min(jj.max() + win + 1, occ.shape[1])
            local = np.where(labels[i0:i1, j0:j1] == lab, occ[i0:i1, j0:j1], 0.0)
            summed = ndimage.uniform_filter(local, size=win, mode="constant")
            pi, pj = np.unravel_index(int(np.argmax(summed)), summed.shape)
            ci, cj = pi + i0 + origin[0], pj + j0 + origin[1]
            img_support = float(energy[ii, jj].mean())
            fill = 1.0 - math.exp(-len(ii) / 10.0)
            score = (self.beta + img_support) / (1.0 + self.beta) * fill
            major = evecs[:, 1]
            yaw = math.atan2(major[1], major[0])
            boxes.append(
                Box3D(
                    (float(grid.cell_center_x(ci)), float(grid.cell_center_y(cj)), self.ground_z + dims[2] / 2),
                    dims,
                    yaw,
                    cls,
                    min(max(score, 0.0), 1.0),
                )
            )
        return boxes
