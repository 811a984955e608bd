"""Top-k selection, per-class centre-distance NMS, slice aggregation and mAP."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import DataError
from .slicing import Box3D

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_NMS_RADIUS = 0.5
RECALL_POINTS = np.arange(101) / 100.0

DET_COLUMNS = ("frame_id", "slice", "class", "score", "cx", "cy", "cz", "l", "w", "h", "yaw")


@dataclass(frozen=True)
class Detection:
    box: Box3D
    slice_index: int = 0
    frame_id: str = "0"

    @property
    def score(self) -> float:
        return self.box.score

    @property
    def class_id(self) -> int:
        return self.box.class_id

    @property
    def xy(self) -> tuple:
        return self.box.center[0], self.box.center[1]


DetectionSet = list  # list[Detection]


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    classes: tuple = (0,)
    max_per_slice: int = 500

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        if not t or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))


def by_score(dets: Sequence[Detection]) -> list[Detection]:
    """Descending score; Python's sort is stable so ties keep input order."""
    return sorted(dets, key=lambda d: -d.score)


def top_k(dets: Sequence[Detection], k: int = 500) -> list[Detection]:
    return by_score(dets)[:k]


def _radius_for(radius: Union[float, Mapping], class_id: int) -> float:
    r = radius.get(class_id, DEFAULT_NMS_RADIUS) if isinstance(radius, Mapping) else radius
    if r <= 0:
        raise ValueError("NMS radius must be positive")
    return float(r)


def nms_per_class(dets: Sequence[Detection], radius: Union[float, Mapping] = DEFAULT_NMS_RADIUS) -> list[Detection]:
    """Greedy centre-distance suppression inside each class.

    A detection is dropped when it lies strictly closer than ``radius`` to an
    already kept detection of its class. Survivors come back score-sorted.
    """
    kept: list[Detection] = []
    kept_xy: dict[int, list] = {}
    for d in by_score(dets):
        r = _radius_for(radius, d.class_id)
        pts = kept_xy.setdefault(d.class_id, [])
        if pts:
            arr = np.asarray(pts)
            if np.any(np.hypot(arr[:, 0] - d.xy[0], arr[:, 1] - d.xy[1]) < r):
                continue
        pts.append(d.xy)
        kept.append(d)
    return kept


def aggregate_slices(per_slice: Sequence[Sequence[Detection]], radius=DEFAULT_NMS_RADIUS) -> list[Detection]:
    """Pool the detections of all slices and filter duplicates with per-class NMS."""
    pooled = [d for dets in per_slice for d in dets]
    return nms_per_class(pooled, radius)


@dataclass
class EvalResult:
    ap: dict  # (class_id, threshold) -> AP; classes without GT are absent
    thresholds: tuple
    classes: tuple
    absent: tuple = field(default_factory=tuple)

    def class_ap(self, class_id: int):
        vals = [self.ap[(class_id, t)] for t in self.thresholds if (class_id, t) in self.ap]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_ap(self):
        """Mean over classes and thresholds; ``None`` when no class has ground truth."""
        return float(np.mean(list(self.ap.values()))) if self.ap else None


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated area under the precision/recall curve."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    # running max from the right gives max precision at recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    interp = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(interp.mean())


def match_detections(dets: Sequence[Detection], gts: Mapping, threshold: float) -> np.ndarray:
    """Greedy matching in score order; each GT matched at most once.

    ``gts`` maps frame id to an ``(n, 2)`` array of BEV centres. Returns a
    true-positive flag per (score-sorted) detection.
    """
    used = {f: np.zeros(len(c), dtype=bool) for f, c in gts.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for k, d in enumerate(dets):
        centers = gts.get(d.frame_id)
        if centers is None or len(centers) == 0:
            continue
        dist = np.hypot(centers[:, 0] - d.xy[0], centers[:, 1] - d.xy[1])
        dist[used[d.frame_id]] = np.inf
        best = int(np.argmin(dist))
        if dist[best] <= threshold:
            used[d.frame_id][best] = True
            tp[k] = True
    return tp


def _group_gts(gts) -> dict:
    """Normalise GT input to ``{frame_id: [Box3D, ...]}``."""
    if isinstance(gts, Mapping):
        return {str(k): list(v) for k, v in gts.items()}
    return {"0": list(gts)}


def evaluate_map(dets: Sequence[Detection], gts, cfg: EvalConfig) -> EvalResult:
    """Centre-distance AP per class and threshold.

    ``gts`` is a list of boxes for a single frame (frame id ``"0"``) or a
    mapping from frame id to boxes.
    """
    frames = _group_gts(gts)
    ap = {}
    absent = []
    for c in cfg.classes:
        centers = {
            f: np.array([b.center[:2] for b in boxes if b.class_id == c], dtype=np.float64).reshape(-1, 2)
            for f, boxes in frames.items()
        }
        n_gt = sum(len(v) for v in centers.values())
        if n_gt == 0:
            absent.append(c)
            continue
        cls_dets = by_score([d for d in dets if d.class_id == c])
        for t in cfg.thresholds:
            ap[(c, t)] = interpolated_ap(match_detections(cls_dets, centers, t), n_gt)
    return EvalResult(ap, cfg.thresholds, cfg.classes, tuple(absent))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def detections_csv(dets: Sequence[Detection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DET_COLUMNS)
    for d in dets:
        b = d.box
        w.writerow([d.frame_id, d.slice_index, b.class_id, _fmt(b.score), *map(_fmt, b.center), *map(_fmt, b.dims), _fmt(b.yaw)])
    return buf.getvalue()


def write_detections(dets: Sequence[Detection], path) -> None:
    Path(path).write_text(detections_csv(dets))


def read_detections(path) -> list[Detection]:
    out = []
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                box = Box3D(
                    (float(row["cx"]), float(row["cy"]), float(row["cz"])),
                    (float(row["l"]), float(row["w"]), float(row["h"])),
                    float(row["yaw"]),
                    int(row["class"]),
                    float(row["score"]),
                )
                out.append(Detection(box, int(row["slice"]), row["frame_id"]))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read detections {path}: {exc}") from exc
    return out


def eval_report_csv(result: EvalResult, class_names: Mapping | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "threshold", "ap"])
    for c in result.classes:
        name = class_names.get(c, str(c)) if class_names else str(c)
        for t in result.thresholds:
            val = result.ap.get((c, t))
            w.writerow([name, f"{t:g}", "absent" if val is None else _fmt(val)])
    m = result.mean_ap
    w.writerow(["mAP", "all", "absent" if m is None or math.isnan(m) else _fmt(m)])
    return buf.getvalue()
