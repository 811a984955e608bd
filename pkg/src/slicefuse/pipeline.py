"""End-to-end per-slice pipeline over a scene bundle.

For each slice: pillarize and encode the slice's points; splat the features
of the overlapping cameras into the slice's quadrant volumes, standardise
them as one batch and reduce them to BEV; crop the point map to the same
quadrants, fuse, run the detector hook, map detections back to the full
grid, keep the top 500 and apply per-class NMS. Slices are then aggregated
and evaluated against ground truth when present.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calib import CalibNoise, perturb_rig
from .detection import (
    DEFAULT_THRESHOLDS,
    Detection,
    EvalConfig,
    EvalResult,
    aggregate_slices,
    detections_csv,
    eval_report_csv,
    evaluate_map,
    nms_per_class,
    top_k,
)
from .detector import OccupancyPeakDetector
from .errors import ConfigError
from .fusion import crop, fuse, quadrants_of_slice
from .grid import BevMap, GridSpec, Quadrant
from .image_bev import (
    FeatureImage,
    PrecomputedFeatureProvider,
    ReferenceFeatureProvider,
    batch_standardize,
    reduce_volume_to_bev,
    splat_to_volume,
)
from .pillars import PillarEncoder, encode_pillars, pillarize
from .rng import stream_seed
from .scene_io import SceneBundle
from .slicing import cameras_for_slice, slice_sweep
from .synthetic import CLASS_NAMES, CLASSES

# Desk-scale grid: full extent, coarser cells and fewer channels.
DESK_GRID = GridSpec(cell_xy=0.4, channels=16)


@dataclass(frozen=True)
class RunConfig:
    n_slices: int = 8
    grid: GridSpec = DESK_GRID
    noise_deg: float = 0.0
    noise_m: float = 0.0
    nms_radius: object = 0.5  # float or {class_id: radius}
    thresholds: tuple = DEFAULT_THRESHOLDS
    classes: tuple = tuple(CLASSES)
    max_per_slice: int = 500
    pipeline_model: Optional[str] = None
    out_dir: Optional[str] = None
    seed: int = 0
    disabled_cameras: tuple = ()
    use_images: bool = True
    detector_beta: float = 0.25

    def __post_init__(self):
        if self.n_slices < 1:
            raise ConfigError("n_slices must be >= 1")
        if self.noise_deg < 0 or self.noise_m < 0:
            raise ConfigError("noise bounds must be non-negative")
        if self.grid.nz % 4:
            raise ConfigError("grid must have a multiple of 4 z cells")
        if self.grid.nx % 2 or self.grid.ny % 2:
            raise ConfigError("grid dims must be even for quadrant cropping")
        radii = self.nms_radius.values() if isinstance(self.nms_radius, dict) else [self.nms_radius]
        if any(float(r) <= 0 for r in radii):
            raise ConfigError("NMS radii must be positive")
        try:
            EvalConfig(self.thresholds, self.classes, self.max_per_slice)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.thresholds, self.classes, self.max_per_slice)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "grid" in data:
                g = {**asdict(DESK_GRID), **data["grid"]}
                data["grid"] = GridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in g.items()})
            for key in ("thresholds", "classes", "disabled_cameras"):
                if key in data:
                    data[key] = tuple(data[key])
            if isinstance(data.get("nms_radius"), dict):
                data["nms_radius"] = {int(k): float(v) for k, v in data["nms_radius"].items()}
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


@dataclass
class RunResult:
    detections: list
    per_slice: list
    evaluation: Optional[EvalResult]
    artifacts: dict = field(default_factory=dict)

    @property
    def mean_ap(self):
        return None if self.evaluation is None else self.evaluation.mean_ap


def make_encoder(grid: GridSpec, seed: int) -> PillarEncoder:
    if grid.channels == 64 and seed == 0:
        return PillarEncoder.bundled()
    return PillarEncoder.from_seed(grid.channels, seed)


def compute_features(bundle: SceneBundle, cfg: RunConfig) -> dict:
    """Feature maps per usable camera index."""
    if not cfg.use_images:
        return {}
    reference = ReferenceFeatureProvider(cfg.grid.channels, cfg.seed)
    precomputed = PrecomputedFeatureProvider(bundle.feature_paths) if bundle.feature_paths else None
    feats = {}
    for k, img in enumerate(bundle.images):
        if k in cfg.disabled_cameras:
            continue
        if precomputed is not None and k in precomputed.paths:
            feats[k] = precomputed(None, k)
        elif img is not None:
            feats[k] = reference(img, k)
    return feats


def projection_rig(bundle: SceneBundle, cfg: RunConfig):
    """Calibration used for splatting; perturbed when noise is configured."""
    if cfg.noise_deg == 0 and cfg.noise_m == 0:
        return bundle.rig
    noise = CalibNoise(cfg.noise_deg, cfg.noise_m, stream_seed(cfg.seed, "calib_noise"))
    return perturb_rig(bundle.rig, noise)


def image_bev_for(quads, cams, feats: dict, rig, grid: GridSpec) -> list[BevMap]:
    """Cropped image BEV maps for one slice (zeros when no camera contributes)."""
    hx, hy = grid.nx // 2, grid.ny // 2
    chosen = [feats[c] for c in cams if c in feats]
    if not chosen:
        return [BevMap.zeros(hx, hy, grid.channels) for _ in quads]
    volumes = [splat_to_volume(chosen, rig, grid, q) for q in quads]
    return [reduce_volume_to_bev(v) for v in batch_standardize(volumes)]


def run_slice(sl, bundle, cfg, encoder, feats, rig, detector) -> list[Detection]:
    grid = cfg.grid
    pillars = pillarize(sl.points, grid)
    p_bev = encode_pillars(pillars, grid, encoder)
    quads = {q.index for q in quadrants_of_slice(sl.spec)}
    # points exactly on an axis may sit in a neighbouring quadrant's cells
    quads |= {Quadrant.of_cell(i, j, grid.nx, grid.ny).index for i, j in pillars.cells}
    quads = [Quadrant(q) for q in sorted(quads)]
    cams = cameras_for_slice(sl.spec, bundle.rig)
    i_maps = image_bev_for(quads, cams, feats, rig, grid)
    dets = []
    for q, i_bev in zip(quads, i_maps):
        fused = fuse(crop(p_bev, q), i_bev)
        i0, _, j0, _ = q.bounds(grid.nx, grid.ny)
        for box in detector(fused, grid.channels, grid, (i0, j0)):
            dets.append(Detection(box, sl.spec.index, bundle.frame_id))
    return nms_per_class(top_k(dets, cfg.max_per_slice), cfg.nms_radius)


def run_pipeline(bundle: SceneBundle, cfg: RunConfig, detector=None) -> RunResult:
    detector = detector or OccupancyPeakDetector({k: v[1] for k, v in CLASSES.items()}, beta=cfg.detector_beta)
    encoder = make_encoder(cfg.grid, cfg.seed)
    feats = compute_features(bundle, cfg)
    rig = projection_rig(bundle, cfg)
    per_slice = [run_slice(sl, bundle, cfg, encoder, feats, rig, detector) for sl in slice_sweep(bundle.points, cfg.n_slices)]
    dets = aggregate_slices(per_slice, cfg.nms_radius)
    evaluation = evaluate_map(dets, {bundle.frame_id: bundle.boxes}, cfg.eval_config) if bundle.boxes else None
    result = RunResult(dets, per_slice, evaluation)
    if cfg.out_dir:
        result.artifacts = write_run_artifacts(result, cfg)
    return result


def write_run_artifacts(result: RunResult, cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "detections": out / "detections.csv",
        "per_slice": out / "per_slice_detections.csv",
        "config": out / "run_config.json",
    }
    files["detections"].write_text(detections_csv(result.detections))
    files["per_slice"].write_text(detections_csv([d for s in result.per_slice for d in s]))
    # the output location is not part of the run's identity
    settings = {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}
    files["config"].write_text(json.dumps(settings, indent=1, sort_keys=True, default=str))
    if result.evaluation is not None:
        files["eval"] = out / "eval.csv"
        files["eval"].write_text(eval_report_csv(result.evaluation, CLASS_NAMES))
    return {k: str(v) for k, v in files.items()}


def project_scene(bundle: SceneBundle, cfg: RunConfig) -> BevMap:
    """Full-grid image BEV from every usable camera (no slicing, no crop)."""
    feats = compute_features(bundle, cfg)
    rig = projection_rig(bundle, cfg)
    grid = cfg.grid
    if not feats:
        return BevMap.zeros(grid.nx, grid.ny, grid.channels)
    volumes = [splat_to_volume([feats[k] for k in sorted(feats)], rig, grid, Quadrant(q)) for q in range(4)]
    maps = [reduce_volume_to_bev(v) for v in batch_standardize(volumes)]
    full = BevMap.zeros(grid.nx, grid.ny, grid.channels)
    for q, m in enumerate(maps):
        i0, i1, j0, j1 = Quadrant(q).bounds(grid.nx, grid.ny)
        full.values[i0:i1, j0:j1] = m.values
        full.mask[i0:i1, j0:j1] = m.mask
    return full


NOISE_LEVELS = ((0.0, 0.0), (1.0, 0.10), (3.0, 0.30), (5.0, 0.50))


def _cm(metres: float) -> float:
    return round(metres * 100.0, 6)


def noise_sweep(bundles, cfg: RunConfig, levels=NOISE_LEVELS) -> list[dict]:
    """mAP of every bundle under each (degrees, metres) calibration noise level."""
    rows = []
    for bundle in bundles:
        for deg, metres in levels:
            run_cfg = RunConfig(**{**cfg.__dict__, "noise_deg": deg, "noise_m": metres, "out_dir": None})
            res = run_pipeline(bundle, run_cfg)
            rows.append({"frame_id": bundle.frame_id, "noise_deg": deg, "noise_cm": _cm(metres), "mAP": res.mean_ap})
    return rows


def level_means(rows, levels=NOISE_LEVELS) -> list[float]:
    out = []
    for deg, metres in levels:
        vals = [r["mAP"] for r in rows if r["noise_deg"] == deg and r["noise_cm"] == _cm(metres) and r["mAP"] is not None]
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return out


def noise_trend(rows, levels=NOISE_LEVELS) -> dict:
    """Level means plus a one-sided sign test of clean versus the worst level.

    Ties count as neither win nor loss, as usual for the sign test.
    """
    from scipy.stats import binomtest

    means = level_means(rows, levels)
    (d0, m0), (d1, m1) = levels[0], levels[-1]
    by_frame: dict = {}
    for r in rows:
        by_frame.setdefault(r["frame_id"], {})[(r["noise_deg"], r["noise_cm"])] = r["mAP"]
    wins = losses = 0
    for vals in by_frame.values():
        clean, worst = vals.get((d0, _cm(m0))), vals.get((d1, _cm(m1)))
        if clean is None or worst is None or clean == worst:
            continue
        wins += clean > worst
        losses += clean < worst
    trials = wins + losses
    p = binomtest(wins, trials, 0.5, alternative="greater").pvalue if trials else 1.0
    monotone = all(a >= b for a, b in zip(means, means[1:]))
    return {"means": means, "monotone": monotone, "wins": wins, "losses": losses, "p_value": float(p)}
