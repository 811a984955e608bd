"""Discrete-event simulation of streaming slice pipelines.

Slice ``k`` becomes available at ``k * slice_interval_ms``; its acquisition
took one interval, so end-to-end latency is ``interval + finish - arrival``.
Stages run in declaration order. Consecutive stages sharing a
``parallel_group`` start together and the slice moves on at their latest
finish. A stage flagged ``depends_on_previous_slice`` cannot start before
the same stage finished on the previous slice; other stages have unlimited
workers unless ``max_workers`` caps each stage's pool.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import substream


@dataclass(frozen=True)
class Stage:
    name: str
    latency_ms: float
    depends_on_previous_slice: bool = False
    parallel_group: Optional[str] = None


@dataclass(frozen=True)
class PipelineModel:
    name: str
    stages: tuple
    slice_interval_ms: float
    n_slices: int = 8
    max_workers: Optional[int] = None
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ConfigError("pipeline has no stages")
        if self.slice_interval_ms <= 0 or self.n_slices < 1:
            raise ConfigError("slice interval and n_slices must be positive")
        if any(s.latency_ms < 0 for s in self.stages):
            raise ConfigError("stage latencies must be non-negative")
        if self.max_workers is not None and self.max_workers < 1:
            raise ConfigError("max_workers must be >= 1")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must lie in [0, 1)")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate stage names")
        self.steps  # noqa: B018  validates grouping

    @property
    def rotation_period_ms(self) -> float:
        return self.slice_interval_ms * self.n_slices

    @property
    def steps(self) -> list[tuple]:
        """Stages grouped into sequential steps of concurrent members."""
        steps, seen = [], set()
        for key, members in groupby(enumerate(self.stages), key=lambda t: t[1].parallel_group or f"#{t[0]}"):
            if key in seen:
                # group A before and after B: A must both precede and follow B
                raise ConfigError(f"parallel group {key!r} is split; dependency cycle")
            seen.add(key)
            steps.append(tuple(s for _, s in members))
        return steps

    @property
    def past_dependent(self) -> bool:
        return any(s.depends_on_previous_slice for s in self.stages)

    @property
    def service_ms(self) -> float:
        """Unqueued per-slice processing time along the critical path."""
        return sum(max(s.latency_ms for s in step) for step in self.steps)


@dataclass
class SliceEvent:
    slice: int
    arrival_ms: float
    start_ms: float
    finish_ms: float
    wait_ms: float
    e2e_ms: float
    service_ms: float
    stages: dict = field(default_factory=dict)  # name -> (start, finish)


@dataclass
class SimTrace:
    model: PipelineModel
    events: list

    @property
    def e2e(self) -> np.ndarray:
        return np.array([e.e2e_ms for e in self.events])

    @property
    def waits(self) -> np.ndarray:
        return np.array([e.wait_ms for e in self.events])

    @property
    def mean_latency_ms(self) -> float:
        return float(self.e2e.mean())

    @property
    def max_latency_ms(self) -> float:
        return float(self.e2e.max())

    @property
    def throughput_hz(self) -> float:
        """Frame rate of one acquire-then-process cycle: 1000 / (interval + service)."""
        service = float(np.mean([e.service_ms for e in self.events]))
        return 1000.0 / (self.model.slice_interval_ms + service)

    @property
    def completion_rate_hz(self) -> float:
        """Inverse mean inter-completion time over the last rotation."""
        done = np.sort([e.finish_ms for e in self.events])
        tail = done[-(self.model.n_slices + 1):]
        if len(tail) < 2:
            return math.inf
        gap = float(np.diff(tail).mean())
        return math.inf if gap == 0 else 1000.0 / gap

    @property
    def wait_growth_ms(self) -> float:
        """Least-squares slope of queue wait against slice index."""
        w = self.waits
        if len(w) < 2:
            return 0.0
        return float(np.polyfit(np.arange(len(w)), w, 1)[0])


def simulate(model: PipelineModel, n_rotations: int = 1) -> SimTrace:
    if n_rotations < 1:
        raise ConfigError("n_rotations must be >= 1")
    rng = substream(model.seed, "stream_sim") if model.jitter else None
    steps = model.steps
    prev_finish: dict = {}
    pools: dict = {s.name: [] for s in model.stages}
    events = []
    for k in range(n_rotations * model.n_slices):
        arrival = k * model.slice_interval_ms
        ready = arrival
        wait = 0.0
        service = 0.0
        first_start = None
        stage_times = {}
        for step in steps:
            start = ready
            for s in step:
                if s.depends_on_previous_slice and s.name in prev_finish:
                    start = max(start, prev_finish[s.name])
                pool = pools[s.name]
                if model.max_workers is not None and len(pool) >= model.max_workers:
                    start = max(start, pool[0])
            step_finish = start
            step_latency = 0.0
            for s in step:
                lat = s.latency_ms
                if rng is not None:
                    lat *= 1.0 + rng.uniform(-model.jitter, model.jitter)
                finish = start + lat
                pool = pools[s.name]
                if model.max_workers is not None:
                    if len(pool) >= model.max_workers:
                        heapq.heapreplace(pool, finish)
                    else:
                        heapq.heappush(pool, finish)
                prev_finish[s.name] = finish
                stage_times[s.name] = (start, finish)
                step_finish = max(step_finish, finish)
                step_latency = max(step_latency, lat)
            wait += start - ready
            service += step_latency
            if first_start is None:
                first_start = start
            ready = step_finish
        events.append(
            SliceEvent(k, arrival, first_start, ready, wait, model.slice_interval_ms + ready - arrival, service, stage_times)
        )
    return SimTrace(model, events)


def summary_row(trace: SimTrace) -> dict:
    return {
        "model": trace.model.name,
        "throughput_hz": trace.throughput_hz,
        "completion_rate_hz": trace.completion_rate_hz,
        "mean_e2e_ms": trace.mean_latency_ms,
        "max_e2e_ms": trace.max_latency_ms,
        "wait_growth_ms_per_slice": trace.wait_growth_ms,
    }


def compare_pipelines(models: Sequence[PipelineModel], n_rotations: int = 1) -> list[dict]:
    if len(models) < 2:
        raise ConfigError("comparison needs at least two models")
    return [summary_row(simulate(m, n_rotations)) for m in models]


def latency_budget(model: PipelineModel, target_hz: float) -> float:
    """Largest per-slice processing time that still meets ``target_hz``."""
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    budget = 1000.0 / target_hz - model.slice_interval_ms
    if model.past_dependent:
        budget = min(budget, model.slice_interval_ms)
    return budget


def model_from_dict(data: dict) -> PipelineModel:
    try:
        stages = tuple(
            Stage(
                str(s["name"]),
                float(s["latency_ms"]),
                bool(s.get("depends_on_previous_slice", False)),
                s.get("parallel_group"),
            )
            for s in data["stages"]
        )
        return PipelineModel(
            name=str(data.get("name", "pipeline")),
            stages=stages,
            slice_interval_ms=float(data["slice_interval_ms"]),
            n_slices=int(data.get("n_slices", 8)),
            max_workers=data.get("max_workers"),
            jitter=float(data.get("jitter", 0.0)),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad pipeline model: {exc}") from exc


def load_model(path) -> PipelineModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read pipeline model {path}: {exc}") from exc


def bundled_model(name: str) -> PipelineModel:
    from importlib import resources

    ref = resources.files("slicefuse") / "data" / "models" / f"{name}.json"
    return model_from_dict(json.loads(ref.read_text()))


def trace_csv(trace: SimTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slice", "arrival", "start", "finish", "wait", "e2e"])
    for e in trace.events:
        w.writerow([e.slice] + [f"{x:.6f}" for x in (e.arrival_ms, e.start_ms, e.finish_ms, e.wait_ms, e.e2e_ms)])
    return buf.getvalue()


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    cols = ["model", "throughput_hz", "completion_rate_hz", "mean_e2e_ms", "max_e2e_ms", "wait_growth_ms_per_slice"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r["model"]] + [f"{r[c]:.6f}" for c in cols[1:]])
    return buf.getvalue()
