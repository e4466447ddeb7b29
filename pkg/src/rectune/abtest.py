"""Experiment platform interface and the built-in simulated A/B platform."""

from __future__ import annotations

import itertools
import json
import logging
import math
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from .errors import ConfigError, ExperimentError, NotReadyError, ValidationError
from .simpipeline import Scenario, SystemConfig
from .simpipeline.evaluate import request_samples, stage_params
from .storage import atomic_write_json

log = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
METRIC_COLUMNS = ("engagement1", "engagement2", "diversity")


def welch_p(mean_a, std_a, n_a, mean_b, std_b, n_b):
    """Welch t statistic for b - a with a two-sided normal-approximation p-value."""
    if n_a < 2 or n_b < 2:
        raise ValueError("welch_p needs at least 2 samples per group")
    se2 = std_a * std_a / n_a + std_b * std_b / n_b
    if se2 == 0.0:
        if mean_a == mean_b:
            return 0.0, 1.0
        return math.copysign(math.inf, mean_b - mean_a), 0.0
    t = (mean_b - mean_a) / math.sqrt(se2)
    return t, math.erfc(abs(t) / math.sqrt(2.0))


def relative_delta(mean_c, mean_t):
    """Percent change of treatment vs control; None when control mean is 0."""
    if mean_c == 0:
        return None
    return 100.0 * (mean_t - mean_c) / mean_c


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class ArmResult:
    metrics: Mapping[str, MetricStats]

    def means(self) -> dict[str, float]:
        return {k: v.mean for k, v in self.metrics.items()}

    def to_dict(self):
        return {k: {"mean": v.mean, "std": v.std, "n": v.n} for k, v in sorted(self.metrics.items())}

    @classmethod
    def from_dict(cls, d):
        return cls({k: MetricStats(**v) for k, v in d.items()})

    @classmethod
    def from_samples(cls, samples: np.ndarray, metrics) -> "ArmResult":
        out = {}
        for m in metrics:
            col = samples[:, METRIC_COLUMNS.index(m)]
            n = len(col)
            mean = math.fsum(col) / n
            var = math.fsum((col - mean) ** 2) / (n - 1) if n > 1 else 0.0
            out[m] = MetricStats(mean, math.sqrt(var), n)
        return cls(out)


@dataclass(frozen=True)
class MetricDelta:
    relative_delta_pct: float | None
    p_value: float
    significant: bool
    t: float = 0.0


@dataclass(frozen=True)
class MetricReport:
    metrics: Mapping[str, MetricDelta]

    def deltas(self) -> dict[str, float | None]:
        return {k: v.relative_delta_pct for k, v in self.metrics.items()}

    def to_dict(self):
        out = {}
        for k, v in sorted(self.metrics.items()):
            t = v.t if math.isfinite(v.t) else ("inf" if v.t > 0 else "-inf")
            out[k] = {"relative_delta_pct": v.relative_delta_pct, "p_value": v.p_value,
                      "significant": v.significant, "t": t}
        return out

    @classmethod
    def from_dict(cls, d):
        return cls({k: MetricDelta(v["relative_delta_pct"], v["p_value"], v["significant"], float(v.get("t", 0.0)))
                    for k, v in d.items()})

    @classmethod
    def compare(cls, control: ArmResult, arm: ArmResult) -> "MetricReport":
        out = {}
        for name, c in control.metrics.items():
            a = arm.metrics[name]
            t, p = welch_p(c.mean, c.std, c.n, a.mean, a.std, a.n)
            out[name] = MetricDelta(relative_delta(c.mean, a.mean), p, p < SIGNIFICANCE_LEVEL, t)
        return cls(out)


@dataclass(frozen=True)
class ArmOutcome:
    control: ArmResult
    arm: ArmResult
    report: MetricReport

    def to_dict(self):
        return {"control": self.control.to_dict(), "arm": self.arm.to_dict(), "report": self.report.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(ArmResult.from_dict(d["control"]), ArmResult.from_dict(d["arm"]),
                   MetricReport.from_dict(d["report"]))


@dataclass(frozen=True)
class ExperimentSpec:
    experiment_id: str
    control: SystemConfig
    arms: tuple[tuple[str, SystemConfig], ...]
    num_requests: int = 1000
    traffic_fraction: float = 0.01
    seed: int = 0
    scenario: str = "default"
    design: str = "paired"
    pending_review: bool = False

    def __post_init__(self):
        ids = [a for a, _ in self.arms]
        if len(set(ids)) != len(ids):
            raise ValidationError("arm ids must be unique", "arms")
        if "control" in ids:
            raise ValidationError("'control' is reserved", "arms")
        if self.num_requests < 2:
            raise ValidationError("num_requests must be >= 2", "num_requests")
        if not 0 < self.traffic_fraction <= 1:
            raise ValidationError("traffic_fraction must lie in (0, 1]", "traffic_fraction")
        if self.design not in ("paired", "disjoint"):
            raise ValidationError(f"unknown design {self.design!r}", "design")

    def to_dict(self):
        return {
            "experiment_id": self.experiment_id,
            "control": self.control.params,
            "arms": [{"arm_id": a, "config": c.params} for a, c in self.arms],
            "num_requests": self.num_requests,
            "traffic_fraction": self.traffic_fraction,
            "seed": self.seed,
            "scenario": self.scenario,
            "design": self.design,
            "pending_review": self.pending_review,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["control"] = SystemConfig(d["control"])
        d["arms"] = tuple((a["arm_id"], SystemConfig(a["config"])) for a in d["arms"])
        return cls(**d)


def _request_ids(spec: ExperimentSpec, slot: int) -> range:
    # disjoint buckets: slot 0 is control, arm k uses the k-th block of requests
    n = spec.num_requests
    if spec.design == "paired":
        return range(n)
    return range(slot * n, (slot + 1) * n)


def run_simulated_experiment(spec: ExperimentSpec, scenario: Scenario, search_space=None,
                             workers: int = 1) -> dict[str, ArmOutcome]:
    """Evaluate control and every arm on the same simulated traffic."""
    if spec.scenario != scenario.name:
        raise ExperimentError(f"spec targets scenario {spec.scenario!r}, platform runs {scenario.name!r}")
    configs = [("control", spec.control), *spec.arms]
    for arm_id, cfg in configs:
        if search_space is not None:
            search_space.validate(cfg, path=f"arms.{arm_id}")
        try:
            stage_params(scenario, cfg)
        except ConfigError as exc:
            raise ConfigError(str(exc), f"arms.{arm_id}") from exc

    def samples(slot, cfg):
        return request_samples(scenario, cfg, _request_ids(spec, slot))

    control = ArmResult.from_samples(samples(0, spec.control), scenario.metrics)
    jobs = [(slot, arm_id, cfg) for slot, (arm_id, cfg) in enumerate(spec.arms, start=1)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: samples(j[0], j[2]), jobs))
    else:
        results = [samples(slot, cfg) for slot, _, cfg in jobs]
    out = {}
    for (_, arm_id, _), s in zip(jobs, results):
        arm = ArmResult.from_samples(s, scenario.metrics)
        out[arm_id] = ArmOutcome(control, arm, MetricReport.compare(control, arm))
    return out


class ExperimentPlatform(Protocol):
    def submit(self, spec: ExperimentSpec) -> str: ...
    def status(self, handle: str) -> str: ...
    def fetch(self, handle: str) -> dict[str, ArmOutcome]: ...


PENDING, RUNNING, DONE, FAILED = "pending", "running", "done", "failed"


@dataclass
class _Job:
    spec: ExperimentSpec
    future: Future | None = None
    state: str = PENDING
    result: dict | None = None
    error: str | None = None


class SimulatedPlatform:
    """In-process platform backed by the pipeline simulator.

    With ``results_dir`` every finished experiment is persisted as
    ``<handle>.json`` and a fresh instance can fetch it later.
    With ``background=False`` (default) experiments run inside ``submit``.
    """

    def __init__(self, scenario: Scenario, search_space=None, results_dir=None,
                 background: bool = False, workers: int = 1):
        self.scenario = scenario
        self.search_space = search_space
        self.results_dir = Path(results_dir) if results_dir else None
        self.workers = workers
        self._jobs: dict[str, _Job] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count()
        self._executor = ThreadPoolExecutor(max_workers=2) if background else None

    def _path(self, handle):
        return self.results_dir / f"{handle}.json" if self.results_dir else None

    def submit(self, spec: ExperimentSpec) -> str:
        if spec.pending_review:
            raise ExperimentError(f"experiment {spec.experiment_id} has not passed review")
        with self._lock:
            handle = spec.experiment_id
            if handle in self._jobs or (self._path(handle) and self._path(handle).exists()):
                handle = f"{spec.experiment_id}.{next(self._counter)}"
            job = self._jobs[handle] = _Job(spec)
        if self._executor is not None:
            job.future = self._executor.submit(self._run, handle, job)
        else:
            self._run(handle, job)
        return handle

    def _run(self, handle, job):
        job.state = RUNNING
        try:
            job.result = run_simulated_experiment(job.spec, self.scenario, self.search_space, self.workers)
            job.state = DONE
        except Exception as exc:  # surfaced through status()/fetch()
            log.warning("experiment %s failed: %s", handle, exc)
            job.error = str(exc)
            job.state = FAILED
        if self.results_dir is not None:
            self.results_dir.mkdir(parents=True, exist_ok=True)
            atomic_write_json(self._path(handle), experiment_document(handle, job.spec, job.state,
                                                                       job.result, job.error))

    def _job(self, handle) -> _Job:
        with self._lock:
            job = self._jobs.get(handle)
        if job is None and self._path(handle) and self._path(handle).exists():
            doc = json.loads(self._path(handle).read_text())
            job = _Job(ExperimentSpec.from_dict(doc["spec"]), state=doc["status"], error=doc.get("error"))
            if doc.get("arms") is not None:
                job.result = {k: ArmOutcome.from_dict(v) for k, v in doc["arms"].items()}
            with self._lock:
                self._jobs[handle] = job
        if job is None:
            raise ExperimentError(f"unknown experiment handle {handle!r}")
        return job

    def status(self, handle: str) -> str:
        return self._job(handle).state

    def wait(self, handle: str, timeout: float | None = None) -> str:
        job = self._job(handle)
        if job.future is not None:
            try:
                job.future.result(timeout)
            except Exception:
                pass
        return job.state

    def fetch(self, handle: str) -> dict[str, ArmOutcome]:
        job = self._job(handle)
        if job.state == FAILED:
            raise ExperimentError(f"experiment {handle} failed: {job.error}")
        if job.state != DONE:
            raise NotReadyError(f"experiment {handle} is {job.state}")
        return dict(job.result)

    def spec(self, handle: str) -> ExperimentSpec:
        return self._job(handle).spec

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)


def experiment_document(handle, spec, status, result=None, error=None) -> dict:
    return {
        "handle": handle,
        "spec": spec.to_dict(),
        "status": status,
        "error": error,
        "arms": {k: v.to_dict() for k, v in sorted(result.items())} if result else None,
    }
