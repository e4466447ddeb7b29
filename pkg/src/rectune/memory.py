"""Agent memory: task records on disk and the elite archive.

Layout under ``<root>/<skill>/``::

    tasks/<task-id>.json    one record per proposed configuration (never deleted)
    elites.json             current elite index
    insights.json           latest insight report
    experiments/<id>.json   experiment specs and results
    lock                    advisory single-writer lock
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from filelock import FileLock, Timeout

from .abtest import ArmResult, MetricReport
from .errors import LockConflictError, MetricError, StoreError, TransitionError
from .simpipeline import NorthStar, SystemConfig
from .storage import atomic_write_json, read_json, rfc3339, system_clock

log = logging.getLogger(__name__)

PROPOSED, APPROVED, REJECTED = "Proposed", "Approved", "Rejected"
RUNNING, COMPLETED, FAILED = "Running", "Completed", "Failed"
STATUSES = (PROPOSED, APPROVED, REJECTED, RUNNING, COMPLETED, FAILED)
TRANSITIONS = {
    PROPOSED: {APPROVED, REJECTED},
    APPROVED: {RUNNING},
    RUNNING: {COMPLETED, FAILED},
    REJECTED: set(),
    COMPLETED: set(),
    FAILED: set(),
}


def _num(x):
    return None if x is None or not math.isfinite(x) else x


@dataclass(frozen=True)
class TaskResult:
    """Outcome of one arm: report vs control plus the raw arm summaries."""

    report: MetricReport
    arm: ArmResult
    control: ArmResult
    feasible: bool
    utility: float
    raw_utility: float
    control_utility: float
    cost: float | None = None
    violations: tuple[str, ...] = ()
    experiment_id: str = ""

    def to_dict(self):
        return {
            "report": self.report.to_dict(),
            "arm": self.arm.to_dict(),
            "control": self.control.to_dict(),
            "feasible": self.feasible,
            "utility": _num(self.utility),
            "raw_utility": self.raw_utility,
            "control_utility": self.control_utility,
            "cost": self.cost,
            "violations": list(self.violations),
            "experiment_id": self.experiment_id,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MetricReport.from_dict(d["report"]), ArmResult.from_dict(d["arm"]),
                   ArmResult.from_dict(d["control"]), d["feasible"],
                   -math.inf if d["utility"] is None else d["utility"], d["raw_utility"],
                   d["control_utility"], d.get("cost"), tuple(d.get("violations", ())),
                   d.get("experiment_id", ""))


@dataclass(frozen=True)
class TaskRecord:
    id: str
    config: str
    explanation: str
    proposed_time: str
    status: str = PROPOSED
    results: TaskResult | None = None
    check_info: Mapping[str, Any] = field(default_factory=dict)
    round: int = 0
    origin: str = "heuristic"

    def __post_init__(self):
        if self.status not in STATUSES:
            raise StoreError(f"unknown status {self.status!r}")
        if (self.results is not None) != (self.status == COMPLETED):
            raise StoreError(f"task {self.id}: results must be present iff status is Completed")

    @property
    def system_config(self) -> SystemConfig:
        return SystemConfig.from_canonical(self.config)

    @property
    def params(self) -> dict[str, float]:
        return json.loads(self.config)

    @property
    def utility(self) -> float:
        return self.results.utility if self.results else -math.inf

    @property
    def feasible(self) -> bool:
        return bool(self.results and self.results.feasible)

    def report_deltas(self) -> dict:
        return self.results.report.deltas() if self.results else {}

    def to_dict(self):
        return {
            "id": self.id,
            "config": self.config,
            "explanation": self.explanation,
            "proposed_time": self.proposed_time,
            "status": self.status,
            "results": self.results.to_dict() if self.results else None,
            "check_info": dict(self.check_info),
            "round": self.round,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["results"] = TaskResult.from_dict(d["results"]) if d.get("results") else None
        return cls(**d)


class MemoryStore:
    """File-backed memory for one skill.

    Readers never lock. Open with ``writer=True`` (or use as a context
    manager) to take the advisory lock; a second writer gets
    LockConflictError.
    """

    def __init__(self, root, skill_name: str, writer: bool = False,
                 clock: Callable = system_clock):
        self.root = Path(root) / skill_name
        self.skill_name = skill_name
        self.clock = clock
        self.tasks_dir.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.root / "lock"), timeout=0)
        self.writer = False
        if writer:
            self.acquire()

    @property
    def tasks_dir(self) -> Path:
        return self.root / "tasks"

    @property
    def experiments_dir(self) -> Path:
        return self.root / "experiments"

    @property
    def elites_path(self) -> Path:
        return self.root / "elites.json"

    @property
    def insights_path(self) -> Path:
        return self.root / "insights.json"

    def acquire(self):
        try:
            self._lock.acquire()
        except Timeout:
            raise LockConflictError(f"memory {self.root} is locked by another writer") from None
        self.writer = True

    def release(self):
        if self.writer:
            self._lock.release()
            self.writer = False

    def __enter__(self):
        if not self.writer:
            self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()

    def _require_writer(self):
        if not self.writer:
            raise LockConflictError("store opened read-only; acquire the writer lock first")

    def now(self) -> str:
        return rfc3339(self.clock())

    # ---------------------------------------------------------------- tasks

    def _task_path(self, task_id: str) -> Path:
        return self.tasks_dir / f"{task_id}.json"

    def task_ids(self) -> list[str]:
        return sorted(p.stem for p in self.tasks_dir.glob("*.json"))

    def next_id(self) -> str:
        ids = [int(t[1:]) for t in self.task_ids() if t.startswith("t") and t[1:].isdigit()]
        return f"t{(max(ids) + 1 if ids else 1):05d}"

    def write_task(self, record: TaskRecord) -> TaskRecord:
        self._require_writer()
        if self._task_path(record.id).exists():
            raise StoreError(f"task {record.id} already exists")
        atomic_write_json(self._task_path(record.id), record.to_dict())
        return record

    def read_task(self, task_id: str) -> TaskRecord:
        path = self._task_path(task_id)
        if not path.exists():
            raise StoreError(f"unknown task id {task_id!r}")
        return TaskRecord.from_dict(read_json(path))

    def update_task(self, task_id: str, **delta) -> TaskRecord:
        self._require_writer()
        record = self.read_task(task_id)
        status = delta.get("status", record.status)
        if status != record.status and status not in TRANSITIONS[record.status]:
            raise TransitionError(f"task {task_id}: illegal transition {record.status} -> {status}")
        if "check_info" in delta:
            delta["check_info"] = {**record.check_info, **delta["check_info"]}
        updated = replace(record, **delta)
        atomic_write_json(self._task_path(task_id), updated.to_dict())
        return updated

    def tasks(self, status: str | None = None) -> list[TaskRecord]:
        out = []
        for tid in self.task_ids():
            try:
                rec = self.read_task(tid)
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable task %s: %s", tid, exc)
                continue
            if status is None or rec.status == status:
                out.append(rec)
        return out

    # ---------------------------------------------------------------- misc files

    def write_json(self, path: Path, obj) -> None:
        self._require_writer()
        atomic_write_json(path, obj)

    def elite_index(self) -> dict:
        if not self.elites_path.exists():
            return {"capacity": None, "entries": []}
        return read_json(self.elites_path)

    def insights(self) -> dict | None:
        return read_json(self.insights_path) if self.insights_path.exists() else None


# -------------------------------------------------------------------- elites

def _as_matrix(candidates, directions):
    if len(candidates) and isinstance(candidates[0], Mapping):
        names = sorted(candidates[0])
        for c in candidates:
            if sorted(c) != names:
                raise MetricError("candidates have mismatched metric sets")
        if directions is None:
            directions = {}
        signs = [directions.get(n, 1.0) if isinstance(directions, Mapping) else 1.0 for n in names]
        pts = np.array([[c[n] for n in names] for c in candidates], dtype=float)
        return pts * np.array(signs)
    pts = np.asarray(candidates, dtype=float)
    if pts.ndim != 2:
        raise MetricError("candidates must form a 2-D array (one row per candidate)")
    if directions is not None:
        signs = np.asarray(directions, dtype=float)
        if signs.shape != (pts.shape[1],):
            raise MetricError("one direction per metric is required")
        pts = pts * signs
    return pts


def pareto_prune(candidates, directions=None) -> list[int]:
    """Indices of the candidates no other candidate weakly dominates.

    ``directions`` holds +1 (maximize) / -1 (minimize) per metric, either as a
    sequence aligned with the columns or, for mapping candidates, keyed by
    metric name.
    """
    pts = _as_matrix(list(candidates), directions)
    if len(pts) == 0:
        return []
    ge = (pts[:, None, :] >= pts[None, :, :]).all(axis=2)
    gt = (pts[:, None, :] > pts[None, :, :]).any(axis=2)
    dominated = (ge & gt).any(axis=0)
    return [i for i in range(len(pts)) if not dominated[i]]


def zscore(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    mu = pts.mean(axis=0)
    sd = pts.std(axis=0)
    z = np.zeros_like(pts)
    ok = sd > 0
    z[:, ok] = (pts[:, ok] - mu[ok]) / sd[ok]
    return z


def greedy_maxmin(z, k: int, seed: int) -> list[int]:
    """Farthest-point selection from ``seed``; ties go to the lowest index."""
    z = np.asarray(z, dtype=float)
    n = len(z)
    chosen = [seed]
    mind = np.sqrt(((z - z[seed]) ** 2).sum(axis=1))
    remaining = np.ones(n, dtype=bool)
    remaining[seed] = False
    while len(chosen) < min(k, n):
        cand = np.flatnonzero(remaining)
        nxt = int(cand[np.argmax(mind[cand])])  # argmax returns the first maximum
        chosen.append(nxt)
        remaining[nxt] = False
        mind = np.minimum(mind, np.sqrt(((z - z[nxt]) ** 2).sum(axis=1)))
    return chosen


def select_diverse(points, k: int, utilities: Sequence[float], ids: Sequence | None = None) -> list:
    """Pick ``k`` spread-out candidates, starting from the highest-utility one.

    Metrics are z-scored across candidates first so scale does not matter.
    Returns ids (indices when ``ids`` is None) in selection order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(points)
    if n == 0:
        return []
    ids = list(range(n)) if ids is None else list(ids)
    order = sorted(range(n), key=lambda i: ids[i])
    pts = np.asarray(points, dtype=float)[order]
    util = np.asarray(utilities, dtype=float)[order]
    seed = int(np.argmax(util))
    chosen = greedy_maxmin(zscore(pts), k, seed)
    return [ids[order[i]] for i in chosen]


@dataclass(frozen=True)
class EliteArchive:
    capacity: int
    entries: tuple[dict, ...]

    @property
    def task_ids(self) -> list[str]:
        return [e["task_id"] for e in self.entries]

    def to_dict(self):
        return {"capacity": self.capacity, "entries": list(self.entries)}


def elite_vector(record: TaskRecord, north_star: NorthStar) -> dict[str, float]:
    means = record.results.arm.means()
    dirs = north_star.directions
    return {m: dirs[m] * means[m] for m in north_star.metric_names}


def prune_memory(store: MemoryStore, capacity: int, north_star: NorthStar) -> EliteArchive:
    """Rebuild the elite index from completed, feasible tasks."""
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    done = [r for r in store.tasks(COMPLETED) if r.feasible]
    entries = []
    if done:
        names = list(north_star.metric_names)
        vecs = [elite_vector(r, north_star) for r in done]
        pts = [[v[n] for n in names] for v in vecs]
        keep = pareto_prune(pts)
        if len(keep) > capacity:
            picked = select_diverse([pts[i] for i in keep], capacity,
                                    [done[i].utility for i in keep], [done[i].id for i in keep])
            by_id = {r.id: i for i, r in enumerate(done)}
            keep = [by_id[t] for t in picked]
        entries = [{"task_id": done[i].id, "metrics": vecs[i], "utility": done[i].utility} for i in keep]
        entries.sort(key=lambda e: (-e["utility"], e["task_id"]))
    archive = EliteArchive(capacity, tuple(entries))
    store.write_json(store.elites_path, archive.to_dict())
    return archive


def read_elites(store: MemoryStore, limit: int | None = None) -> list[TaskRecord]:
    entries = store.elite_index()["entries"]
    records = [store.read_task(e["task_id"]) for e in entries]
    records.sort(key=lambda r: (-r.utility, r.id))
    return records if limit is None else records[:limit]
