"""Online agent: experiment preparation, review gate, launch and collection."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, Sequence

from ..abtest import FAILED, ExperimentSpec
from ..errors import ExperimentError, RecTuneError, ValidationError
from ..memory import (APPROVED, COMPLETED, PROPOSED, REJECTED, RUNNING, MemoryStore, TaskRecord,
                      TaskResult, prune_memory, read_elites)
from ..simpipeline import SystemConfig, utility
from ..skillhub import Skill

log = logging.getLogger(__name__)


def current_control(store: MemoryStore, skill: Skill) -> SystemConfig:
    """Production config: the best elite so far, else the skill's initial config."""
    for rec in read_elites(store, limit=1):
        cfg = rec.system_config
        if set(cfg) == set(skill.search_space.names):
            return cfg
    return skill.initial_config


def online_prepare(store: MemoryStore, records: Sequence[TaskRecord], skill: Skill, control: SystemConfig,
                   experiment_id: str, scenario: str, num_requests: int = 1000, seed: int = 0,
                   traffic_fraction: float = 0.01, auto_approve: bool = False,
                   design: str = "paired") -> ExperimentSpec:
    """One arm per task record. Without auto-approval the spec waits for review."""
    if not records:
        raise ValidationError("no approved proposals to schedule", "approved")
    arms = tuple((r.id, SystemConfig.from_canonical(r.config)) for r in records)
    spec = ExperimentSpec(experiment_id, control, arms, num_requests, traffic_fraction, seed,
                          scenario, design, pending_review=not auto_approve)
    if auto_approve:
        for r in records:
            store.update_task(r.id, status=APPROVED, check_info={"review": "auto-approved"})
    return spec


def apply_review(store: MemoryStore, spec: ExperimentSpec, approved: bool) -> ExperimentSpec:
    """Human gate outcome: approve all arms or reject all of them."""
    for arm_id, _ in spec.arms:
        if approved:
            store.update_task(arm_id, status=APPROVED, check_info={"review": "approved by reviewer"})
        else:
            store.update_task(arm_id, status=REJECTED, check_info={"review": "declined by reviewer"})
    return replace(spec, pending_review=False) if approved else spec


def online_launch(platform, store: MemoryStore, spec: ExperimentSpec,
                  validate: Callable[[SystemConfig], None] | None = None) -> tuple[str | None, ExperimentSpec]:
    """Mark arms Running and submit.

    Arms the platform would refuse (``validate`` raises) fail individually
    instead of sinking the whole experiment.
    """
    if spec.pending_review:
        raise ExperimentError("experiment still awaits review")
    good = []
    for arm_id, cfg in spec.arms:
        store.update_task(arm_id, status=RUNNING)
        try:
            if validate is not None:
                validate(cfg)
        except RecTuneError as exc:
            store.update_task(arm_id, status="Failed", check_info={"platform": f"rejected: {exc}"})
            continue
        good.append((arm_id, cfg))
    if not good:
        return None, replace(spec, arms=())
    spec = replace(spec, arms=tuple(good))
    store.write_json(store.experiments_dir / f"{spec.experiment_id}.spec.json", spec.to_dict())
    return platform.submit(spec), spec


def online_collect(platform, handle: str, store: MemoryStore, skill: Skill,
                   cost_fn: Callable[[SystemConfig], float] | None = None, c_max: float | None = None,
                   elite_capacity: int = 20) -> list[TaskRecord]:
    status = platform.status(handle)
    spec = platform.spec(handle)
    if status == FAILED:
        out = []
        for arm_id, _ in spec.arms:
            rec = store.read_task(arm_id)
            if rec.status == RUNNING:
                rec = store.update_task(arm_id, status="Failed", check_info={"platform": "experiment failed"})
            out.append(rec)
        return out
    results = platform.fetch(handle)  # raises NotReadyError before completion
    known = {a for a, _ in spec.arms}
    unknown = set(results) - known
    if unknown:
        raise ExperimentError(f"platform returned unknown arm ids {sorted(unknown)}")
    out = []
    for arm_id, _ in spec.arms:
        if arm_id not in results:
            raise ExperimentError(f"no result for arm {arm_id}")
        rec = store.read_task(arm_id)
        if rec.status == COMPLETED:
            out.append(rec)
            continue
        outcome = results[arm_id]
        cost = cost_fn(rec.system_config) if cost_fn else None
        u = utility(outcome.arm.means(), skill.north_star, cost, c_max)
        uc = utility(outcome.control.means(), skill.north_star)
        result = TaskResult(outcome.report, outcome.arm, outcome.control, u.feasible, u.value, u.raw_value,
                            uc.raw_value, cost, u.violations, handle)
        out.append(store.update_task(arm_id, status=COMPLETED, results=result))
    prune_memory(store, elite_capacity, skill.north_star)
    return out


def resolve_stale(store: MemoryStore) -> list[str]:
    """Close out records left behind by an interrupted round."""
    touched = []
    for rec in store.tasks():
        if rec.status == PROPOSED:
            store.update_task(rec.id, status=REJECTED, check_info={"recovery": "stale proposal"})
        elif rec.status == APPROVED:
            store.update_task(rec.id, status=RUNNING)
            store.update_task(rec.id, status="Failed", check_info={"recovery": "interrupted before launch"})
        elif rec.status == RUNNING:
            store.update_task(rec.id, status="Failed", check_info={"recovery": "interrupted while running"})
        else:
            continue
        touched.append(rec.id)
    return touched
