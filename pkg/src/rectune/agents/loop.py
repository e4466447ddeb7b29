"""One optimization round after another: propose, review, test, learn."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..abtest import ExperimentSpec
from ..errors import ProposalError, RecTuneError, ValidationError
from ..memory import COMPLETED, FAILED, PROPOSED, REJECTED, MemoryStore, TaskRecord, read_elites
from ..simpipeline import Scenario, compute_cost
from ..simpipeline.evaluate import stage_params
from ..skillhub import Skill, publish_skill
from .actor import ProposedCandidate, actor_propose, heuristic_propose, scenario_knobs
from .critic import critic_review
from .insight import insight_self_learn
from .online import (apply_review, current_control, online_collect, online_launch, online_prepare,
                     resolve_stale)
from .skill_agent import skill_evolve

log = logging.getLogger(__name__)

Reviewer = Callable[[ExperimentSpec], bool]


@dataclass
class LoopSettings:
    rounds: int = 1
    batch: int = 4
    proposer: str = "heuristic"
    auto_approve: bool = False
    seed: int = 0
    critic: bool = True
    oversample: int = 2
    num_requests: int = 300
    elite_capacity: int = 20
    actor_elites: int = 4
    evolve: bool = True
    workers: int = 1


@dataclass
class LoopContext:
    scenario: Scenario
    skills_root: Path
    store: MemoryStore
    skill: Skill
    platform: object
    llm_client: object = None
    # replaces the actor, e.g. with a fault-injecting wrapper
    proposer: Callable | None = None


@dataclass
class RoundSummary:
    round: int
    experiment_id: str | None
    arm_count: int
    proposed: int
    rejected: int
    failed: int
    duplicates: int
    best_utility: float | None
    best_task_id: str | None
    best_config: str | None
    skill_version: int
    review: str = "approved"

    def to_dict(self):
        return dict(self.__dict__)


def round_seed(seed: int, round_no: int) -> int:
    return int(np.random.SeedSequence([seed, round_no]).generate_state(1)[0])


def _propose(ctx: LoopContext, settings: LoopSettings, n: int, seed: int, history) -> list[ProposedCandidate]:
    elites = read_elites(ctx.store, limit=settings.actor_elites)
    if ctx.proposer is not None:
        return ctx.proposer(ctx.skill, elites, n, seed, history)
    knobs = scenario_knobs(ctx.scenario)
    try:
        return actor_propose(ctx.skill, elites, n, settings.proposer, seed, client=ctx.llm_client, **knobs)
    except ProposalError as exc:
        log.warning("model proposer failed, falling back to heuristic proposals: %s", exc)
        return heuristic_propose(ctx.skill, elites, n, seed, **knobs)


def reject_malformed(store: MemoryStore, rec: TaskRecord, exc) -> None:
    """An arm the platform cannot even parse: it still burns its slot."""
    store.update_task(rec.id, status="Approved")
    store.update_task(rec.id, status="Running")
    store.update_task(rec.id, status=FAILED, check_info={"platform": f"rejected: {exc}"})


def platform_validator(ctx: LoopContext):
    def validate(cfg):
        ctx.skill.search_space.validate(cfg, path="arm")
        stage_params(ctx.scenario, cfg)
    return validate


def run_round(ctx: LoopContext, settings: LoopSettings, round_no: int,
              reviewer: Reviewer | None = None) -> RoundSummary:
    store, skill = ctx.store, ctx.skill
    if not settings.auto_approve and reviewer is None:
        raise ValidationError("experiments need review: pass a reviewer or enable auto-approve", "auto_approve")
    resolve_stale(store)
    history = store.tasks()
    seed = round_seed(settings.seed, round_no)
    n = settings.batch * (settings.oversample if settings.critic else 1)
    proposals = _propose(ctx, settings, n, seed, history)

    records = []
    for p in proposals:
        rec = TaskRecord(store.next_id(), p.canonical(), p.explanation, store.now(), PROPOSED,
                         round=round_no, origin=p.origin)
        records.append(store.write_task(rec))

    cost_fn = lambda cfg: compute_cost(cfg, ctx.scenario)
    c_max = ctx.scenario.c_max if math.isfinite(ctx.scenario.c_max) else None
    rejected = 0
    if settings.critic:
        verdict = critic_review(proposals, skill, history, settings.batch, cost_fn, c_max,
                                llm_client=ctx.llm_client if settings.proposer == "llm" else None)
        keep = []
        for d, rec in zip(verdict.decisions, records):
            info = {"critic": d.to_dict(), "critic_comments": verdict.comments}
            if d.approved:
                keep.append(rec)
                store.update_task(rec.id, check_info=info)
            else:
                rejected += 1
                store.update_task(rec.id, status=REJECTED, check_info=info)
        keep.sort(key=lambda r: verdict.approved.index(records.index(r)))
    else:
        keep = []
        for rec in records:
            try:
                rec.system_config
            except RecTuneError as exc:
                reject_malformed(store, rec, exc)
            else:
                keep.append(rec)
    malformed = len(records) - rejected - len(keep)

    exp_id = f"exp-r{round_no:03d}"
    summary_kw = dict(round=round_no, proposed=len(proposals), rejected=rejected)
    if not keep:
        return _summary(ctx, exp_id=None, arms=malformed, failed=malformed, duplicates=0,
                        review="nothing to run", **summary_kw)

    control = current_control(store, skill)
    spec = online_prepare(store, keep, skill, control, exp_id, ctx.scenario.name, settings.num_requests,
                          seed, auto_approve=settings.auto_approve)
    if spec.pending_review:
        ok = bool(reviewer(spec))
        spec = apply_review(store, spec, ok)
        if not ok:
            return _summary(ctx, exp_id=None, arms=0, failed=0, duplicates=0, review="declined",
                            rejected=rejected + len(keep), proposed=len(proposals), round=round_no)

    handle, launched = online_launch(ctx.platform, store, spec, platform_validator(ctx))
    failed = len(spec.arms) - len(launched.arms) + malformed
    duplicates = 0
    if handle is not None:
        done = online_collect(ctx.platform, handle, store, skill, cost_fn, c_max, settings.elite_capacity)
        earlier = [r.params for r in history if r.status == COMPLETED]
        for rec in done:
            if rec.status != COMPLETED:
                continue
            if any(skill.search_space.relative_linf(rec.params, q) <= 1e-6 for q in earlier
                   if set(q) == set(rec.params)):
                duplicates += 1
            earlier.append(rec.params)

    if settings.evolve:
        records_now = store.tasks()
        report = insight_self_learn(skill, records_now, store.now())
        store.write_json(store.insights_path, report.to_dict())
        new = skill_evolve(skill, report, records_now, read_elites(store))
        publish_skill(ctx.skills_root, new)
        ctx.skill = new
    return _summary(ctx, exp_id=exp_id if handle else None, arms=len(spec.arms) + malformed, failed=failed,
                    duplicates=duplicates, **summary_kw)


def _summary(ctx, exp_id, arms, failed, duplicates, round, proposed, rejected, review="approved"):
    best = read_elites(ctx.store, limit=1)
    b = best[0] if best else None
    return RoundSummary(round, exp_id, arms, proposed, rejected, failed, duplicates,
                        b.utility if b else None, b.id if b else None, b.config if b else None,
                        ctx.skill.version, review)


def run_loop(ctx: LoopContext, settings: LoopSettings, reviewer: Reviewer | None = None,
             start_round: int = 1, on_round: Callable[[RoundSummary], None] | None = None) -> list[RoundSummary]:
    out = []
    for r in range(start_round, start_round + settings.rounds):
        summary = run_round(ctx, settings, r, reviewer)
        out.append(summary)
        if on_round is not None:
            on_round(summary)
    return out
