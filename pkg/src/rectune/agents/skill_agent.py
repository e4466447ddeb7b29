"""Skill agent: folds insights back into the skill and composes skills."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

from ..errors import EvolutionError, SkillError
from ..memory import COMPLETED, TaskRecord
from ..simpipeline import Guardrail, NorthStar, SystemConfig
from ..skillhub import SearchSpace, Skill
from .insight import InsightReport

TIGHTEN_MIN_TASKS = 5
TIGHTEN_MARGIN = 0.2


def _top_quartile(sensitivities: dict[str, float]) -> set[str]:
    ranked = sorted(((s, n) for n, s in sensitivities.items() if s > 0), key=lambda t: (-t[0], t[1]))
    k = math.ceil(len(sensitivities) / 4)
    return {n for _, n in ranked[:k]}


def tighten_bounds(skill: Skill, elites: Sequence[TaskRecord]) -> SearchSpace:
    """Shrink each range to the elite hull padded by a fifth of the current width.

    Never widens past the original (v1) bounds.
    """
    out = {}
    for name, spec in skill.search_space.params.items():
        values = [e.params[name] for e in elites if name in e.params]
        lo0, hi0 = skill.original_bounds[name]
        if any(v < lo0 or v > hi0 for v in values):
            raise EvolutionError(f"an elite lies outside the original bounds of {name}")
        if not values:
            out[name] = spec
            continue
        pad = TIGHTEN_MARGIN * spec.width
        lo = max(min(values) - pad, lo0)
        hi = min(max(values) + pad, hi0)
        if spec.kind == "integer":
            lo, hi = float(math.floor(lo)), float(math.ceil(hi))
        if not lo < hi:
            lo, hi = spec.lower, spec.upper
        if any(v < lo or v > hi for v in values):
            raise EvolutionError(f"tightened bounds of {name} would exclude an elite")
        out[name] = replace(spec, lower=lo, upper=hi)
    return SearchSpace(out)


def skill_evolve(skill: Skill, report: InsightReport, records: Sequence[TaskRecord],
                 elites: Sequence[TaskRecord]) -> Skill:
    """Next version: new knowledge, sensitivity flags, tighter bounds."""
    if skill.name not in report.skills:
        raise EvolutionError(f"insight report covers {list(report.skills)}, not {skill.name!r}")
    known = {(k.rule.parameter, k.rule.relation) for k in skill.domain_knowledge if k.rule}
    knowledge = list(skill.domain_knowledge)
    for entry in report.patterns:
        if entry.rule is None or entry.rule.parameter not in skill.search_space:
            continue
        key = (entry.rule.parameter, entry.rule.relation)
        if key not in known:
            knowledge.append(entry)
            known.add(key)

    space = skill.search_space
    completed = sum(1 for r in records if r.status == COMPLETED)
    if completed >= TIGHTEN_MIN_TASKS and elites:
        space = tighten_bounds(skill, elites)
    flagged = _top_quartile({k: v for k, v in report.defined().items() if k in space})
    if flagged:
        space = SearchSpace({n: replace(s, sensitive=s.sensitive or n in flagged) for n, s in space.params.items()})
    initial = space.clip(skill.initial_config.params)
    return replace(skill, version=skill.version + 1, search_space=space, initial_config=initial,
                   domain_knowledge=tuple(knowledge))


def skill_compose(a: Skill, b: Skill) -> Skill:
    """Joint skill over both parameter sets (names keep their stage prefixes)."""
    if a.name == b.name:
        raise SkillError("cannot compose a skill with itself", "name")
    clash = set(a.search_space.names) & set(b.search_space.names)
    if clash:
        raise SkillError(f"both skills tune {sorted(clash)}", "requirement.search_space")
    prim_a = {p.metric: p for p in a.north_star.primary}
    prim_b = {p.metric: p for p in b.north_star.primary}
    guard_a = {g.metric: g for g in a.north_star.guardrails}
    guard_b = {g.metric: g for g in b.north_star.guardrails}
    conflict = (set(prim_a) & set(guard_b)) | (set(prim_b) & set(guard_a))
    if conflict:
        raise SkillError(f"metric(s) {sorted(conflict)} are primary in one skill and guardrail in the other",
                         "north_star")
    primary = dict(prim_a)
    for m, p in prim_b.items():
        if m in primary and primary[m].direction != p.direction:
            raise SkillError(f"primary metric {m} has opposite directions", "north_star.primary")
        primary.setdefault(m, p)
    guards = dict(guard_a)
    for m, g in guard_b.items():
        if m not in guards:
            guards[m] = g
            continue
        h = guards[m]
        if h.direction != g.direction:
            raise SkillError(f"guardrail {m} has opposite directions", "north_star.guardrails")
        stricter = max(h.baseline, g.baseline) if g.direction == "maximize" else min(h.baseline, g.baseline)
        guards[m] = Guardrail(m, stricter, g.direction)
    tools = {t.name: t for t in (*a.tools, *b.tools)}
    return Skill(
        name=f"{a.name}+{b.name}",
        version=1,
        task_context=f"{a.task_context.strip()}\n\n{b.task_context.strip()}".strip(),
        search_space=SearchSpace({**a.search_space.params, **b.search_space.params}),
        north_star=NorthStar(tuple(primary[m] for m in sorted(primary)), tuple(guards[m] for m in sorted(guards))),
        initial_config=SystemConfig({**a.initial_config.params, **b.initial_config.params}),
        domain_knowledge=a.domain_knowledge + b.domain_knowledge,
        tools=tuple(tools[n] for n in sorted(tools)),
        output_schema=a.output_schema,
        infra_constraints="\n".join(x for x in (a.infra_constraints, b.infra_constraints) if x),
        original_bounds={**a.original_bounds, **b.original_bounds},
    )
