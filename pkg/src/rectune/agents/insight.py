"""Insight agent: parameter sensitivity and learned patterns."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..memory import COMPLETED, TaskRecord
from ..skillhub import KnowledgeEntry, Rule, Skill

MIN_TASKS = 3
PATTERN_MIN_CORR = 0.5
PATTERN_MIN_N = 5


@dataclass(frozen=True)
class ParamInsight:
    sensitivity: float | None
    n: int
    trend: int

    def to_dict(self):
        return {"sensitivity": self.sensitivity, "n": self.n, "trend": self.trend}


@dataclass(frozen=True)
class InsightReport:
    scope: str
    skills: tuple[str, ...]
    params: Mapping[str, ParamInsight] = field(default_factory=dict)
    patterns: tuple[KnowledgeEntry, ...] = ()

    def to_dict(self):
        return {
            "scope": self.scope,
            "skills": list(self.skills),
            "params": {k: v.to_dict() for k, v in sorted(self.params.items())},
            "patterns": [p.to_dict() for p in self.patterns],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["scope"], tuple(d["skills"]),
                   {k: ParamInsight(**v) for k, v in d["params"].items()},
                   tuple(KnowledgeEntry.from_dict(p) for p in d["patterns"]))

    def defined(self) -> dict[str, float]:
        return {k: v.sensitivity for k, v in self.params.items() if v.sensitivity is not None}


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


def insight_self_learn(skill: Skill, records: Sequence[TaskRecord], now: str = "") -> InsightReport:
    """Correlate normalized parameter shifts with utility change vs control."""
    done = [r for r in records if r.status == COMPLETED and r.results is not None]
    if len(done) < MIN_TASKS:
        return InsightReport("self", (skill.name,))
    gain = [r.results.raw_utility - r.results.control_utility for r in done]
    params = {}
    patterns = []
    for name, (lo, hi) in sorted(skill.original_bounds.items()):
        rows = [(r.params[name], g, r) for r, g in zip(done, gain) if name in r.params]
        base = skill.initial_config[name]
        shifts = [(v - base) / (hi - lo) for v, _, _ in rows]
        n = sum(1 for s in shifts if s != 0.0)
        corr = pearson(shifts, [g for _, g, _ in rows]) if n >= MIN_TASKS else None
        trend = 0 if corr is None or corr == 0 else (1 if corr > 0 else -1)
        params[name] = ParamInsight(None if corr is None else abs(corr), len(rows), trend)
        if corr is None or abs(corr) < PATTERN_MIN_CORR or len(rows) < PATTERN_MIN_N:
            continue
        feasible = [v for v, _, r in rows if r.feasible] or [v for v, _, _ in rows]
        if corr < 0:
            rule = Rule(name, "monotone_up_hurts", max(feasible))
            text = f"increasing {name} correlates with decreasing utility (r={corr:.2f}, n={len(rows)})"
        else:
            rule = Rule(name, "monotone_down_hurts", min(feasible))
            text = f"decreasing {name} correlates with decreasing utility (r={corr:.2f}, n={len(rows)})"
        patterns.append(KnowledgeEntry(text, rule, "learned", tuple(sorted(r.id for _, _, r in rows)),
                                       now, round(abs(corr), 6)))
    return InsightReport("self", (skill.name,), params, tuple(patterns))


def reduce_reports(reports: Sequence[InsightReport]) -> InsightReport:
    """Sample-weighted merge of per-skill reports; independent of input order."""
    reports = sorted(reports, key=lambda r: r.skills)
    skills = tuple(sorted(s for r in reports for s in r.skills))
    if len(reports) == 1:
        only = reports[0]
        return InsightReport("cross", skills, dict(only.params), only.patterns)
    acc = defaultdict(list)
    for rep in reports:
        for name, pi in rep.params.items():
            acc[name].append(pi)
    params = {}
    for name, items in sorted(acc.items()):
        defined = [p for p in items if p.sensitivity is not None]
        total = sum(p.n for p in items)
        if defined and sum(p.n for p in defined) > 0:
            w = sum(p.n for p in defined)
            sens = math.fsum(p.sensitivity * p.n for p in defined) / w
            votes = sum(p.trend for p in defined)
            trend = (votes > 0) - (votes < 0)
        else:
            sens, trend = None, 0
        params[name] = ParamInsight(sens, total, trend)
    best = {}
    for rep in reports:
        for k in rep.patterns:
            key = (k.rule.parameter, k.rule.relation) if k.rule else (k.text, None)
            prev = best.get(key)
            if prev is None or (k.confidence, k.source_tasks) > (prev.confidence, prev.source_tasks):
                best[key] = k
    patterns = tuple(best[k] for k in sorted(best, key=lambda t: (t[0], t[1] or "")))
    return InsightReport("cross", skills, params, patterns)


def insight_cross_learn(corpora: Sequence[tuple[Skill, Sequence[TaskRecord]]], workers: int = 4,
                        now: str = "") -> InsightReport:
    if not corpora:
        raise ValueError("cross-learning needs at least one skill memory")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        mapped = list(pool.map(lambda c: insight_self_learn(c[0], c[1], now), corpora))
    return reduce_reports(mapped)
