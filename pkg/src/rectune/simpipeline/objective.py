"""North-star metrics, guardrails and the constrained utility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..errors import MetricError, SkillError

DIRECTIONS = {"maximize": 1.0, "minimize": -1.0}


@dataclass(frozen=True)
class PrimaryMetric:
    metric: str
    direction: str = "maximize"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SkillError(f"unknown direction {self.direction!r}", f"north_star.primary.{self.metric}")

    @property
    def sign(self) -> float:
        return DIRECTIONS[self.direction]


@dataclass(frozen=True)
class Guardrail:
    """Feasibility constraint: metric >= baseline (``minimize``: metric <= baseline)."""

    metric: str
    baseline: float = 0.0
    direction: str = "maximize"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise SkillError(f"unknown direction {self.direction!r}", f"north_star.guardrails.{self.metric}")

    @property
    def sign(self) -> float:
        return DIRECTIONS[self.direction]

    def satisfied(self, value: float) -> bool:
        return self.sign * value >= self.sign * self.baseline


@dataclass(frozen=True)
class NorthStar:
    primary: tuple[PrimaryMetric, ...]
    guardrails: tuple[Guardrail, ...] = ()

    def __post_init__(self):
        if not self.primary:
            raise SkillError("north_star needs at least one primary metric", "north_star.primary")
        overlap = {p.metric for p in self.primary} & {g.metric for g in self.guardrails}
        if overlap:
            raise SkillError(f"metrics both primary and guardrail: {sorted(overlap)}", "north_star")

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(p.metric for p in self.primary) + tuple(g.metric for g in self.guardrails)

    @property
    def directions(self) -> dict[str, float]:
        d = {p.metric: p.sign for p in self.primary}
        d.update({g.metric: g.sign for g in self.guardrails})
        return d

    def to_dict(self) -> dict:
        return {
            "primary": [{"metric": p.metric, "direction": p.direction} for p in self.primary],
            "guardrails": [{"metric": g.metric, "baseline": g.baseline, "direction": g.direction}
                           for g in self.guardrails],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NorthStar":
        return cls(tuple(PrimaryMetric(**p) for p in d.get("primary", ())),
                   tuple(Guardrail(**g) for g in d.get("guardrails", ())))


@dataclass(frozen=True)
class Utility:
    feasible: bool
    value: float
    raw_value: float = field(default=math.nan)
    violations: tuple[str, ...] = ()


def _values(metrics) -> Mapping[str, float]:
    # MetricReport -> relative deltas; MetricVector -> raw values
    if hasattr(metrics, "deltas"):
        return metrics.deltas()
    if hasattr(metrics, "values") and not callable(metrics.values):
        return metrics.values
    return metrics


def utility(metrics, north_star: NorthStar, cost: float | None = None,
            c_max: float | None = None) -> Utility:
    """Sum of direction-adjusted primary metrics, -inf when any constraint fails.

    ``metrics`` is a MetricReport (relative deltas, in percent, are used and
    guardrail baselines are read as minimum deltas), a MetricVector or a plain
    mapping of raw values. ``raw_value`` keeps the unconstrained sum.
    """
    values = _values(metrics)
    for name in north_star.metric_names:
        if name not in values:
            raise MetricError(f"metric {name!r} required by north star is missing", name)
        if values[name] is None:
            raise MetricError(f"metric {name!r} is undefined", name)
    raw = math.fsum(p.sign * values[p.metric] for p in north_star.primary)
    violations = tuple(g.metric for g in north_star.guardrails if not g.satisfied(values[g.metric]))
    if cost is not None and c_max is not None and cost > c_max:
        violations += ("cost",)
    feasible = not violations
    return Utility(feasible, raw if feasible else -math.inf, raw, violations)


def direction_adjusted(values: Mapping[str, float], directions: Mapping[str, float],
                       names: Sequence[str]) -> list[float]:
    return [directions[n] * values[n] for n in names]
