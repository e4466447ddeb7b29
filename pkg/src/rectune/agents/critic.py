"""Critic agent: deterministic rule pipeline over actor proposals."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from ..memory import APPROVED, COMPLETED, RUNNING, TaskRecord
from ..skillhub import Skill, render_critic_prompt
from .actor import ProposedCandidate

log = logging.getLogger(__name__)

REASONS = ("schema", "bounds", "rule", "duplicate", "failure_proximity", "surplus")
DUPLICATE_TOL = 1e-6
FAILURE_RADIUS = 0.05


@dataclass(frozen=True)
class Decision:
    index: int
    approved: bool
    reason: str | None = None
    message: str = ""

    def to_dict(self):
        return {"approved": self.approved, "reason": self.reason, "message": self.message}


@dataclass(frozen=True)
class CriticVerdict:
    decisions: tuple[Decision, ...]
    approved: tuple[int, ...]
    comments: str

    def counts(self) -> Counter:
        return Counter(d.reason for d in self.decisions if not d.approved)


def _numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check(p: ProposedCandidate, skill: Skill, cost_fn, c_max):
    space = skill.search_space
    params = p.params
    if not isinstance(params, dict):
        return "schema", "config is not an object"
    missing = sorted(set(space.names) - set(params))
    extra = sorted(set(params) - set(space.names))
    if missing or extra:
        return "schema", f"missing {missing}, unexpected {extra}"
    bad = [n for n in space.names if not _numeric(params[n])]
    if bad:
        return "schema", f"non-numeric values for {bad}"
    for n, s in space.params.items():
        if not s.contains(params[n]):
            return "bounds", f"{n}={params[n]} outside [{s.lower:g}, {s.upper:g}]" + (
                " or not integral" if s.kind == "integer" else "")
    for rule in skill.rules():
        if rule.violated_by(params):
            return "rule", f"violates {rule.parameter} {rule.relation} {rule.threshold:g}"
    if cost_fn is not None and c_max is not None:
        cost = cost_fn(p.config)
        if cost > c_max:
            return "rule", f"cost {cost:g} exceeds budget {c_max:g}"
    return None, ""


def _history_params(records, space):
    out = []
    for r in records:
        params = r.params
        if all(n in params for n in space.names):
            out.append((r, params))
    return out


def critic_review(proposals: Sequence[ProposedCandidate], skill: Skill, history: Sequence[TaskRecord],
                  keep: int, cost_fn: Callable | None = None, c_max: float | None = None,
                  duplicate_tol: float = DUPLICATE_TOL, failure_radius: float = FAILURE_RADIUS,
                  llm_client=None) -> CriticVerdict:
    """Check, rank and truncate proposals.

    ``history`` is the memory snapshot: every task record of the skill.
    """
    if keep < 1:
        raise ValueError("keep must be >= 1")
    space = skill.search_space
    past = _history_params([r for r in history if r.status in (APPROVED, RUNNING, COMPLETED)], space)
    failures = [params for r, params in past if r.status == COMPLETED and r.results and r.results.violations
                and any(v != "cost" for v in r.results.violations)]
    done = [(r, params) for r, params in past if r.status == COMPLETED and r.feasible]
    best = min(done, key=lambda rp: (-rp[0].utility, rp[0].id))[1] if done else None

    decisions: dict[int, Decision] = {}
    seen = [params for _, params in past]
    survivors = []
    for i, p in enumerate(proposals):
        reason, msg = _check(p, skill, cost_fn, c_max)
        if reason is None:
            near = min((space.relative_linf(p.params, q) for q in seen), default=math.inf)
            if near <= duplicate_tol:
                reason, msg = "duplicate", f"within {near:.2g} of an earlier configuration"
        if reason is None:
            near = min((space.relative_linf(p.params, q) for q in failures), default=math.inf)
            if near <= failure_radius:
                reason, msg = "failure_proximity", f"within {near:.3g} of a guardrail-violating configuration"
        if reason is not None:
            decisions[i] = Decision(i, False, reason, msg)
            continue
        seen.append(dict(p.params))
        survivors.append(i)

    if llm_client is not None and survivors:
        for i, msg in _model_rejections(llm_client, skill, proposals, survivors, failures):
            decisions[i] = Decision(i, False, "rule", f"model critic: {msg}")
            survivors.remove(i)

    if best is not None:
        survivors.sort(key=lambda i: space.relative_linf(proposals[i].params, best))
    for i in survivors[keep:]:
        decisions[i] = Decision(i, False, "surplus", f"outside the top {keep} proposals")
    approved = tuple(survivors[:keep])
    for rank, i in enumerate(approved):
        decisions[i] = Decision(i, True, None, f"approved, rank {rank + 1}")

    ordered = tuple(decisions[i] for i in range(len(proposals)))
    counts = Counter(d.reason for d in ordered if not d.approved)
    comments = f"{len(approved)} of {len(proposals)} approved"
    if counts:
        comments += "; rejected: " + ", ".join(f"{r}={counts[r]}" for r in REASONS if counts[r])
    return CriticVerdict(ordered, approved, comments)


def _model_rejections(client, skill, proposals, survivors, failures):
    """Optional model pass; it can only add rejections. Errors are logged and ignored."""
    from ..llmclient import ChatRequest, extract_json_object

    digest = [json.dumps(f, sort_keys=True) for f in failures[:10]]
    prompt = render_critic_prompt(skill, [proposals[i] for i in survivors], digest)
    try:
        reply = extract_json_object(client.complete(ChatRequest(messages=(("user", prompt),))).text)
    except Exception as exc:
        log.warning("model critic unavailable, keeping rule-based verdict: %s", exc)
        return []
    out = []
    for item in reply.get("reject", []):
        try:
            local = int(item["index"])
        except (KeyError, TypeError, ValueError):
            continue
        if 0 <= local < len(survivors) and survivors[local] not in [i for i, _ in out]:
            out.append((survivors[local], str(item.get("reason", "rejected"))))
    return out
