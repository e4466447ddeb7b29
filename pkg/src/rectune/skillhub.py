"""Versioned skill files: search space, north star, knowledge, tools, prompts."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import SkillError
from .simpipeline import NorthStar, SystemConfig
from .storage import atomic_write_text, dumps

RELATIONS = ("<=", ">=", "monotone_up_hurts", "monotone_down_hurts")
KINDS = ("continuous", "integer")
SCALES = ("linear", "log")


@dataclass(frozen=True)
class ParamSpec:
    lower: float
    upper: float
    kind: str = "continuous"
    scale: str = "linear"
    sensitive: bool = False

    def check(self, name: str) -> None:
        path = f"requirement.search_space.{name}"
        if self.kind not in KINDS:
            raise SkillError(f"unknown kind {self.kind!r}", path)
        if self.scale not in SCALES:
            raise SkillError(f"unknown scale {self.scale!r}", path)
        if not self.lower < self.upper:
            raise SkillError(f"lower bound {self.lower} must be < upper bound {self.upper}", path)
        if self.scale == "log" and self.lower <= 0:
            raise SkillError("log-scale parameters need lower > 0", path)
        if self.kind == "integer" and (self.lower != int(self.lower) or self.upper != int(self.upper)):
            raise SkillError("integer parameters need integral bounds", path)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        if not self.lower <= value <= self.upper:
            return False
        return self.kind != "integer" or value == int(value)

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper, "kind": self.kind,
                "scale": self.scale, "sensitive": self.sensitive}


@dataclass(frozen=True)
class SearchSpace:
    params: Mapping[str, ParamSpec]

    def __post_init__(self):
        object.__setattr__(self, "params", dict(sorted(self.params.items())))
        for name, spec in self.params.items():
            spec.check(name)

    @property
    def names(self) -> list[str]:
        return list(self.params)

    def __getitem__(self, name) -> ParamSpec:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def validate(self, config: SystemConfig, path: str = "config") -> None:
        """Raise SkillError naming the first offending parameter."""
        for name in config:
            if name not in self.params:
                raise SkillError(f"parameter {name!r} is not in the search space", f"{path}.{name}")
        for name, spec in self.params.items():
            if name not in config:
                raise SkillError(f"parameter {name!r} is missing", f"{path}.{name}")
            if not spec.contains(config[name]):
                raise SkillError(f"value {config[name]:g} outside [{spec.lower:g}, {spec.upper:g}]"
                                 + (" or not integral" if spec.kind == "integer" else ""), f"{path}.{name}")

    def clip(self, values: Mapping[str, float]) -> SystemConfig:
        out = {}
        for name, spec in self.params.items():
            v = min(max(values[name], spec.lower), spec.upper)
            if spec.kind == "integer":
                v = float(min(max(round(v), spec.lower), spec.upper))
            out[name] = v
        return SystemConfig(out)

    def relative_linf(self, a: Mapping[str, float], b: Mapping[str, float]) -> float:
        """Max over parameters of |a - b| / range."""
        return max((abs(a[n] - b[n]) / s.width for n, s in self.params.items()), default=0.0)

    def to_dict(self):
        return {k: v.to_dict() for k, v in self.params.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: ParamSpec(**v) for k, v in d.items()})


@dataclass(frozen=True)
class Rule:
    """Machine-checkable knowledge.

    ``<=``/``>=``: the parameter must satisfy ``value REL threshold``.
    ``monotone_up_hurts``: moving above ``threshold`` hurts ``metric``, so
    values above it are refused; ``monotone_down_hurts`` mirrors it.
    """

    parameter: str
    relation: str
    threshold: float
    metric: str | None = None

    def violated_by(self, config: Mapping[str, float]) -> bool:
        v = config[self.parameter]
        if self.relation in ("<=", "monotone_up_hurts"):
            return v > self.threshold
        return v < self.threshold

    def to_dict(self):
        return {"parameter": self.parameter, "relation": self.relation,
                "threshold": self.threshold, "metric": self.metric}


@dataclass(frozen=True)
class KnowledgeEntry:
    text: str
    rule: Rule | None = None
    provenance: str = "authored"
    source_tasks: tuple[str, ...] = ()
    created_at: str = ""
    confidence: float = 1.0

    def to_dict(self):
        return {"text": self.text, "rule": self.rule.to_dict() if self.rule else None,
                "provenance": self.provenance, "source_tasks": list(self.source_tasks),
                "created_at": self.created_at, "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rule"] = Rule(**d["rule"]) if d.get("rule") else None
        d["source_tasks"] = tuple(d.get("source_tasks", ()))
        return cls(**d)


@dataclass(frozen=True)
class Tool:
    name: str
    endpoint: str
    description: str = ""

    def to_dict(self):
        return {"name": self.name, "endpoint": self.endpoint, "description": self.description}


@dataclass(frozen=True)
class Skill:
    name: str
    version: int
    task_context: str
    search_space: SearchSpace
    north_star: NorthStar
    initial_config: SystemConfig
    domain_knowledge: tuple[KnowledgeEntry, ...] = ()
    tools: tuple[Tool, ...] = ()
    output_schema: str = "config-proposals/v1"
    infra_constraints: str = ""
    original_bounds: Mapping[str, tuple[float, float]] | None = None

    def __post_init__(self):
        if self.original_bounds is None:
            object.__setattr__(self, "original_bounds",
                               {k: (v.lower, v.upper) for k, v in self.search_space.params.items()})
        validate_skill(self)

    @property
    def sensitive_params(self) -> list[str]:
        return [n for n, s in self.search_space.params.items() if s.sensitive]

    def rules(self) -> list[Rule]:
        return [k.rule for k in self.domain_knowledge if k.rule is not None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "task_context": self.task_context,
            "requirement": {
                "search_space": self.search_space.to_dict(),
                "output_schema": self.output_schema,
                "infra_constraints": self.infra_constraints,
                "original_bounds": {k: list(v) for k, v in sorted(self.original_bounds.items())},
            },
            "north_star": self.north_star.to_dict(),
            "initial_config": self.initial_config.params,
            "domain_knowledge": [k.to_dict() for k in self.domain_knowledge],
            "tools": [t.to_dict() for t in self.tools],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Skill":
        try:
            req = d["requirement"]
            original = req.get("original_bounds")
            return cls(
                name=d["name"],
                version=int(d.get("version", 1)),
                task_context=d.get("task_context", ""),
                search_space=SearchSpace.from_dict(req["search_space"]),
                north_star=NorthStar.from_dict(d["north_star"]),
                initial_config=SystemConfig(d["initial_config"]),
                domain_knowledge=tuple(KnowledgeEntry.from_dict(k) for k in d.get("domain_knowledge", ())),
                tools=tuple(Tool(**t) for t in d.get("tools", ())),
                output_schema=req.get("output_schema", "config-proposals/v1"),
                infra_constraints=req.get("infra_constraints", ""),
                original_bounds={k: tuple(v) for k, v in original.items()} if original else None,
            )
        except KeyError as exc:
            raise SkillError(f"missing required field {exc.args[0]!r}", exc.args[0]) from None
        except TypeError as exc:
            raise SkillError(f"schema violation: {exc}") from None

    def evolve(self, **changes) -> "Skill":
        return replace(self, **changes)


def validate_skill(skill: Skill, known_metrics: Iterable[str] | None = None) -> None:
    if not re.fullmatch(r"[A-Za-z0-9_.+-]+", skill.name):
        raise SkillError(f"invalid skill name {skill.name!r}", "name")
    if skill.version < 1:
        raise SkillError("version must be >= 1", "version")
    skill.search_space.validate(skill.initial_config, path="initial_config")
    for name, (lo, hi) in skill.original_bounds.items():
        spec = skill.search_space.params.get(name)
        if spec is None:
            raise SkillError("original bounds reference unknown parameter", f"requirement.original_bounds.{name}")
        if spec.lower < lo or spec.upper > hi:
            raise SkillError("bounds wider than the original bounds", f"requirement.search_space.{name}")
    metrics = set(skill.north_star.metric_names)
    if known_metrics is not None:
        unknown = metrics - set(known_metrics)
        if unknown:
            raise SkillError(f"unknown metric(s) {sorted(unknown)}", "north_star")
    for i, entry in enumerate(skill.domain_knowledge):
        path = f"domain_knowledge[{i}]"
        if entry.provenance not in ("authored", "learned"):
            raise SkillError(f"unknown provenance {entry.provenance!r}", path)
        if entry.provenance == "learned" and not entry.source_tasks:
            raise SkillError("learned knowledge needs source task ids", path)
        if not 0.0 <= entry.confidence <= 1.0:
            raise SkillError("confidence must lie in [0, 1]", path)
        rule = entry.rule
        if rule is None:
            continue
        if rule.relation not in RELATIONS:
            raise SkillError(f"unknown relation {rule.relation!r}", f"{path}.rule.relation")
        if rule.parameter not in skill.search_space:
            raise SkillError(f"rule references unknown parameter {rule.parameter!r}", f"{path}.rule.parameter")
        if rule.metric is not None and rule.metric not in metrics:
            raise SkillError(f"rule references unknown metric {rule.metric!r}", f"{path}.rule.metric")


def skill_path(root, name: str, version: int) -> Path:
    return Path(root) / name / f"v{version}.json"


def save_skill(skill: Skill, path) -> None:
    atomic_write_text(path, dumps(skill.to_dict()))


def load_skill(path, known_metrics: Iterable[str] | None = None) -> Skill:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SkillError(f"invalid JSON: {exc}", str(path)) from None
    skill = Skill.from_dict(data)
    if known_metrics is not None:
        validate_skill(skill, known_metrics)
    return skill


def skill_versions(root, name: str) -> list[int]:
    d = Path(root) / name
    if not d.is_dir():
        return []
    return sorted(int(p.stem[1:]) for p in d.glob("v*.json") if p.stem[1:].isdigit())


def latest_skill(root, name: str) -> Skill:
    versions = skill_versions(root, name)
    if not versions:
        raise SkillError(f"no versions of skill {name!r} under {root}")
    return load_skill(skill_path(root, name, versions[-1]))


def publish_skill(root, skill: Skill) -> Path:
    """Write a new version file; refuses to overwrite or go backwards."""
    versions = skill_versions(root, skill.name)
    if versions and skill.version <= versions[-1]:
        raise SkillError(f"version {skill.version} is not newer than v{versions[-1]}", "version")
    path = skill_path(root, skill.name, skill.version)
    save_skill(skill, path)
    return path


# ---------------------------------------------------------------- prompts

def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _config_line(params: Mapping[str, float]) -> str:
    return ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(params.items()))


def _knowledge_lines(skill: Skill) -> list[str]:
    if not skill.domain_knowledge:
        return ["(none recorded)"]
    lines = []
    for i, k in enumerate(skill.domain_knowledge, 1):
        line = f"{i}. {k.text}"
        if k.rule is not None:
            line += f" [rule: {k.rule.parameter} {k.rule.relation} {_fmt(k.rule.threshold)}]"
        lines.append(line + f" (provenance: {k.provenance}, confidence {k.confidence:.2f})")
    return lines


HISTORY_CAP = 10


def render_actor_prompt(skill: Skill, elites: Sequence, batch_size: int,
                        extra_args: Mapping[str, str] | None = None,
                        current: SystemConfig | None = None) -> str:
    """Structured proposal prompt.

    ``elites`` are TaskRecords (anything with ``id``, ``config``,
    ``proposed_time``, ``utility`` and ``report_deltas()``).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    current = current or skill.initial_config
    out = [f"# Skill: {skill.name} (v{skill.version})", "", "## Task context", skill.task_context.strip() or "(none)", ""]
    out += ["## Tunable parameters", "| parameter | lower | upper | kind | scale | sensitive | current |",
            "|---|---|---|---|---|---|---|"]
    for name, s in skill.search_space.params.items():
        out.append(f"| {name} | {_fmt(s.lower)} | {_fmt(s.upper)} | {s.kind} | {s.scale} | "
                   f"{'yes' if s.sensitive else 'no'} | {_fmt(current[name])} |")
    if skill.infra_constraints:
        out += ["", "Infrastructure constraints: " + skill.infra_constraints.strip()]
    out += ["", "## North-star metrics"]
    out += [f"- primary: {p.metric} ({p.direction})" for p in skill.north_star.primary]
    out += [f"- guardrail: {g.metric} must stay {'>=' if g.sign > 0 else '<='} {_fmt(g.baseline)}"
            for g in skill.north_star.guardrails]
    out += ["", "## Domain knowledge", *_knowledge_lines(skill), "", "## Experiment history (newest first)"]
    history = sorted(elites, key=lambda r: (r.proposed_time, r.id), reverse=True)[:HISTORY_CAP]
    if not history:
        out.append("no prior experiments")
    for r in history:
        deltas = r.report_deltas()
        delta_txt = ", ".join(f"{m}: {'undefined' if d is None else f'{d:+.3f}%'}" for m, d in sorted(deltas.items()))
        out.append(f"- {r.id}: {_config_line(json.loads(r.config))} | {delta_txt} | utility {_fmt(r.utility)}")
    out += ["", "## Output instructions",
            f"Propose exactly {batch_size} new configurations. Focus on the sensitive parameters, "
            "stay inside the bounds and obey every rule above.",
            f"Reply with a JSON array of length {batch_size}; each element is an object "
            '{"config": {<parameter>: <number>, ...}, "explanation": "<why this shift should help>"}.',
            "Every tunable parameter must appear in every config."]
    if extra_args:
        out += ["", "## Additional arguments"]
        out += [f"{k}: {v}" for k, v in sorted(extra_args.items())]
    return "\n".join(out) + "\n"


def render_critic_prompt(skill: Skill, proposals: Sequence, history_digest: Sequence[str] = ()) -> str:
    """Review prompt for the optional model-backed critic pass."""
    out = [f"# Review proposals for skill {skill.name} (v{skill.version})", "", "## Task context",
           skill.task_context.strip() or "(none)", "", "## Bounds"]
    out += [f"- {n}: [{_fmt(s.lower)}, {_fmt(s.upper)}] {s.kind}" for n, s in skill.search_space.params.items()]
    out += ["", "## Guardrails"]
    out += [f"- {g.metric} {'>=' if g.sign > 0 else '<='} {_fmt(g.baseline)}" for g in skill.north_star.guardrails] or ["- (none)"]
    out += ["", "## Domain knowledge", *_knowledge_lines(skill), "", "## Proposals"]
    for i, p in enumerate(proposals):
        out.append(f"{i}. config: {p.config.canonical()}")
        out.append(f"   explanation: {p.explanation}")
    if history_digest:
        out += ["", "## Known historical failures"]
        out += [f"- {line}" for line in history_digest]
    out += ["", "## Checks",
            "For each proposal check: output format, system guardrails, instruction constraints, "
            "and similarity to the known failures.",
            'Reply with a JSON object {"reject": [{"index": <int>, "reason": "<text>"}], "comments": "<text>"}.']
    return "\n".join(out) + "\n"
