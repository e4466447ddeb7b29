"""Actor agent: proposes candidate configurations."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, ProposalError
from ..simpipeline import SystemConfig
from ..skillhub import ParamSpec, Skill, render_actor_prompt

log = logging.getLogger(__name__)

EXPLORE_PROB = 0.25
STEP_FRACTION = 0.1
NONSENSITIVE_PROB = 0.3


@dataclass(frozen=True)
class ProposedCandidate:
    """A proposal as emitted; ``params`` may be malformed until the critic checks it."""

    params: Mapping[str, Any]
    explanation: str
    origin: str = "heuristic"
    parent: str | None = None

    def __post_init__(self):
        if not self.explanation.strip():
            raise ValueError("every proposal needs an explanation")

    @property
    def config(self) -> SystemConfig:
        return SystemConfig(self.params)

    def canonical(self) -> str:
        try:
            return self.config.canonical()
        except ConfigError:
            return json.dumps(self.params, sort_keys=True, separators=(",", ":"), default=str)


def _to_unit(spec: ParamSpec, v: float) -> float:
    if spec.scale == "log":
        return (math.log(v) - math.log(spec.lower)) / (math.log(spec.upper) - math.log(spec.lower))
    return (v - spec.lower) / spec.width


def _from_unit(spec: ParamSpec, u: float) -> float:
    if spec.scale == "log":
        return math.exp(math.log(spec.lower) + u * (math.log(spec.upper) - math.log(spec.lower)))
    return spec.lower + u * spec.width


def _finish(spec: ParamSpec, v: float) -> float:
    v = min(max(v, spec.lower), spec.upper)
    if spec.kind == "integer":
        v = float(min(max(round(v), spec.lower), spec.upper))
    return v


def _uniform(skill: Skill, rng) -> ProposedCandidate:
    params = {n: _finish(s, _from_unit(s, rng.random())) for n, s in skill.search_space.params.items()}
    return ProposedCandidate(params, "uniform exploration sample across the current search space")


def _perturb(skill: Skill, base: SystemConfig, base_name: str, rng,
             step: float, p_other: float) -> ProposedCandidate:
    space = skill.search_space.params
    names = list(space)
    chosen = [n for n in names if space[n].sensitive or rng.random() < p_other]
    if not chosen:
        chosen = [names[int(rng.integers(len(names)))]]
    params = {n: base[n] for n in names}
    moves = []
    for n in chosen:
        s = space[n]
        u = _to_unit(s, min(max(base[n], s.lower), s.upper)) + step * rng.standard_normal()
        params[n] = _finish(s, _from_unit(s, min(max(u, 0.0), 1.0)))
        if params[n] != base[n]:
            moves.append(f"{'raise' if params[n] > base[n] else 'lower'} {n} {base[n]:.4g}->{params[n]:.4g}")
    why = f"local step from {base_name}: " + ("; ".join(moves) if moves else "no effective change after rounding")
    return ProposedCandidate(params, why, parent=base_name)


def heuristic_propose(skill: Skill, elites: Sequence, batch: int, seed: int,
                      explore_prob: float = EXPLORE_PROB, step: float = STEP_FRACTION,
                      nonsensitive_prob: float = NONSENSITIVE_PROB) -> list[ProposedCandidate]:
    rng = np.random.default_rng(seed)
    bases = [(e.system_config, e.id) for e in elites] or [(skill.initial_config, "initial config")]
    out = []
    for slot in range(batch):
        if rng.random() < explore_prob:
            out.append(_uniform(skill, rng))
        else:
            cfg, name = bases[slot % len(bases)]
            out.append(_perturb(skill, cfg, name, rng, step, nonsensitive_prob))
    return out


def llm_propose(skill: Skill, elites: Sequence, batch: int, client, seed: int,
                extra_args: Mapping[str, str] | None = None, **knobs) -> list[ProposedCandidate]:
    from ..llmclient import ChatRequest, extract_json_array

    prompt = render_actor_prompt(skill, elites, batch, extra_args)
    try:
        response = client.complete(ChatRequest(messages=(("user", prompt),)))
    except Exception as exc:
        raise ProposalError(f"model call failed: {exc}") from exc
    try:
        parsed = extract_json_array(response.text)
    except ValueError as exc:
        raise ProposalError(f"could not parse proposals: {exc}", response.text) from exc
    out = [ProposedCandidate(c["config"], c["explanation"], origin="llm") for c in parsed.candidates[:batch]]
    if len(out) < batch:
        log.info("model returned %d of %d proposals; padding heuristically", len(out), batch)
        out += heuristic_propose(skill, elites, batch - len(out), seed, **knobs)
    return out


def scenario_knobs(scenario) -> dict:
    """Heuristic-actor constants carried by a scenario."""
    return {"explore_prob": scenario.explore_prob, "step": scenario.step_fraction,
            "nonsensitive_prob": scenario.nonsensitive_prob}


def actor_propose(skill: Skill, elites: Sequence, batch: int, backend: str = "heuristic",
                  seed: int = 0, client=None, extra_args=None, **knobs) -> list[ProposedCandidate]:
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if backend == "heuristic":
        return heuristic_propose(skill, elites, batch, seed, **knobs)
    if backend == "llm":
        if client is None:
            raise ProposalError("llm backend selected but no client configured")
        return llm_propose(skill, elites, batch, client, seed, extra_args, **knobs)
    raise ValueError(f"unknown backend {backend!r}")
