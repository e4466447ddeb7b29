"""Scenario definitions and deterministic request generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import ScenarioError

KNOWN_METRICS = ("engagement1", "engagement2", "diversity")
HEAD_TARGETS = ("click", "heart", "none")

# stream tags mixed into the SeedSequence entropy
_CATALOG_STREAM = 0
_POOL_STREAM = 1
_FEEDBACK_STREAM = 2


@dataclass(frozen=True)
class HeadSpec:
    name: str
    target: str = "click"
    noise: float = 0.2

    def __post_init__(self):
        if self.target not in HEAD_TARGETS:
            raise ScenarioError(f"head {self.name!r}: unknown target {self.target!r}")
        if self.noise < 0:
            raise ScenarioError(f"head {self.name!r}: noise must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to regenerate the simulated traffic bit-for-bit."""

    name: str = "default"
    seed: int = 7
    pool_size: int = 200
    num_topics: int = 8
    latent_dim: int = 4
    pre_heads: tuple[HeadSpec, ...] = (
        HeadSpec("click", "click", 0.25),
        HeadSpec("heart", "heart", 0.25),
        HeadSpec("fresh", "none", 0.0),
    )
    rank_heads: tuple[str, ...] = ("click", "heart", "fresh")
    rank_fidelity: float = 0.9
    cost_rank: float = 1.0
    cost_re: float = 10.0
    c_max: float = math.inf
    metrics: tuple[str, ...] = KNOWN_METRICS
    fixed_params: Mapping[str, float] = field(default_factory=dict)
    topic_spread: float = 1.0
    item_noise: float = 0.6
    click_bias: float = -0.5
    heart_bias: float = -1.0
    # heuristic actor: uniform-exploration probability, step as a fraction of range,
    # perturbation probability for non-sensitive parameters
    explore_prob: float = 0.25
    step_fraction: float = 0.1
    nonsensitive_prob: float = 0.3

    def __post_init__(self):
        if self.pool_size < 1:
            raise ScenarioError("degenerate scenario: pool_size must be >= 1")
        if self.num_topics < 1 or self.latent_dim < 1:
            raise ScenarioError("num_topics and latent_dim must be >= 1")
        if not 0.0 <= self.rank_fidelity <= 1.0:
            raise ScenarioError("rank_fidelity must lie in [0, 1]")
        names = [h.name for h in self.pre_heads]
        if len(set(names)) != len(names) or not names:
            raise ScenarioError("pre_heads must be a nonempty list of unique names")
        missing = set(self.rank_heads) - set(names)
        if missing or not self.rank_heads:
            raise ScenarioError(f"rank_heads must be a nonempty subset of pre_heads, extra: {sorted(missing)}")
        unknown = set(self.metrics) - set(KNOWN_METRICS)
        if unknown:
            raise ScenarioError(f"unknown metrics {sorted(unknown)}")
        for knob in ("explore_prob", "nonsensitive_prob"):
            if not 0.0 <= getattr(self, knob) <= 1.0:
                raise ScenarioError(f"{knob} must lie in [0, 1]")
        if self.step_fraction <= 0:
            raise ScenarioError("step_fraction must be > 0")
        object.__setattr__(self, "fixed_params", dict(sorted(self.fixed_params.items())))

    def __hash__(self):
        return hash(self.canonical())

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.canonical() == other.canonical()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["pre_heads"] = [asdict(h) for h in self.pre_heads]
        d["rank_heads"] = list(self.rank_heads)
        d["metrics"] = list(self.metrics)
        d["fixed_params"] = dict(self.fixed_params)
        if math.isinf(self.c_max):
            d["c_max"] = None
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Scenario":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ScenarioError(f"unknown scenario fields {sorted(unknown)}")
        if "pre_heads" in d:
            d["pre_heads"] = tuple(HeadSpec(**h) for h in d["pre_heads"])
        for key in ("rank_heads", "metrics"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("c_max", 0) is None:
            d["c_max"] = math.inf
        return cls(**d)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def pre_head_names(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.pre_heads)


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return Scenario.from_dict(data)
    except TypeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(scenario.canonical())


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True, eq=False)
class Item:
    item_id: int
    topic: int
    head_scores: Mapping[str, float]
    latent_utility: Mapping[str, np.ndarray] = field(repr=False)


@dataclass(frozen=True, eq=False)
class Request:
    """One simulated request: candidate pool plus the hidden user model.

    Arrays are indexed by item_id (item ids are 0..pool_size-1). Score
    matrices have one column per head, in scenario order.
    """

    request_id: int
    seed: int
    topics: np.ndarray
    pre_scores: np.ndarray
    rank_scores: np.ndarray
    pre_head_names: tuple[str, ...]
    rank_head_names: tuple[str, ...]
    user_pref: np.ndarray = field(repr=False)
    latent_click: np.ndarray = field(repr=False)
    latent_heart: np.ndarray = field(repr=False)
    click_appeal: np.ndarray = field(repr=False)
    heart_appeal: np.ndarray = field(repr=False)
    u_click: np.ndarray = field(repr=False)
    u_heart: np.ndarray = field(repr=False)

    @property
    def rng_key(self) -> tuple[int, int]:
        return (self.seed, self.request_id)

    @property
    def pool(self) -> list[Item]:
        items = []
        for i in range(len(self.topics)):
            scores = {f"pre.{h}": float(self.pre_scores[i, j]) for j, h in enumerate(self.pre_head_names)}
            scores.update({f"rank.{h}": float(self.rank_scores[i, j]) for j, h in enumerate(self.rank_head_names)})
            items.append(Item(i, int(self.topics[i]), scores,
                              {"click": self.latent_click[i], "heart": self.latent_heart[i]}))
        return items

    def fingerprint(self) -> bytes:
        """Byte serialization of everything observable about the request."""
        parts = [self.topics, self.pre_scores, self.rank_scores, self.user_pref,
                 self.latent_click, self.latent_heart, self.u_click, self.u_heart]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


@lru_cache(maxsize=64)
def _topic_centers(seed: int, num_topics: int, latent_dim: int) -> np.ndarray:
    return _rng(seed, _CATALOG_STREAM).standard_normal((num_topics, latent_dim))


@lru_cache(maxsize=8192)
def generate_request(scenario: Scenario, request_id: int) -> Request:
    """Materialize request ``request_id`` of ``scenario``; pure in (seed, request_id)."""
    if scenario.pool_size < 1:
        raise ScenarioError("degenerate scenario: empty candidate pool")
    if request_id < 0:
        raise ScenarioError("request_id must be >= 0")
    P, d = scenario.pool_size, scenario.latent_dim
    centers = _topic_centers(scenario.seed, scenario.num_topics, d) * scenario.topic_spread
    rng = _rng(scenario.seed, _POOL_STREAM, request_id)

    topics = rng.integers(0, scenario.num_topics, size=P)
    user_pref = rng.standard_normal(d) / math.sqrt(d)
    latent_click = centers[topics] + scenario.item_noise * rng.standard_normal((P, d))
    latent_heart = 0.5 * centers[topics] + scenario.item_noise * rng.standard_normal((P, d))
    click_appeal = _logistic(latent_click @ user_pref + scenario.click_bias)
    heart_appeal = _logistic(latent_heart @ user_pref + scenario.heart_bias)

    truth = {"click": click_appeal, "heart": heart_appeal}
    pre = np.empty((P, len(scenario.pre_heads)))
    for j, head in enumerate(scenario.pre_heads):
        if head.target == "none":
            pre[:, j] = rng.random(P)
        else:
            pre[:, j] = np.clip(truth[head.target] + head.noise * rng.standard_normal(P), 0.0, 1.0)

    phi = scenario.rank_fidelity
    names = scenario.pre_head_names
    rank = np.empty((P, len(scenario.rank_heads)))
    for j, name in enumerate(scenario.rank_heads):
        k = names.index(name)
        target = scenario.pre_heads[k].target
        exact = pre[:, k] if target == "none" else truth[target]
        rank[:, j] = (1.0 - phi) * pre[:, k] + phi * exact

    fb = _rng(scenario.seed, _FEEDBACK_STREAM, request_id).random((P, 2))

    arrays = [topics.astype(np.int64), pre, rank, user_pref, latent_click, latent_heart,
              click_appeal, heart_appeal, fb[:, 0].copy(), fb[:, 1].copy()]
    for a in arrays:
        a.setflags(write=False)
    return Request(request_id, scenario.seed, arrays[0], arrays[1], arrays[2], names,
                   tuple(scenario.rank_heads), *arrays[3:])
