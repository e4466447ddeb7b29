"""The three ranking stages, user feedback and per-list metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, MetricError
from . import kernels
from .config import SystemConfig
from .scenario import Request, Scenario


@dataclass(frozen=True, eq=False)
class RankedList:
    item_ids: tuple[int, ...]
    scores: tuple[float, ...]
    stage: str

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.item_ids, self.scores))

    def __len__(self):
        return len(self.item_ids)

    def __eq__(self, other):
        return (isinstance(other, RankedList) and self.stage == other.stage
                and self.item_ids == other.item_ids and self.scores == other.scores)

    def __hash__(self):
        return hash((self.stage, self.item_ids, self.scores))


@dataclass(frozen=True)
class Feedback:
    request_id: int
    clicked: tuple[bool, ...]
    hearted: tuple[bool, ...]


@dataclass(frozen=True)
class MetricVector:
    values: dict

    def __getitem__(self, name):
        return self.values[name]


def _int_param(config, name, minimum):
    value = config[name]
    if value != int(value):
        raise ConfigError(f"{name} must be integral, got {value}", name)
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}", name)
    return int(value)


def _weights(config, stage, heads):
    return np.array([config[f"{stage}.w_{h}"] for h in heads], dtype=np.float64)


def effective_config(scenario: Scenario, config: SystemConfig) -> SystemConfig:
    """Overlay ``config`` on the scenario's fixed (non-tuned) parameters."""
    return config.merged(scenario.fixed_params)


def run_pre(request: Request, config: SystemConfig) -> RankedList:
    w = _weights(config, "pre", request.pre_head_names)
    k1 = _int_param(config, "pre.K1", 1)
    ids, scores = kernels.fuse_topk(request.pre_scores, w, np.arange(len(request.topics)), k1)
    return RankedList(tuple(int(i) for i in ids), tuple(float(s) for s in scores), "pre")


def run_rank(c1: RankedList, request: Request, config: SystemConfig) -> RankedList:
    w = _weights(config, "rank", request.rank_head_names)
    k2 = _int_param(config, "rank.K2", 1)
    if "pre.K1" in config and k2 > config["pre.K1"]:
        raise ConfigError(f"rank.K2={k2} exceeds pre.K1={config['pre.K1']:g}", "rank.K2")
    ids, scores = kernels.fuse_topk(request.rank_scores, w, np.array(c1.item_ids, dtype=np.int64), k2)
    return RankedList(tuple(int(i) for i in ids), tuple(float(s) for s in scores), "rank")


def run_re(c2: RankedList, request: Request, config: SystemConfig) -> RankedList:
    penalty = config["re.diversity_penalty"]
    if penalty < 0:
        raise ConfigError("re.diversity_penalty must be >= 0", "re.diversity_penalty")
    cap = _int_param(config, "re.topic_cap", 1)
    n = config["re.N"]
    if n < 1:
        raise ConfigError("re.N must be >= 1", "re.N")
    n = _int_param(config, "re.N", 1)
    if "rank.K2" in config and n > config["rank.K2"]:
        raise ConfigError(f"re.N={n} exceeds rank.K2={config['rank.K2']:g}", "re.N")
    ids, scores = kernels.greedy_rerank(np.array(c2.item_ids, dtype=np.int64),
                                        np.array(c2.scores, dtype=np.float64),
                                        request.topics, penalty, cap, n)
    return RankedList(tuple(int(i) for i in ids), tuple(float(s) for s in scores), "re")


def run_system(request: Request, config: SystemConfig) -> RankedList:
    c1 = run_pre(request, config)
    c2 = run_rank(c1, request, config)
    return run_re(c2, request, config)


def position_bias(length: int) -> np.ndarray:
    """Examination probability per 1-based position p: 1 / log2(p + 2)."""
    return np.array([1.0 / math.log2(p + 2) for p in range(1, length + 1)])


def simulate_feedback(request: Request, ranked: RankedList) -> Feedback:
    if len(ranked) == 0:
        raise ValueError("cannot simulate feedback on an empty list")
    ids = np.array(ranked.item_ids, dtype=np.int64)
    clicked = request.u_click[ids] < position_bias(len(ids)) * request.click_appeal[ids]
    hearted = clicked & (request.u_heart[ids] < request.heart_appeal[ids])
    return Feedback(request.request_id, tuple(bool(c) for c in clicked), tuple(bool(h) for h in hearted))


def compute_metrics(feedbacks: Sequence[Feedback], ranked_lists: Sequence[RankedList],
                    topics: Sequence[Sequence[int]], list_size: int | None = None,
                    metrics: Sequence[str] = ("engagement1", "engagement2", "diversity")) -> MetricVector:
    """Average per-request clicks, hearts and topic coverage.

    ``topics[i]`` maps item ids of request ``i`` to topic ids. Diversity divides
    distinct topics by ``list_size`` (the configured N) when given, else by the
    list's own length.
    """
    if not feedbacks:
        raise MetricError("no requests to aggregate")
    if not len(feedbacks) == len(ranked_lists) == len(topics):
        raise MetricError("feedbacks, ranked_lists and topics must be parallel")
    rows = [per_request_metrics(f, r, t, list_size) for f, r, t in zip(feedbacks, ranked_lists, topics)]
    return aggregate(np.array(rows), metrics)


def per_request_metrics(feedback: Feedback, ranked: RankedList, topics, list_size=None):
    n = list_size or len(ranked)
    distinct = len({int(topics[i]) for i in ranked.item_ids})
    return (float(sum(feedback.clicked)), float(sum(feedback.hearted)), distinct / n if n else 0.0)


_COLUMNS = {"engagement1": 0, "engagement2": 1, "diversity": 2}


def aggregate(rows: np.ndarray, metrics: Sequence[str]) -> MetricVector:
    """Mean of per-request samples; fsum keeps it independent of row order."""
    n = len(rows)
    return MetricVector({m: math.fsum(rows[:, _COLUMNS[m]]) / n for m in metrics})


def compute_cost(config: SystemConfig, scenario: Scenario) -> float:
    cfg = effective_config(scenario, config)
    return cfg["pre.K1"] * scenario.cost_rank + cfg["rank.K2"] * scenario.cost_re
