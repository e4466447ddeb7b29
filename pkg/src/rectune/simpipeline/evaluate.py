"""Batch evaluation of a configuration over a set of requests."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from . import kernels
from .config import SystemConfig
from .pipeline import MetricVector, aggregate, effective_config, position_bias
from .scenario import Scenario, generate_request


@dataclass(frozen=True, eq=False)
class RequestStack:
    ids: tuple[int, ...]
    pre: np.ndarray
    rank: np.ndarray
    topics: np.ndarray
    click_appeal: np.ndarray
    heart_appeal: np.ndarray
    u_click: np.ndarray
    u_heart: np.ndarray


@lru_cache(maxsize=32)
def request_stack(scenario: Scenario, ids: tuple[int, ...]) -> RequestStack:
    reqs = [generate_request(scenario, i) for i in ids]
    def stack(attr):
        return np.ascontiguousarray(np.stack([getattr(r, attr) for r in reqs]))
    return RequestStack(ids, stack("pre_scores"), stack("rank_scores"), stack("topics"),
                        stack("click_appeal"), stack("heart_appeal"), stack("u_click"), stack("u_heart"))


def stage_params(scenario: Scenario, config: SystemConfig) -> dict:
    """Validated numeric arguments for the batch kernel."""
    cfg = effective_config(scenario, config)

    def integral(name, lo):
        v = cfg[name]
        if v != int(v) or v < lo:
            raise ConfigError(f"{name} must be an integer >= {lo}, got {v}", name)
        return int(v)

    k1 = integral("pre.K1", 1)
    k2 = integral("rank.K2", 1)
    n = integral("re.N", 1)
    cap = integral("re.topic_cap", 1)
    if k2 > k1:
        raise ConfigError(f"rank.K2={k2} exceeds pre.K1={k1}", "rank.K2")
    if n > k2:
        raise ConfigError(f"re.N={n} exceeds rank.K2={k2}", "re.N")
    penalty = cfg["re.diversity_penalty"]
    if penalty < 0:
        raise ConfigError("re.diversity_penalty must be >= 0", "re.diversity_penalty")
    return dict(
        w_pre=np.array([cfg[f"pre.w_{h}"] for h in scenario.pre_head_names]),
        w_rank=np.array([cfg[f"rank.w_{h}"] for h in scenario.rank_heads]),
        K1=k1, K2=k2, penalty=float(penalty), cap=cap, N=n,
    )


def request_samples(scenario: Scenario, config: SystemConfig, request_ids: Sequence[int],
                    workers: int = 1) -> np.ndarray:
    """Per-request (clicks, hearts, diversity) rows, in ``request_ids`` order."""
    ids = tuple(int(i) for i in request_ids)
    p = stage_params(scenario, config)
    bias = position_bias(p["N"])

    def run(chunk):
        st = request_stack(scenario, chunk)
        raw = kernels.evaluate_batch(st.pre, st.rank, st.topics, st.click_appeal, st.heart_appeal,
                                     st.u_click, st.u_heart, p["w_pre"], p["w_rank"], p["K1"], p["K2"],
                                     p["penalty"], p["cap"], p["N"], bias, scenario.num_topics)
        rows = np.empty((len(chunk), 3))
        rows[:, 0] = raw[:, 0]
        rows[:, 1] = raw[:, 1]
        rows[:, 2] = raw[:, 2] / p["N"]
        return rows

    if workers <= 1 or len(ids) < 2:
        return run(ids)
    size = -(-len(ids) // workers)
    chunks = [ids[i:i + size] for i in range(0, len(ids), size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return np.concatenate(parts)


def evaluate_config(scenario: Scenario, config: SystemConfig, request_ids: Sequence[int],
                    workers: int = 1) -> MetricVector:
    return aggregate(request_samples(scenario, config, request_ids, workers), scenario.metrics)
