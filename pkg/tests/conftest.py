import math

import numpy as np
import pytest

from rectune.memory import MemoryStore
from rectune.simpipeline import Guardrail, NorthStar, PrimaryMetric, Request, Scenario, SystemConfig
from rectune.skillhub import ParamSpec, SearchSpace, Skill
from rectune.storage import TickClock


def make_request(topics, pre_scores, rank_scores=None, pre_heads=("a", "b"), rank_heads=None,
                 click_appeal=None, heart_appeal=None, u_click=None, u_heart=None, request_id=0):
    """Hand-built request with explicit head scores (item ids are row indices)."""
    topics = np.asarray(topics, dtype=np.int64)
    pre = np.asarray(pre_scores, dtype=float)
    rank = pre if rank_scores is None else np.asarray(rank_scores, dtype=float)
    n = len(topics)
    ones = np.ones(n)
    return Request(
        request_id, 0, topics, pre, rank, tuple(pre_heads), tuple(rank_heads or pre_heads),
        np.zeros(2), np.zeros((n, 2)), np.zeros((n, 2)),
        ones if click_appeal is None else np.asarray(click_appeal, float),
        ones if heart_appeal is None else np.asarray(heart_appeal, float),
        np.full(n, 0.5) if u_click is None else np.asarray(u_click, float),
        np.full(n, 0.5) if u_heart is None else np.asarray(u_heart, float),
    )


SMALL_FIXED = {"pre.w_click": 1.0, "rank.w_click": 1.0, "rank.K2": 20.0, "re.topic_cap": 3.0, "re.N": 8.0}


@pytest.fixture
def small_scenario():
    return Scenario(name="small", seed=11, pool_size=60, fixed_params=SMALL_FIXED, c_max=400.0)


def make_skill(name="small_skill", version=1):
    space = SearchSpace({
        "pre.w_heart": ParamSpec(0.0, 4.0),
        "pre.w_fresh": ParamSpec(0.0, 4.0),
        "pre.K1": ParamSpec(20.0, 60.0, kind="integer"),
        "rank.w_heart": ParamSpec(0.0, 4.0),
        "rank.w_fresh": ParamSpec(0.0, 4.0),
        "re.diversity_penalty": ParamSpec(0.0, 2.0),
    })
    return Skill(
        name=name, version=version, task_context="small test skill", search_space=space,
        north_star=NorthStar((PrimaryMetric("engagement1"), PrimaryMetric("engagement2")),
                             (Guardrail("diversity", 0.4),)),
        initial_config=SystemConfig({"pre.w_heart": 0.5, "pre.w_fresh": 1.0, "pre.K1": 40.0,
                                     "rank.w_heart": 0.5, "rank.w_fresh": 1.0, "re.diversity_penalty": 0.3}),
    )


@pytest.fixture
def small_skill():
    return make_skill()


@pytest.fixture
def store(tmp_path):
    with MemoryStore(tmp_path / "memory", "small_skill", writer=True, clock=TickClock()) as s:
        yield s


def finite(x):
    return x is not None and math.isfinite(x)


def complete_task(store, params, means, north_star=None, control_means=None, round_no=1, cost=None):
    """Write a task straight to Completed with synthetic arm/control summaries."""
    from rectune.abtest import ArmResult, MetricReport, MetricStats
    from rectune.memory import APPROVED, COMPLETED, RUNNING, TaskRecord, TaskResult
    from rectune.simpipeline import utility

    north_star = north_star or make_skill().north_star
    control_means = control_means or {m: 1.0 for m in means}
    arm = ArmResult({m: MetricStats(v, 0.1, 100) for m, v in means.items()})
    control = ArmResult({m: MetricStats(v, 0.1, 100) for m, v in control_means.items()})
    u = utility(means, north_star)
    uc = utility(control_means, north_star)
    rec = TaskRecord(store.next_id(), SystemConfig(params).canonical(), "fixture", store.now(), round=round_no)
    store.write_task(rec)
    store.update_task(rec.id, status=APPROVED)
    store.update_task(rec.id, status=RUNNING)
    result = TaskResult(MetricReport.compare(control, arm), arm, control, u.feasible, u.value, u.raw_value,
                        uc.raw_value, cost, u.violations, "fixture")
    return store.update_task(rec.id, status=COMPLETED, results=result)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
