import dataclasses

import numpy as np
import pytest

from conftest import complete_task, make_skill
from rectune.abtest import FAILED, SimulatedPlatform
from rectune.agents import (LoopContext, LoopSettings, ParamInsight, ProposedCandidate, actor_propose,
                            apply_review, critic_review, current_control, heuristic_propose, insight_cross_learn,
                            insight_self_learn, online_collect, online_launch, online_prepare, pearson,
                            resolve_stale, run_loop, run_round, skill_compose, skill_evolve, tighten_bounds)
from rectune.agents.insight import InsightReport, reduce_reports
from rectune.errors import EvolutionError, ExperimentError, ProposalError, SkillError, ValidationError
from rectune.memory import APPROVED, COMPLETED, FAILED as T_FAILED, PROPOSED, REJECTED, RUNNING, TaskRecord, read_elites
from rectune.simpipeline import Guardrail, NorthStar, PrimaryMetric, SystemConfig
from rectune.skillhub import KnowledgeEntry, ParamSpec, Rule, SearchSpace, Skill

BASE = make_skill().initial_config.params
GOOD = {"engagement1": 1.0, "engagement2": 1.0, "diversity": 0.8}


def _sensitive(skill, *names):
    space = SearchSpace({n: dataclasses.replace(s, sensitive=n in names) for n, s in skill.search_space.params.items()})
    return skill.evolve(search_space=space)


# ---------------------------------------------------------------- actor


def test_heuristic_is_deterministic_and_in_bounds(small_skill):
    a = heuristic_propose(small_skill, [], 40, seed=5)
    assert a == heuristic_propose(small_skill, [], 40, seed=5)
    assert a != heuristic_propose(small_skill, [], 40, seed=6)
    for p in a:
        small_skill.search_space.validate(p.config)
        assert p.explanation


def test_perturbation_frequencies(small_skill):
    skill = _sensitive(small_skill, "pre.w_heart")
    props = heuristic_propose(skill, [], 3000, seed=1, explore_prob=0.0)
    moved_sensitive = np.mean([p.params["pre.w_heart"] != BASE["pre.w_heart"] for p in props])
    moved_other = np.mean([p.params["pre.w_fresh"] != BASE["pre.w_fresh"] for p in props])
    assert moved_sensitive == 1.0
    assert abs(moved_other - 0.3) <= 0.05


def test_explore_probability_knob(small_skill):
    props = heuristic_propose(small_skill, [], 2000, seed=2, explore_prob=0.25)
    share = np.mean([p.explanation.startswith("uniform") for p in props])
    assert abs(share - 0.25) <= 0.03
    assert all(p.explanation.startswith("uniform")
               for p in heuristic_propose(small_skill, [], 20, seed=2, explore_prob=1.0))


def test_perturbation_uses_elites_round_robin(small_skill, store):
    e1 = complete_task(store, {**BASE, "pre.K1": 30.0}, GOOD)
    e2 = complete_task(store, {**BASE, "pre.K1": 50.0}, GOOD)
    props = heuristic_propose(small_skill, [e1, e2], 6, seed=3, explore_prob=0.0)
    assert [p.parent for p in props] == ["t00001", "t00002"] * 3


def test_actor_backend_errors(small_skill):
    with pytest.raises(ProposalError):
        actor_propose(small_skill, [], 2, backend="llm")
    with pytest.raises(ValueError):
        actor_propose(small_skill, [], 0)
    with pytest.raises(ValueError):
        ProposedCandidate(BASE, "   ")


# ---------------------------------------------------------------- critic


def _cand(**changes):
    return ProposedCandidate({**BASE, **changes}, "test proposal")


def test_critic_reasons(small_skill, store):
    skill = small_skill.evolve(domain_knowledge=(KnowledgeEntry("cap penalty", Rule("re.diversity_penalty", "<=", 1.5)),))
    complete_task(store, {**BASE, "pre.w_heart": 3.0}, {**GOOD, "diversity": 0.1})   # guardrail failure
    complete_task(store, {**BASE, "pre.w_heart": 1.0}, GOOD)
    bad_schema = ProposedCandidate({k: v for k, v in BASE.items() if k != "re.diversity_penalty"}, "missing one")
    props = [
        bad_schema,                                  # 0 schema
        _cand(**{"pre.w_heart": 4.5}),               # 1 bounds
        _cand(**{"pre.K1": 40.5}),                   # 2 bounds (integer)
        _cand(**{"re.diversity_penalty": 1.8}),      # 3 rule
        _cand(**{"pre.K1": 58.0}),                   # 4 cost
        _cand(**{"pre.w_heart": 1.0}),               # 5 duplicate of history
        _cand(**{"pre.w_heart": 3.1}),               # 6 near the failure (0.1/4 = 0.025)
        _cand(**{"pre.w_heart": 1.2}),               # 7 ok, closest to best
        _cand(**{"pre.w_heart": 2.0}),               # 8 ok
        _cand(**{"pre.w_heart": 1.2}),               # 9 duplicate within the batch
        _cand(**{"pre.w_heart": 0.0}),               # 10 ok but surplus
        ProposedCandidate({**BASE, "pre.w_fresh": "x"}, "bad type"),  # 11 schema
    ]
    v = critic_review(props, skill, store.tasks(), keep=2, cost_fn=lambda c: c["pre.K1"] * 10, c_max=500)
    reasons = [d.reason for d in v.decisions]
    assert reasons == ["schema", "bounds", "bounds", "rule", "rule", "duplicate", "failure_proximity",
                       None, None, "duplicate", "surplus", "schema"]
    assert v.approved == (7, 8)
    assert "2 of 12 approved" in v.comments


def test_critic_without_history_keeps_order(small_skill):
    props = [_cand(**{"pre.w_heart": w}) for w in (0.1, 0.2, 0.3)]
    v = critic_review(props, small_skill, [], keep=2)
    assert v.approved == (0, 1) and v.decisions[2].reason == "surplus"


def test_critic_failure_radius_boundary(small_skill, store):
    complete_task(store, {**BASE, "pre.w_heart": 2.0}, {**GOOD, "diversity": 0.1})
    near = _cand(**{"pre.w_heart": 2.19})   # 0.0475 relative
    far = _cand(**{"pre.w_heart": 2.25})    # 0.0625 relative
    v = critic_review([near, far], small_skill, store.tasks(), keep=5)
    assert [d.reason for d in v.decisions] == ["failure_proximity", None]


# ---------------------------------------------------------------- online


@pytest.fixture
def platform(small_scenario, small_skill, tmp_path):
    p = SimulatedPlatform(small_scenario, small_skill.search_space, results_dir=tmp_path / "exp")
    yield p
    p.close()


def _proposed(store, *heart):
    return [store.write_task(TaskRecord(store.next_id(), SystemConfig({**BASE, "pre.w_heart": h}).canonical(),
                                        "why", store.now())) for h in heart]


def test_control_is_best_elite_or_initial(small_skill, store):
    assert current_control(store, small_skill) == small_skill.initial_config
    complete_task(store, {**BASE, "pre.w_heart": 2.0}, {**GOOD, "engagement1": 1.5})
    complete_task(store, {**BASE, "pre.w_heart": 3.0}, {**GOOD, "engagement1": 1.2})
    from rectune.memory import prune_memory
    prune_memory(store, 5, small_skill.north_star)
    assert current_control(store, small_skill)["pre.w_heart"] == 2.0


def test_prepare_requires_records_and_review(small_skill, store):
    with pytest.raises(ValidationError):
        online_prepare(store, [], small_skill, small_skill.initial_config, "e", "small")
    recs = _proposed(store, 1.0, 2.0)
    spec = online_prepare(store, recs, small_skill, small_skill.initial_config, "e", "small", 50)
    assert spec.pending_review and [a for a, _ in spec.arms] == ["t00001", "t00002"]
    assert all(r.status == PROPOSED for r in store.tasks())


def test_declined_review_rejects_every_arm(small_skill, store, platform):
    recs = _proposed(store, 1.0, 2.0)
    spec = online_prepare(store, recs, small_skill, small_skill.initial_config, "e", "small", 50)
    spec = apply_review(store, spec, False)
    assert [r.status for r in store.tasks()] == [REJECTED, REJECTED]
    with pytest.raises(ExperimentError):
        online_launch(platform, store, spec)


def test_launch_collect_and_idempotence(small_skill, store, platform):
    recs = _proposed(store, 1.0, 2.0)
    spec = online_prepare(store, recs, small_skill, small_skill.initial_config, "e", "small", 50, auto_approve=True)
    handle, launched = online_launch(platform, store, spec)
    first = online_collect(platform, handle, store, small_skill)
    snapshot = [(p.name, p.read_bytes()) for p in sorted(store.tasks_dir.iterdir())]
    second = online_collect(platform, handle, store, small_skill)
    assert first == second and all(r.status == COMPLETED for r in first)
    assert snapshot == [(p.name, p.read_bytes()) for p in sorted(store.tasks_dir.iterdir())]
    assert read_elites(store)


def test_platform_refusal_fails_single_arm(small_skill, store, platform):
    recs = _proposed(store, 1.0, 2.0)
    spec = online_prepare(store, recs, small_skill, small_skill.initial_config, "e", "small", 50, auto_approve=True)

    def validate(cfg):
        if cfg["pre.w_heart"] == 2.0:
            raise ValidationError("nope")
    handle, launched = online_launch(platform, store, spec, validate)
    assert [a for a, _ in launched.arms] == ["t00001"]
    assert store.read_task("t00002").status == T_FAILED
    online_collect(platform, handle, store, small_skill)
    assert store.read_task("t00001").status == COMPLETED


class _BrokenPlatform:
    def __init__(self):
        self.specs = {}

    def submit(self, spec):
        self.specs["h"] = spec
        return "h"

    def status(self, h):
        return FAILED

    def spec(self, h):
        return self.specs[h]

    def fetch(self, h):
        raise ExperimentError("failed")


def test_failed_experiment_marks_arms_failed(small_skill, store):
    recs = _proposed(store, 1.0)
    spec = online_prepare(store, recs, small_skill, small_skill.initial_config, "e", "small", 50, auto_approve=True)
    p = _BrokenPlatform()
    handle, _ = online_launch(p, store, spec)
    out = online_collect(p, handle, store, small_skill)
    assert [r.status for r in out] == [T_FAILED]


def test_resolve_stale(store):
    recs = _proposed(store, 1.0, 2.0, 3.0, 3.5)
    store.update_task(recs[1].id, status=APPROVED)
    store.update_task(recs[2].id, status=APPROVED)
    store.update_task(recs[2].id, status=RUNNING)
    store.update_task(recs[3].id, status=REJECTED)
    assert resolve_stale(store) == ["t00001", "t00002", "t00003"]
    assert [r.status for r in store.tasks()] == [REJECTED, T_FAILED, T_FAILED, REJECTED]
    assert resolve_stale(store) == []


# ---------------------------------------------------------------- insight


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 1, 1], [1, 2, 3]) is None


def _linear_corpus(store, skill, shifts=(-0.2, -0.1, 0.1, 0.2, 0.3, 0.4)):
    """Utility gain equals twice the normalized shift of pre.w_heart; other params stay put."""
    lo, hi = skill.original_bounds["pre.w_heart"]
    for s in shifts:
        v = BASE["pre.w_heart"] + s * (hi - lo)
        complete_task(store, {**BASE, "pre.w_heart": v}, {**GOOD, "engagement1": 1.0 + 2 * s}, control_means=GOOD)
    return store.tasks()


def test_self_learn_sensitivity(small_skill, store):
    rep = insight_self_learn(small_skill, _linear_corpus(store, small_skill))
    assert rep.params["pre.w_heart"].sensitivity == pytest.approx(1.0, abs=1e-9)
    assert rep.params["pre.w_heart"].trend == 1
    assert rep.params["pre.w_fresh"].sensitivity is None
    assert set(rep.defined()) == {"pre.w_heart"}
    (pattern,) = rep.patterns
    assert pattern.rule.parameter == "pre.w_heart" and pattern.rule.relation == "monotone_down_hurts"
    assert pattern.provenance == "learned" and len(pattern.source_tasks) == 6
    assert InsightReport.from_dict(rep.to_dict()) == rep


def test_self_learn_needs_three_tasks(small_skill, store):
    recs = _linear_corpus(store, small_skill, shifts=(0.1, 0.2))
    rep = insight_self_learn(small_skill, recs)
    assert rep.params == {} and rep.patterns == ()


def test_constant_gain_is_undefined(small_skill, store):
    for s in (0.1, 0.2, 0.3):
        complete_task(store, {**BASE, "pre.w_heart": 0.5 + 4 * s}, GOOD, control_means=GOOD)
    assert insight_self_learn(small_skill, store.tasks()).params["pre.w_heart"].sensitivity is None


def test_cross_learn_weighting_and_order():
    a = InsightReport("self", ("a",), {"p": ParamInsight(0.8, 10, 1)})
    b = InsightReport("self", ("b",), {"p": ParamInsight(0.2, 10, -1), "q": ParamInsight(None, 4, 0)})
    m = reduce_reports([a, b])
    assert m.params["p"].sensitivity == pytest.approx(0.5)
    assert m.params["q"].sensitivity is None and m.params["q"].n == 4
    assert reduce_reports([b, a]) == m
    c = InsightReport("self", ("c",), {"p": ParamInsight(0.2, 30, 1)})
    assert reduce_reports([a, c]).params["p"].sensitivity == pytest.approx((8 + 6) / 40)


def test_cross_learn_permutation_invariant(tmp_path):
    from rectune.memory import MemoryStore
    from rectune.storage import TickClock
    corpora = []
    for i, name in enumerate(("s1", "s2", "s3")):
        skill = make_skill(name)
        with MemoryStore(tmp_path / name, name, writer=True, clock=TickClock()) as st:
            _linear_corpus(st, skill, shifts=(0.1 * (i + 1), -0.1, 0.05, 0.3))
            corpora.append((skill, st.tasks()))
    r1 = insight_cross_learn(corpora)
    r2 = insight_cross_learn(corpora[::-1], workers=1)
    assert r1 == r2 and r1.skills == ("s1", "s2", "s3")
    with pytest.raises(ValueError):
        insight_cross_learn([])


# ---------------------------------------------------------------- skill agent


def _elites_upper(store):
    return [complete_task(store, {**BASE, "pre.w_heart": h}, GOOD) for h in (2.5, 3.0)]


def test_tighten_bounds(small_skill, store):
    space = tighten_bounds(small_skill, _elites_upper(store))
    assert (space["pre.w_heart"].lower, space["pre.w_heart"].upper) == pytest.approx((1.7, 3.8))
    assert (space["pre.w_fresh"].lower, space["pre.w_fresh"].upper) == pytest.approx((0.2, 1.8))
    assert (space["pre.K1"].lower, space["pre.K1"].upper) == (32.0, 48.0)
    assert (space["re.diversity_penalty"].lower, space["re.diversity_penalty"].upper) == pytest.approx((0.0, 0.7))


def test_tighten_never_exceeds_original(small_skill, store):
    elites = [complete_task(store, {**BASE, "pre.w_heart": 4.0}, GOOD)]
    space = tighten_bounds(small_skill, elites)
    assert space["pre.w_heart"].upper == 4.0


def test_evolve_needs_five_completed(small_skill, store):
    recs = _linear_corpus(store, small_skill, shifts=(0.1, 0.2, 0.3, 0.4))
    rep = insight_self_learn(small_skill, recs)
    new = skill_evolve(small_skill, rep, recs, recs)
    assert new.version == 2 and new.search_space.params.keys() == small_skill.search_space.params.keys()
    assert [(s.lower, s.upper) for s in new.search_space.params.values()] == \
           [(s.lower, s.upper) for s in small_skill.search_space.params.values()]
    assert new.search_space["pre.w_heart"].sensitive


def test_evolve_tightens_and_dedupes(small_skill, store):
    recs = _linear_corpus(store, small_skill)
    rep = insight_self_learn(small_skill, recs)
    v2 = skill_evolve(small_skill, rep, recs, recs[-2:])
    assert v2.search_space["pre.w_heart"].upper < 4.0
    assert len(v2.domain_knowledge) == 1
    v3 = skill_evolve(v2, rep, recs, recs[-2:])
    assert len(v3.domain_knowledge) == 1
    for name, (lo, hi) in small_skill.original_bounds.items():
        assert lo <= v3.search_space[name].lower < v3.search_space[name].upper <= hi
    with pytest.raises(EvolutionError):
        skill_evolve(small_skill, InsightReport("self", ("other",)), recs, recs)


def _other_skill(guard=0.5, primary="engagement1", guard_dir="maximize"):
    return Skill("other", 1, "ctx", SearchSpace({"re.topic_cap": ParamSpec(1, 6, kind="integer"),
                                                 "re.N": ParamSpec(5, 10, kind="integer")}),
                 NorthStar((PrimaryMetric(primary),), (Guardrail("diversity", guard, guard_dir),)),
                 SystemConfig({"re.topic_cap": 3, "re.N": 8}))


def test_compose(small_skill):
    joint = skill_compose(small_skill, _other_skill())
    assert len(joint.search_space.names) == 8
    assert joint.name == "small_skill+other"
    assert joint.north_star.guardrails == (Guardrail("diversity", 0.5),)
    assert [p.metric for p in joint.north_star.primary] == ["engagement1", "engagement2"]


def test_compose_keeps_stricter_minimize_guardrail():
    a = make_skill().evolve(north_star=NorthStar((PrimaryMetric("engagement1"),),
                                                 (Guardrail("diversity", 0.3, "minimize"),)))
    joint = skill_compose(a, _other_skill(guard=0.1, guard_dir="minimize"))
    assert joint.north_star.guardrails[0].baseline == 0.1


def test_compose_conflicts(small_skill):
    with pytest.raises(SkillError):
        skill_compose(small_skill, small_skill)
    b = _other_skill().evolve(north_star=NorthStar((PrimaryMetric("diversity"),)))
    with pytest.raises(SkillError, match="primary in one skill"):
        skill_compose(small_skill, b)
    with pytest.raises(SkillError):
        skill_compose(small_skill, make_skill("twin"))


# ---------------------------------------------------------------- loop


@pytest.fixture
def ctx(small_scenario, small_skill, store, platform, tmp_path):
    return LoopContext(small_scenario, tmp_path / "skills", store, small_skill, platform)


def test_loop_runs_and_leaves_no_open_tasks(ctx):
    settings = LoopSettings(rounds=3, batch=2, auto_approve=True, num_requests=60)
    out = run_loop(ctx, settings)
    assert [s.round for s in out] == [1, 2, 3]
    assert all(s.arm_count == 2 and s.failed == 0 for s in out)
    statuses = {r.status for r in ctx.store.tasks()}
    assert statuses <= {COMPLETED, REJECTED}
    assert sum(r.status == COMPLETED for r in ctx.store.tasks()) == 6
    assert ctx.skill.version == 4
    assert out[-1].best_utility == read_elites(ctx.store, limit=1)[0].utility


def test_loop_requires_reviewer(ctx):
    with pytest.raises(ValidationError):
        run_round(ctx, LoopSettings(), 1)


def test_declining_reviewer(ctx):
    s = run_round(ctx, LoopSettings(batch=2, num_requests=60), 1, reviewer=lambda spec: False)
    assert s.review == "declined" and s.experiment_id is None
    assert {r.status for r in ctx.store.tasks()} == {REJECTED}


def test_stale_records_resolved_on_next_round(ctx):
    _proposed(ctx.store, 1.0)
    run_round(ctx, LoopSettings(batch=1, auto_approve=True, num_requests=60), 1)
    first = ctx.store.read_task("t00001")
    assert first.status == REJECTED and first.check_info["recovery"] == "stale proposal"


def test_malformed_proposals_fail_without_critic(ctx):
    def proposer(skill, elites, n, seed, history):
        return [ProposedCandidate({"pre.w_heart": "oops"}, "broken"),
                ProposedCandidate({**BASE, "pre.w_heart": 2.0}, "fine")]
    ctx.proposer = proposer
    s = run_round(ctx, LoopSettings(batch=2, critic=False, auto_approve=True, num_requests=60, evolve=False), 1)
    assert s.failed == 1 and s.arm_count == 2
    assert [r.status for r in ctx.store.tasks()] == [T_FAILED, COMPLETED]
