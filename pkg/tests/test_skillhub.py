import json

import pytest

from conftest import complete_task, make_skill
from rectune.agents import ProposedCandidate
from rectune.errors import SkillError
from rectune.simpipeline.scenario import KNOWN_METRICS as METRIC_NAMES
from rectune.skillhub import (KnowledgeEntry, ParamSpec, Rule, SearchSpace, latest_skill, load_skill, publish_skill,
                              render_actor_prompt, render_critic_prompt, save_skill, skill_versions)


def _knowledge():
    return (KnowledgeEntry("keep the diversity penalty modest", Rule("re.diversity_penalty", "<=", 1.5)),
            KnowledgeEntry("fresh items help", provenance="learned", source_tasks=("t00001",), confidence=0.6))


def test_round_trip(tmp_path, small_skill):
    skill = small_skill.evolve(domain_knowledge=_knowledge())
    save_skill(skill, tmp_path / "s.json")
    assert load_skill(tmp_path / "s.json", METRIC_NAMES) == skill
    # file is canonical JSON
    text = (tmp_path / "s.json").read_text()
    assert text == json.dumps(json.loads(text), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _dump(tmp_path, mutate):
    d = make_skill().to_dict()
    mutate(d)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    return p


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["requirement"]["search_space"]["pre.w_heart"].update(lower=5.0), "requirement.search_space.pre.w_heart"),
    (lambda d: d["requirement"]["search_space"]["pre.K1"].update(lower=20.5), "requirement.search_space.pre.K1"),
    (lambda d: d["requirement"]["search_space"]["pre.w_fresh"].update(scale="log"), "requirement.search_space.pre.w_fresh"),
    (lambda d: d["initial_config"].update({"pre.w_heart": 9.0}), "initial_config.pre.w_heart"),
    (lambda d: d["initial_config"].pop("pre.w_heart"), "initial_config.pre.w_heart"),
    (lambda d: d.update(version=0), "version"),
    (lambda d: d.update(name="bad name"), "name"),
    (lambda d: d.pop("north_star"), "north_star"),
    (lambda d: d["requirement"]["original_bounds"].update({"pre.w_heart": [1.0, 2.0]}),
     "requirement.search_space.pre.w_heart"),
    (lambda d: d["domain_knowledge"].append({"text": "x", "rule": {"parameter": "nope", "relation": "<=",
                                                                   "threshold": 1}}),
     "domain_knowledge[0].rule.parameter"),
    (lambda d: d["domain_knowledge"].append({"text": "x", "rule": {"parameter": "re.N", "relation": "~",
                                                                   "threshold": 1}}),
     "domain_knowledge[0].rule.relation"),
    (lambda d: d["domain_knowledge"].append({"text": "x", "provenance": "learned"}), "domain_knowledge[0]"),
    (lambda d: d["domain_knowledge"].append({"text": "x", "confidence": 1.5}), "domain_knowledge[0]"),
])
def test_load_errors_name_the_field(tmp_path, mutate, path):
    with pytest.raises(SkillError) as exc:
        load_skill(_dump(tmp_path, mutate))
    assert exc.value.path == path


def test_unknown_metric_and_bad_json(tmp_path):
    p = _dump(tmp_path, lambda d: d["north_star"]["primary"][0].update(metric="revenue"))
    with pytest.raises(SkillError, match="revenue"):
        load_skill(p, METRIC_NAMES)
    p.write_text("{not json")
    with pytest.raises(SkillError) as exc:
        load_skill(p)
    assert exc.value.path == str(p)


def test_versioning(tmp_path, small_skill):
    assert skill_versions(tmp_path, "small_skill") == []
    with pytest.raises(SkillError):
        latest_skill(tmp_path, "small_skill")
    publish_skill(tmp_path, small_skill)
    publish_skill(tmp_path, small_skill.evolve(version=3))
    assert skill_versions(tmp_path, "small_skill") == [1, 3]
    assert latest_skill(tmp_path, "small_skill").version == 3
    with pytest.raises(SkillError):
        publish_skill(tmp_path, small_skill.evolve(version=2))


def test_search_space_helpers():
    space = SearchSpace({"pre.a": ParamSpec(0, 10), "re.k": ParamSpec(1, 5, kind="integer")})
    assert space.clip({"pre.a": 12.0, "re.k": 3.6}).params == {"pre.a": 10.0, "re.k": 4.0}
    assert space.relative_linf({"pre.a": 1, "re.k": 1}, {"pre.a": 2, "re.k": 3}) == pytest.approx(0.5)
    assert not space["re.k"].contains(2.5)


# ---------------------------------------------------------------- prompts


def _elites(store):
    return [complete_task(store, {**make_skill().initial_config.params, "pre.K1": 40.0 + i},
                          {"engagement1": 1.0 + i / 10, "engagement2": 1.0, "diversity": 0.8}) for i in range(3)]


def test_actor_prompt_sections_and_determinism(small_skill, store):
    skill = small_skill.evolve(domain_knowledge=_knowledge())
    elites = _elites(store)
    p1 = render_actor_prompt(skill, elites, 4)
    p2 = render_actor_prompt(skill, list(reversed(elites)), 4)
    assert p1 == p2
    for head in ("## Task context", "## Tunable parameters", "## North-star metrics", "## Domain knowledge",
                 "## Experiment history (newest first)", "## Output instructions"):
        assert head in p1
    assert "exactly 4 new configurations" in p1 and "JSON array of length 4" in p1
    assert "[rule: re.diversity_penalty <= 1.5]" in p1
    assert "guardrail: diversity must stay >= 0.4" in p1
    # newest first
    assert p1.index("t00003") < p1.index("t00002") < p1.index("t00001")
    assert "+10.000%" in p1  # engagement1 of t00002 vs control 1.0


def test_actor_prompt_empty_history_and_extra_args(small_skill):
    p = render_actor_prompt(small_skill, [], 1, extra_args={"note": "be bold"})
    assert "no prior experiments" in p and "note: be bold" in p
    assert "(none recorded)" in p
    with pytest.raises(ValueError):
        render_actor_prompt(small_skill, [], 0)


def test_critic_prompt(small_skill):
    props = [ProposedCandidate(small_skill.initial_config.params, "baseline check")]
    p = render_critic_prompt(small_skill, props, ['{"pre.K1": 20}'])
    assert "## Known historical failures" in p and '{"pre.K1": 20}' in p
    assert "baseline check" in p and "- diversity >= 0.4" in p
    assert "## Known historical failures" not in render_critic_prompt(small_skill, props)
