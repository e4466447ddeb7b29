"""Planted-optimum benchmark, baselines and the actor/critic ablation harness."""

from __future__ import annotations

import itertools
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .abtest import ExperimentSpec, SimulatedPlatform, run_simulated_experiment
from .agents import LoopContext, LoopSettings, ProposedCandidate, heuristic_propose, run_loop
from .memory import COMPLETED, MemoryStore, read_elites
from .simpipeline import (Guardrail, HeadSpec, NorthStar, PrimaryMetric, Scenario, SystemConfig,
                          compute_cost, evaluate_config, utility)
from .skillhub import KnowledgeEntry, ParamSpec, SearchSpace, Skill, Tool, publish_skill
from .storage import TickClock

DIVERSITY_FLOOR = 0.5
BENCH_REQUESTS = 300


def planted_scenario() -> Scenario:
    """Six tunables, rank fidelity 0.9, a cost cap on K1 and a binding diversity floor."""
    return Scenario(
        name="planted",
        seed=7,
        pool_size=300,
        num_topics=8,
        latent_dim=4,
        pre_heads=(HeadSpec("click", "click", 0.3), HeadSpec("heart", "heart", 0.3), HeadSpec("fresh", "none", 0.0)),
        rank_heads=("click", "heart", "fresh"),
        rank_fidelity=0.9,
        cost_rank=1.0,
        cost_re=10.0,
        c_max=650.0,
        fixed_params={"pre.w_click": 1.0, "rank.w_click": 1.0, "rank.K2": 40.0,
                      "re.topic_cap": 3.0, "re.N": 10.0},
    )


def planted_skill() -> Skill:
    space = SearchSpace({
        "pre.w_heart": ParamSpec(0.0, 4.0),
        "pre.w_fresh": ParamSpec(0.0, 4.0),
        "pre.K1": ParamSpec(40.0, 300.0, kind="integer"),
        "rank.w_heart": ParamSpec(0.0, 4.0),
        "rank.w_fresh": ParamSpec(0.0, 4.0),
        "re.diversity_penalty": ParamSpec(0.0, 2.0),
    })
    return Skill(
        name="value_fusion",
        version=1,
        task_context=("Tune score-fusion weights of the pre-ranking and ranking stages, the pre-ranking "
                      "truncation size and the re-ranking topic penalty. Click weights are pinned to 1."),
        search_space=space,
        north_star=NorthStar((PrimaryMetric("engagement1"), PrimaryMetric("engagement2")),
                             (Guardrail("diversity", DIVERSITY_FLOOR),)),
        initial_config=SystemConfig({"pre.w_heart": 0.5, "pre.w_fresh": 1.0, "pre.K1": 100.0,
                                     "rank.w_heart": 0.5, "rank.w_fresh": 1.0, "re.diversity_penalty": 0.3}),
        domain_knowledge=(KnowledgeEntry("Ranking-stage heads are more accurate than pre-ranking heads."),),
        tools=(Tool("simulated_ab", "sim://planted", "paired A/B platform over simulated traffic"),),
        infra_constraints="serving cost K1*c_rank + K2*c_re must stay within the budget",
    )


def measured_utility(scenario: Scenario, skill: Skill, config: SystemConfig,
                     num_requests: int = BENCH_REQUESTS):
    mv = evaluate_config(scenario, config, range(num_requests))
    c_max = scenario.c_max if math.isfinite(scenario.c_max) else None
    return utility(mv, skill.north_star, compute_cost(config, scenario), c_max)


def grid_points(space: SearchSpace, levels: int = 4):
    axes = []
    for name, s in space.params.items():
        vals = np.linspace(s.lower, s.upper, levels)
        if s.kind == "integer":
            vals = np.round(vals)
        axes.append([(name, float(v)) for v in vals])
    for combo in itertools.product(*axes):
        yield SystemConfig(dict(combo))


@dataclass(frozen=True)
class SearchResult:
    best_utility: float
    best_config: SystemConfig | None
    evaluations: int


def grid_search(scenario: Scenario, skill: Skill, levels: int = 4,
                num_requests: int = BENCH_REQUESTS) -> SearchResult:
    """Exhaustive oracle over ``levels``^d points of the skill's search space."""
    best, best_cfg, n = -math.inf, None, 0
    for cfg in grid_points(skill.search_space, levels):
        u = measured_utility(scenario, skill, cfg, num_requests).value
        n += 1
        if u > best:
            best, best_cfg = u, cfg
    return SearchResult(best, best_cfg, n)


def random_search(scenario: Scenario, skill: Skill, budget: int, seed: int,
                  num_requests: int = BENCH_REQUESTS) -> SearchResult:
    rng = np.random.default_rng([seed, 0xA11CE])
    best, best_cfg = -math.inf, None
    for _ in range(budget):
        params = {}
        for name, s in skill.search_space.params.items():
            v = s.lower + rng.random() * s.width
            params[name] = float(round(v)) if s.kind == "integer" else v
        cfg = SystemConfig(params)
        u = measured_utility(scenario, skill, cfg, num_requests).value
        if u > best:
            best, best_cfg = u, cfg
    return SearchResult(best, best_cfg, budget)


class FaultInjectingProposer:
    """Wraps the heuristic actor and corrupts a fraction of its proposals.

    Corruptions cycle through out-of-bounds values, malformed configs
    (a dropped parameter or a non-numeric value) and exact duplicates of a
    tested config or an earlier proposal in the batch. With nothing to copy a
    duplicate becomes an out-of-bounds fault instead.
    """

    KINDS = ("out_of_bounds", "missing", "non_numeric", "duplicate")

    def __init__(self, rate: float = 0.3):
        self.rate = rate
        self.injected = 0
        self.total = 0

    def __call__(self, skill, elites, n, seed, history):
        rng = np.random.default_rng([seed, 0xFA17])
        clean = heuristic_propose(skill, elites, n, seed)
        tested = [r.params for r in history if r.status == COMPLETED]
        out = []
        for p in clean:
            self.total += 1
            if rng.random() >= self.rate:
                out.append(p)
                continue
            self.injected += 1
            kind = self.KINDS[int(rng.integers(len(self.KINDS)))]
            # a duplicate needs something already tested or already proposed this batch
            prior = tested or [q.params for q in out if q.origin != "fault"]
            if kind == "duplicate" and not prior:
                kind = "out_of_bounds"
            params = dict(p.params)
            names = sorted(params)
            victim = names[int(rng.integers(len(names)))]
            if kind == "out_of_bounds":
                s = skill.search_space[victim]
                params[victim] = s.upper + s.width * (0.1 + rng.random())
            elif kind == "missing":
                del params[victim]
            elif kind == "non_numeric":
                params[victim] = "high"
            else:
                params = dict(prior[int(rng.integers(len(prior)))])
            out.append(ProposedCandidate(params, f"injected fault: {kind}", origin="fault"))
        return out


@dataclass
class LoopOutcome:
    best_utility: float
    best_config: SystemConfig | None
    summaries: list
    skills_root: Path
    memory_root: Path
    experiments: int
    wasted: int
    verification: object = None


def run_agentic(scenario: Scenario, skill: Skill, seed: int, workdir: str | Path, rounds: int = 20,
                batch: int = 4, critic: bool = True, proposer=None, evolve: bool = True,
                num_requests: int = BENCH_REQUESTS, **overrides) -> LoopOutcome:
    workdir = Path(workdir)
    skills_root, memory_root = workdir / "skills", workdir / "memory"
    publish_skill(skills_root, skill)
    with MemoryStore(memory_root, skill.name, writer=True, clock=TickClock()) as store:
        platform = SimulatedPlatform(scenario, results_dir=store.experiments_dir)
        ctx = LoopContext(scenario, skills_root, store, skill, platform, proposer=proposer)
        settings = LoopSettings(rounds=rounds, batch=batch, auto_approve=True, seed=seed, critic=critic,
                                num_requests=num_requests, evolve=evolve, **overrides)
        summaries = run_loop(ctx, settings)
        best = read_elites(store, limit=1)
        arms = sum(s.arm_count for s in summaries)
        wasted = sum(s.failed + s.duplicates for s in summaries)
        best_cfg = best[0].system_config if best else None
        verification = None
        if best_cfg is not None:
            verification = verify(scenario, skill, best_cfg, num_requests)
        return LoopOutcome(best[0].utility if best else -math.inf, best_cfg, summaries, skills_root,
                           memory_root, arms, wasted, verification)


@dataclass(frozen=True)
class Verification:
    feasible: bool
    utility: float
    cost: float
    guardrails: dict


def verify(scenario: Scenario, skill: Skill, config: SystemConfig, num_requests: int = BENCH_REQUESTS) -> Verification:
    """Re-run the recommended config against the initial config as a fresh experiment."""
    spec = ExperimentSpec("verify", skill.initial_config, (("candidate", config),), num_requests,
                          scenario=scenario.name)
    outcome = run_simulated_experiment(spec, scenario, skill.search_space)["candidate"]
    means = outcome.arm.means()
    cost = compute_cost(config, scenario)
    c_max = scenario.c_max if math.isfinite(scenario.c_max) else None
    u = utility(means, skill.north_star, cost, c_max)
    return Verification(u.feasible, u.value, cost, {g.metric: means[g.metric] for g in skill.north_star.guardrails})


def efficacy_trial(scenario, skill, seed: int, rounds: int = 20, batch: int = 4) -> tuple[LoopOutcome, SearchResult]:
    with tempfile.TemporaryDirectory() as tmp:
        loop = run_agentic(scenario, skill, seed, tmp, rounds, batch)
    rand = random_search(scenario, skill, rounds * batch, seed)
    return loop, rand


def ablation_trial(scenario, skill, seed: int, rate: float = 0.3, rounds: int = 20, batch: int = 4):
    """Same fault-injecting actor with and without the critic."""
    out = {}
    for critic in (True, False):
        proposer = FaultInjectingProposer(rate)
        with tempfile.TemporaryDirectory() as tmp:
            res = run_agentic(scenario, skill, seed, tmp, rounds, batch, critic=critic, proposer=proposer)
            res.records = MemoryStore(res.memory_root, skill.name).tasks()
        res.injected = proposer.injected
        res.proposed = proposer.total
        out["critic" if critic else "no_critic"] = res
    return out
