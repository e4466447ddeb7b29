"""Actor, Critic, Online, Insight and Skill agents plus the round driver."""

from .actor import ProposedCandidate, actor_propose, heuristic_propose, scenario_knobs
from .critic import CriticVerdict, Decision, critic_review
from .insight import InsightReport, ParamInsight, insight_cross_learn, insight_self_learn, pearson
from .loop import LoopContext, LoopSettings, RoundSummary, run_loop, run_round
from .online import apply_review, current_control, online_collect, online_launch, online_prepare, resolve_stale
from .skill_agent import skill_compose, skill_evolve, tighten_bounds

__all__ = [
    "CriticVerdict", "Decision", "InsightReport", "LoopContext", "LoopSettings", "ParamInsight",
    "ProposedCandidate", "RoundSummary", "actor_propose", "apply_review", "critic_review",
    "current_control", "heuristic_propose", "scenario_knobs", "insight_cross_learn", "insight_self_learn",
    "online_collect", "online_launch", "online_prepare", "pearson", "resolve_stale", "run_loop",
    "run_round", "skill_compose", "skill_evolve", "tighten_bounds",
]
