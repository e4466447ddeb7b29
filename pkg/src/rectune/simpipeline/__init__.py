"""Deterministic simulator of a pre-rank / rank / re-rank recommendation pipeline."""

from .config import SystemConfig
from .evaluate import evaluate_config, request_samples
from .kernels import BACKEND as KERNEL_BACKEND
from .objective import Guardrail, NorthStar, PrimaryMetric, Utility, utility
from .pipeline import (Feedback, MetricVector, RankedList, compute_cost, compute_metrics,
                       effective_config, run_pre, run_rank, run_re, run_system, simulate_feedback)
from .scenario import HeadSpec, Item, Request, Scenario, generate_request, load_scenario, save_scenario

__all__ = [
    "Feedback", "Guardrail", "HeadSpec", "Item", "KERNEL_BACKEND", "MetricVector", "NorthStar",
    "PrimaryMetric", "RankedList", "Request", "Scenario", "SystemConfig", "Utility",
    "compute_cost", "compute_metrics", "effective_config", "evaluate_config", "generate_request",
    "load_scenario", "request_samples", "run_pre", "run_rank", "run_re", "run_system",
    "save_scenario", "simulate_feedback", "utility",
]
