"""Command-line entry point: ``rectune <command> --workdir DIR ...``.

Workdir layout::

    manifest.json     run manifest (skill in use, clock, per-round summaries)
    scenario.json     simulated environment
    skills/<name>/vN.json
    memory/<name>/    task records, experiments, elites, insights
    reports/          rendered reports

Exit codes: 0 success, 1 validation error, 2 runtime or platform error,
130 on interrupt.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from .abtest import SimulatedPlatform
from .agents import (LoopContext, LoopSettings, apply_review, critic_review, current_control,
                     insight_self_learn, online_collect, online_launch, online_prepare, resolve_stale,
                     run_loop, scenario_knobs, skill_evolve)
from .agents.actor import ProposedCandidate, actor_propose, heuristic_propose
from .agents.insight import InsightReport
from .agents.loop import platform_validator, round_seed
from .errors import ProposalError, RecTuneError, ValidationError
from .memory import COMPLETED, PROPOSED, REJECTED, MemoryStore, TaskRecord, read_elites
from .simpipeline import compute_cost, load_scenario
from .skillhub import Skill, latest_skill, load_skill, publish_skill, validate_skill
from .storage import TickClock, atomic_write_json, atomic_write_text, read_json, system_clock

log = logging.getLogger("rectune")

MANIFEST = "manifest.json"
SCENARIO = "scenario.json"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INTERRUPT = 0, 1, 2, 130


class UsageError(ValidationError):
    pass


# ------------------------------------------------------------------ workdir


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("rectune") / "data" / name))


class Workdir:
    """Manifest-backed view of an initialized working directory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.exists():
            raise UsageError(f"{self.root} is not an initialized workdir (run 'rectune init')", "workdir")
        self.manifest = read_json(path)
        clock = self.manifest["clock"]
        self.clock = TickClock(clock["start"], clock["ticks"]) if clock["mode"] == "test" else system_clock
        self.scenario = load_scenario(self.root / SCENARIO)
        self.skill_name = self.manifest["skill"]["name"]

    @property
    def skills_root(self) -> Path:
        return self.root / "skills"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def skill(self) -> Skill:
        return latest_skill(self.skills_root, self.skill_name)

    def store(self, writer=True) -> MemoryStore:
        return MemoryStore(self.root / "memory", self.skill_name, writer=writer, clock=self.clock)

    def platform(self, store: MemoryStore, skill: Skill, workers: int = 1) -> SimulatedPlatform:
        return SimulatedPlatform(self.scenario, skill.search_space, results_dir=store.experiments_dir,
                                 workers=workers)

    @property
    def next_round(self) -> int:
        return self.manifest["rounds_completed"] + 1

    def save(self, skill: Skill | None = None):
        if isinstance(self.clock, TickClock):
            self.manifest["clock"]["ticks"] = self.clock.ticks
        if skill is not None:
            self.manifest["skill"]["version"] = skill.version
        atomic_write_json(self.root / MANIFEST, self.manifest)

    def append_round(self, summary: dict, skill_version: int):
        self.manifest["rounds"].append(summary)
        self.manifest["rounds_completed"] = summary["round"]
        self.manifest["skill"]["version"] = skill_version
        self.save()


# ------------------------------------------------------------------ commands


def cmd_init(args) -> int:
    root = Path(args.workdir)
    if root.exists() and any(root.iterdir()) and not args.force:
        raise UsageError(f"{root} is not empty; pass --force to reinitialize", "workdir")
    scenario = load_scenario(args.scenario or builtin_path("planted_scenario.json"))
    skill = load_skill(args.skill or builtin_path("planted_skill.json"), known_metrics=scenario.metrics)
    validate_skill(skill, scenario.metrics)
    overlap = set(skill.search_space.names) & set(scenario.fixed_params)
    if overlap:
        raise ValidationError(f"parameters {sorted(overlap)} are pinned by the scenario", "skill.search_space")
    # everything validated; only now touch the disk
    if root.exists() and args.force:
        for sub in ("skills", "memory", "reports"):
            _rmtree(root / sub)
        for f in (MANIFEST, SCENARIO):
            (root / f).unlink(missing_ok=True)
    for sub in ("skills", "memory", "reports"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / SCENARIO, scenario.canonical())
    publish_skill(root / "skills", skill)
    clock = ({"mode": "test", "start": args.test_clock, "ticks": 0} if args.test_clock is not None
             else {"mode": "system"})
    manifest = {
        "workdir": str(root.resolve()),
        "skill": {"name": skill.name, "version": skill.version},
        "scenario": {"file": SCENARIO, "name": scenario.name},
        "clock": clock,
        "rounds_completed": 0,
        "rounds": [],
        "pending": [],
    }
    atomic_write_json(root / MANIFEST, manifest)
    print(f"initialized {root} with skill {skill.name} v{skill.version} on scenario {scenario.name}")
    return EXIT_OK


def _rmtree(path: Path):
    import shutil
    if path.exists():
        shutil.rmtree(path)


def _llm_client(proposer: str):
    if proposer != "llm":
        return None
    from .llmclient import ChatClient, EndpointConfig, LLMError
    try:
        return ChatClient(EndpointConfig.from_env())
    except LLMError as exc:
        log.warning("model endpoint unavailable (%s); proposals fall back to the heuristic actor", exc)
        return None


def interactive_reviewer(stream_in=None, stream_out=None):
    stream_in = stream_in or sys.stdin
    stream_out = stream_out or sys.stdout

    def review(spec) -> bool:
        print(f"\nExperiment {spec.experiment_id}: {len(spec.arms)} arm(s) vs control "
              f"{spec.control.canonical()}", file=stream_out)
        for arm_id, cfg in spec.arms:
            print(f"  {arm_id}: {cfg.canonical()}", file=stream_out)
        print("Launch this experiment? [y/N] ", end="", file=stream_out, flush=True)
        answer = stream_in.readline().strip().lower()
        return answer in ("y", "yes")
    return review


def _reviewer(args):
    if args.auto_approve:
        return None
    if not sys.stdin.isatty():
        raise ValidationError("no terminal for the review gate; rerun interactively or pass --auto-approve",
                              "auto_approve")
    return interactive_reviewer()


def cmd_loop(args) -> int:
    wd = Workdir(args.workdir)
    reviewer = _reviewer(args)
    settings = LoopSettings(rounds=args.rounds, batch=args.batch, proposer=args.proposer,
                            auto_approve=args.auto_approve, seed=args.seed, workers=args.workers)
    with wd.store() as store:
        skill = wd.skill()
        ctx = LoopContext(wd.scenario, wd.skills_root, store, skill,
                          wd.platform(store, skill, args.workers), _llm_client(args.proposer))

        def on_round(summary):
            wd.append_round(summary.to_dict(), ctx.skill.version)
            best = "n/a" if summary.best_utility is None else f"{summary.best_utility:.4f}"
            print(f"round {summary.round}: {summary.arm_count} arm(s), {summary.rejected} rejected, "
                  f"{summary.failed} failed, best utility {best} ({summary.best_task_id}), "
                  f"skill v{summary.skill_version}")

        try:
            run_loop(ctx, settings, reviewer, start_round=wd.next_round, on_round=on_round)
        finally:
            wd.save()
    return EXIT_OK


# thin wrappers over single agent steps ----------------------------------


def cmd_propose(args) -> int:
    wd = Workdir(args.workdir)
    with wd.store() as store:
        skill = wd.skill()
        resolve_stale(store)
        elites = read_elites(store, limit=LoopSettings.actor_elites)
        seed = round_seed(args.seed, wd.next_round)
        knobs = scenario_knobs(wd.scenario)
        try:
            props = actor_propose(skill, elites, args.batch, args.proposer, seed,
                                  client=_llm_client(args.proposer), **knobs)
        except ProposalError as exc:
            log.warning("model proposer failed (%s); using heuristic proposals", exc)
            props = heuristic_propose(skill, elites, args.batch, seed, **knobs)
        for p in props:
            rec = store.write_task(TaskRecord(store.next_id(), p.canonical(), p.explanation, store.now(),
                                              PROPOSED, round=wd.next_round, origin=p.origin))
            print(f"{rec.id}: {rec.config}")
        wd.save()
    return EXIT_OK


def _pending_proposals(store):
    return [r for r in store.tasks(PROPOSED) if "critic" not in r.check_info]


def cmd_critique(args) -> int:
    wd = Workdir(args.workdir)
    with wd.store() as store:
        skill = wd.skill()
        pending = _pending_proposals(store)
        if not pending:
            print("no proposals awaiting review")
            return EXIT_OK
        history = [r for r in store.tasks() if r.status != PROPOSED]
        props = [ProposedCandidate(json.loads(r.config), r.explanation or "-", r.origin) for r in pending]
        c_max = wd.scenario.c_max if math.isfinite(wd.scenario.c_max) else None
        verdict = critic_review(props, skill, history, args.batch or len(props),
                                lambda cfg: compute_cost(cfg, wd.scenario), c_max)
        for d, rec in zip(verdict.decisions, pending):
            info = {"critic": d.to_dict(), "critic_comments": verdict.comments}
            if d.approved:
                store.update_task(rec.id, check_info=info)
            else:
                store.update_task(rec.id, status=REJECTED, check_info=info)
            print(f"{rec.id}: {'approved' if d.approved else 'rejected (' + d.reason + ')'} {d.message}")
        print(verdict.comments)
        wd.save()
    return EXIT_OK


def cmd_run(args) -> int:
    wd = Workdir(args.workdir)
    reviewer = _reviewer(args)
    with wd.store() as store:
        skill = wd.skill()
        ready = [r for r in store.tasks(PROPOSED) if r.check_info.get("critic", {}).get("approved")]
        if not ready:
            raise ValidationError("no critic-approved proposals; run 'propose' and 'critique' first", "tasks")
        exp_id = f"exp-r{wd.next_round:03d}"
        spec = online_prepare(store, ready, skill, current_control(store, skill), exp_id, wd.scenario.name,
                              args.num_requests, round_seed(args.seed, wd.next_round),
                              auto_approve=args.auto_approve)
        if spec.pending_review:
            ok = reviewer(spec)
            spec = apply_review(store, spec, ok)
            if not ok:
                print(f"{exp_id} declined; {len(ready)} task(s) rejected")
                wd.save()
                return EXIT_OK
        handle, launched = online_launch(wd.platform(store, skill, args.workers), store, spec,
                                         platform_validator(LoopContext(wd.scenario, wd.skills_root, store,
                                                                        skill, None)))
        if handle is not None:
            wd.manifest["pending"].append(handle)
        print(f"{exp_id}: launched {len(launched.arms)} of {len(spec.arms)} arm(s), handle {handle}")
        wd.save()
    return EXIT_OK


def cmd_collect(args) -> int:
    wd = Workdir(args.workdir)
    with wd.store() as store:
        skill = wd.skill()
        platform = wd.platform(store, skill)
        c_max = wd.scenario.c_max if math.isfinite(wd.scenario.c_max) else None
        if not wd.manifest["pending"]:
            print("no experiments awaiting collection")
            return EXIT_OK
        for handle in list(wd.manifest["pending"]):
            done = online_collect(platform, handle, store, skill, lambda cfg: compute_cost(cfg, wd.scenario),
                                  c_max)
            wd.manifest["pending"].remove(handle)
            best = read_elites(store, limit=1)
            b = best[0] if best else None
            wd.append_round({
                "round": wd.next_round, "experiment_id": handle, "arm_count": len(done),
                "proposed": len(done), "rejected": 0,
                "failed": sum(1 for r in done if r.status != COMPLETED), "duplicates": 0,
                "best_utility": b.utility if b else None, "best_task_id": b.id if b else None,
                "best_config": b.config if b else None, "skill_version": skill.version, "review": "approved",
            }, skill.version)
            print(f"{handle}: collected {len(done)} arm(s)")
    return EXIT_OK


def cmd_insight(args) -> int:
    wd = Workdir(args.workdir)
    with wd.store() as store:
        report = insight_self_learn(wd.skill(), store.tasks(), store.now())
        store.write_json(store.insights_path, report.to_dict())
        wd.save()
    if not report.params:
        print("not enough completed tasks for insight")
    for name, pi in sorted(report.params.items()):
        sens = "undefined" if pi.sensitivity is None else f"{pi.sensitivity:.3f}"
        print(f"{name}: sensitivity {sens}, trend {pi.trend:+d}, n={pi.n}")
    for k in report.patterns:
        print(f"pattern: {k.text}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    wd = Workdir(args.workdir)
    with wd.store() as store:
        skill = wd.skill()
        data = store.insights()
        if data is None:
            raise ValidationError("no insight report; run 'rectune insight' first", "insights")
        new = skill_evolve(skill, InsightReport.from_dict(data), store.tasks(), read_elites(store))
        publish_skill(wd.skills_root, new)
        wd.save(skill=new)
    print(f"published {new.name} v{new.version}")
    return EXIT_OK


# ------------------------------------------------------------------ report


def report_tables(wd: Workdir, store: MemoryStore):
    """Per-round rows and elite rows as lists of dicts with a fixed column order."""
    skill = wd.skill()
    metrics = list(wd.scenario.metrics)
    records = store.tasks()
    rounds = sorted({r.round for r in records if r.status == COMPLETED})
    round_rows = []
    for rnd in rounds:
        done = [r for r in records if r.round == rnd and r.status == COMPLETED]
        best = min(done, key=lambda r: (-r.utility, r.id))
        row = {"round": rnd, "experiment": best.results.experiment_id, "arms": len(done), "best_task": best.id,
               "utility": _fmt(best.utility), "feasible": best.feasible, "config": best.config}
        for m in metrics:
            d = best.results.report.metrics[m]
            row[f"{m}_delta_pct"] = _fmt(d.relative_delta_pct)
            row[f"{m}_p_value"] = _fmt(d.p_value)
            row[f"{m}_significant"] = d.significant
        round_rows.append(row)
    elite_rows = []
    for rank, rec in enumerate(read_elites(store), start=1):
        row = {"rank": rank, "task": rec.id, "round": rec.round, "utility": _fmt(rec.utility),
               "feasible": rec.feasible, "config": rec.config}
        for m in metrics:
            row[m] = _fmt(rec.results.arm.means()[m])
        elite_rows.append(row)
    return skill, round_rows, elite_rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and not math.isfinite(v):
        return "-inf" if v < 0 else "inf"
    return repr(float(v))


def render_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _md_table(rows: Sequence[dict]) -> list[str]:
    if not rows:
        return ["(none)"]
    cols = list(rows[0])
    out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        out.append("| " + " | ".join(str(r[c]).replace("|", "\\|") for c in cols) + " |")
    return out


def cmd_report(args) -> int:
    wd = Workdir(args.workdir)
    store = wd.store(writer=False)
    skill, round_rows, elite_rows = report_tables(wd, store)
    if not round_rows:
        print("no completed experiments yet; nothing to report")
        return EXIT_OK
    wd.reports_dir.mkdir(exist_ok=True)
    if args.format == "csv":
        paths = [wd.reports_dir / "rounds.csv", wd.reports_dir / "elites.csv"]
        atomic_write_text(paths[0], render_csv(round_rows))
        atomic_write_text(paths[1], render_csv(elite_rows))
    else:
        lines = [f"# {skill.name} (skill v{skill.version}, scenario {wd.scenario.name})", "",
                 "## Best arm per round", "", *_md_table(round_rows), "", "## Elite archive", "",
                 *_md_table(elite_rows), ""]
        paths = [wd.reports_dir / "report.md"]
        atomic_write_text(paths[0], "\n".join(lines))
    for p in paths:
        print(p)
    return EXIT_OK


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rectune", description="Agentic tuning of a simulated multi-stage recommender.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--workdir", required=True)
        sp.set_defaults(func=fn)
        return sp

    sp = add("init", cmd_init, "create a workdir from a skill and a scenario")
    sp.add_argument("--skill", help="skill JSON (default: built-in planted benchmark skill)")
    sp.add_argument("--scenario", help="scenario JSON (default: built-in planted benchmark scenario)")
    sp.add_argument("--force", action="store_true", help="reinitialize a non-empty workdir")
    sp.add_argument("--test-clock", type=int, metavar="EPOCH",
                    help="deterministic clock starting at EPOCH seconds (for reproducible files)")

    def loop_flags(sp, batch_default=4):
        sp.add_argument("--batch", type=_positive, default=batch_default)
        sp.add_argument("--proposer", choices=("heuristic", "llm"), default="heuristic")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=_positive, default=1)

    sp = add("loop", cmd_loop, "run optimization rounds")
    sp.add_argument("--rounds", type=_positive, default=1)
    sp.add_argument("--auto-approve", action="store_true", help="skip the interactive review gate")
    loop_flags(sp)

    sp = add("propose", cmd_propose, "write new proposals")
    loop_flags(sp)
    sp = add("critique", cmd_critique, "critic review of pending proposals")
    sp.add_argument("--batch", type=int, default=0, help="keep at most this many (default: all that pass)")
    sp = add("run", cmd_run, "launch an experiment for critic-approved proposals")
    sp.add_argument("--auto-approve", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--num-requests", type=_positive, default=LoopSettings.num_requests)
    sp.add_argument("--workers", type=_positive, default=1)
    add("collect", cmd_collect, "collect finished experiments")
    add("insight", cmd_insight, "compute parameter sensitivities and patterns")
    add("evolve", cmd_evolve, "publish the next skill version from the latest insights")
    sp = add("report", cmd_report, "render per-round and elite tables")
    sp.add_argument("--format", choices=("md", "csv"), default="md")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted; rerun to resolve in-flight tasks", file=sys.stderr)
        return EXIT_INTERRUPT
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RecTuneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
