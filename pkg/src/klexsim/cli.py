"""Experiment runner: single simulations, seeded campaigns, and the built-in
figure regressions.

Exit codes: 0 pass, 1 violation, 2 inconclusive (budget ran out before a
verdict), 64 usage error.  The CLI is a thin shell over the library; every
run is reproducible from its flags.
"""

from __future__ import annotations

import argparse
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import monitor, scenarios
from .appmodel import ScenarioError, parse_scenario
from .simnet import (
    RandomPolicy,
    ReplayPolicy,
    RoundRobinPolicy,
    SchedulerError,
    SimParams,
    Simulator,
    Trace,
    default_timeout,
    parse_replay,
    traversal_allowance,
)
from .topology import TopologyError, TreeTopology, parse_topology

PASS, VIOLATION, INCONCLUSIVE, USAGE = 0, 1, 2, 64


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    topology: TreeTopology
    k: int = 1
    ell: int = 1
    cmax: int = 1
    seed: int = 0
    policy: str = "rr"
    replay_path: str | None = None
    budget: int | None = None  # None: 50 controller-traversal allowances
    timeout: int | None = None  # None: the default generous threshold
    fault: str = "none"
    scenario_path: str | None = None
    out_dir: str | None = None

    def validate(self) -> None:
        if self.k < 1:
            raise UsageError("k must be at least 1")
        if self.k > self.ell:
            raise UsageError("k must not exceed ell")
        if self.cmax < 0:
            raise UsageError("cmax must be non-negative")
        if self.policy not in ("rr", "rand", "replay"):
            raise UsageError(f"policy must be rr, rand or replay, not {self.policy!r}")
        if self.policy == "replay" and not self.replay_path:
            raise UsageError("policy replay requires --replay PATH")
        if self.fault not in ("none", "arbitrary"):
            raise UsageError(f"fault must be none or arbitrary, not {self.fault!r}")
        if self.budget is not None and self.budget < 0:
            raise UsageError("budget must be non-negative")
        if self.timeout is not None and self.timeout <= 0:
            raise UsageError("timeout must be positive")

    def effective_budget(self) -> int:
        if self.budget is not None:
            return self.budget
        return 50 * traversal_allowance(self.topology, self.ell, self.cmax)

    def effective_timeout(self) -> int:
        if self.timeout is not None:
            return self.timeout
        return default_timeout(self.topology, self.ell, self.cmax)


def build_simulator(cfg: RunConfig) -> Simulator:
    return Simulator(
        cfg.topology,
        SimParams(k=cfg.k, ell=cfg.ell, cmax=cfg.cmax, timeout=cfg.effective_timeout()),
    )


def make_policy(cfg: RunConfig, seed: int):
    if cfg.policy == "rr":
        return RoundRobinPolicy()
    if cfg.policy == "rand":
        return RandomPolicy(seed)
    choices = parse_replay(Path(cfg.replay_path).read_text())
    return ReplayPolicy(choices)


def run_once(cfg: RunConfig) -> tuple[int, str, Trace]:
    """Run one simulation; returns (exit status, report text, trace)."""
    cfg.validate()
    sim = build_simulator(cfg)
    workload = None
    if cfg.scenario_path is not None:
        workload = parse_scenario(Path(cfg.scenario_path).read_text(), cfg.k)
    initial = (
        sim.inject_arbitrary(cfg.seed) if cfg.fault == "arbitrary"
        else sim.initial_configuration()
    )
    trace = sim.run(initial, make_policy(cfg, cfg.seed), cfg.effective_budget(),
                    workload=workload)

    stab = monitor.stabilization_time(trace)
    safety = monitor.check_safety(trace, stab)
    fairness = monitor.check_fairness(trace)
    report = monitor.render_report(trace, cfg.topology, cfg.ell)

    if not safety.passed or (not fairness.passed and not fairness.inconclusive):
        status = VIOLATION
    elif stab is None or fairness.inconclusive:
        status = INCONCLUSIVE
    else:
        status = PASS

    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.txt").write_text(trace.text())
        (out / "report.txt").write_text(report)
    return status, report, trace


@dataclass
class CampaignResult:
    status: int
    report: str
    stabilization_steps: list[int] = field(default_factory=list)


def run_campaign(cfg: RunConfig, seeds: int) -> CampaignResult:
    """Seeded convergence campaign over arbitrary initial configurations:
    every seed must stabilize within budget, keep legitimacy from then on,
    and stay safe after stabilization."""
    cfg.validate()
    if seeds < 1:
        raise UsageError("campaign needs at least one seed")
    sim = build_simulator(cfg)
    budget = cfg.effective_budget()
    stabs: list[int] = []
    lines: list[str] = []
    failures = inconclusive = 0
    max_wait: int | None = None
    for seed in range(cfg.seed, cfg.seed + seeds):
        trace = sim.run(sim.inject_arbitrary(seed), make_policy(cfg, seed), budget)
        stab = monitor.stabilization_time(trace)
        regressions = monitor.closure_regressions(trace)
        safety = monitor.check_safety(trace, stab)
        fairness = monitor.check_fairness(trace)
        if fairness.max_waiting is not None:
            max_wait = max(max_wait or 0, fairness.max_waiting)
        verdict = "pass"
        if not safety.passed or regressions:
            verdict = "violation"
            failures += 1
        elif stab is None:
            verdict = "inconclusive"
            inconclusive += 1
        else:
            stabs.append(stab)
        lines.append(f"seed={seed} stabilization={stab} regressions={regressions} "
                     f"verdict={verdict}")
    status = (VIOLATION if failures else
              INCONCLUSIVE if inconclusive else PASS)
    summary = [
        f"campaign: {seeds} seeds, {len(stabs)} stabilized, "
        f"{inconclusive} inconclusive, {failures} violations",
    ]
    if stabs:
        summary.append(
            "stabilization steps: min=%d median=%d max=%d (budget %d)"
            % (min(stabs), statistics.median(stabs), max(stabs), budget)
        )
    bound = monitor.waiting_time_bound(cfg.topology.n, cfg.ell)
    if max_wait is not None:
        summary.append(f"max observed waiting: {max_wait} (bound {bound}, "
                       f"ratio {max_wait / bound:.3f})")
    report = "\n".join(summary + lines) + "\n"
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "campaign.txt").write_text(report)
    return CampaignResult(status, report, stabs)


def run_figure(name: str) -> tuple[int, str]:
    if name not in scenarios.FIGURE_NAMES:
        raise UsageError(f"unknown figure {name!r}; choose from "
                         f"{', '.join(scenarios.FIGURE_NAMES)}")
    result = scenarios.run_figure(name)
    lines = [
        f"{result.name}: failure reproduced in diagnostic mode: "
        f"{'yes' if result.reproduced else 'NO'}",
        f"{result.name}: full token complement satisfies all requests: "
        f"{'yes' if result.recovered else 'NO'}",
        result.detail,
    ]
    status = PASS if (result.reproduced and result.recovered) else VIOLATION
    return status, "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="klexsim",
        description="Simulate self-stabilizing k-out-of-l exclusion on an "
                    "oriented tree and check its correctness properties.",
    )
    p.add_argument("--topology", metavar="PATH", help="topology description file")
    p.add_argument("--scenario", metavar="PATH", help="request workload file")
    p.add_argument("--k", type=int, default=1, help="max units per request")
    p.add_argument("--ell", type=int, default=1, help="total resource units")
    p.add_argument("--cmax", type=int, default=1,
                   help="bound on arbitrary initial messages per channel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=["rr", "rand", "replay"], default="rr")
    p.add_argument("--replay", metavar="PATH", help="scheduler choices to replay")
    p.add_argument("--budget", type=int, help="max scheduler steps")
    p.add_argument("--timeout", type=int, help="root timeout threshold in steps")
    p.add_argument("--fault", choices=["none", "arbitrary"], default="none")
    p.add_argument("--out", metavar="DIR", help="write trace and report here")
    p.add_argument("--figure", metavar="NAME",
                   help="run a built-in regression scenario: "
                        + ", ".join(scenarios.FIGURE_NAMES))
    p.add_argument("--campaign", type=int, metavar="N",
                   help="run N seeded arbitrary-fault convergence runs")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code not in (0, None) else 0
    try:
        if args.figure is not None:
            status, text = run_figure(args.figure)
            print(text, end="")
            return status

        if args.topology is None:
            raise UsageError("--topology is required unless --figure is used")
        topo = parse_topology(Path(args.topology).read_text())
        cfg = RunConfig(
            topology=topo,
            k=args.k,
            ell=args.ell,
            cmax=args.cmax,
            seed=args.seed,
            policy=args.policy,
            replay_path=args.replay,
            budget=args.budget,
            timeout=args.timeout,
            fault=args.fault,
            scenario_path=args.scenario,
            out_dir=args.out,
        )
        if args.campaign is not None:
            result = run_campaign(cfg, args.campaign)
            print(result.report, end="")
            return result.status
        status, report, _ = run_once(cfg)
        print(report, end="")
        return status
    except (UsageError, TopologyError, ScenarioError, SchedulerError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
