import pytest

from klexsim.monitor import (
    LivenessScenario,
    census,
    check_fairness,
    check_kl_liveness,
    check_safety,
    closure_regressions,
    first_legitimate,
    is_legitimate,
    render_report,
    stabilization_time,
    traversal_observations,
    waiting_time_bound,
)
from klexsim.protocol import IN, REQ, Ctrl, PrioT, PushT, Reserved, ResT
from klexsim.simnet import RoundRobinPolicy, SimParams, Simulator
from klexsim.topology import parse_topology, random_tree

STAR = parse_topology("n 3 root r\nr: a b\na: r\nb: r\n")
CHAIN5 = parse_topology(
    "n 5 root r\nr: a\na: r b\nb: a c\nc: b d\nd: c\n"
)


def make_sim(topo=STAR, k=2, ell=3, cmax=2, timeout=500):
    return Simulator(topo, SimParams(k=k, ell=ell, cmax=cmax, timeout=timeout))


def recount(cfg, topo):
    """Independent census: a second, separately written counting pass."""
    tokens = {"ResT": 0, "PrioT": 0, "PushT": 0}
    valid_ctrl = 0
    for key in sorted(cfg.channels):
        receiver, label = key
        for msg in list(cfg.channels[key]):
            name = type(msg).__name__
            if name in tokens:
                tokens[name] += 1
            else:
                st = cfg.states[receiver]
                from_succ = label == st.succ and msg.c == st.myc
                fresh_from_parent = (
                    receiver != topo.root and label == 0 and msg.c != st.myc
                )
                if from_succ or fresh_from_parent:
                    valid_ctrl += 1
    held_res = sum(len(cfg.states[p].rset) for p in topo.process_ids)
    held_prio = sum(1 for p in topo.process_ids if cfg.states[p].prio is not None)
    return (
        tokens["ResT"] + held_res,
        tokens["PrioT"] + held_prio,
        tokens["PushT"],
        valid_ctrl,
    )


class TestCensus:
    def test_empty_configuration(self):
        sim = make_sim()
        rep = census(sim.empty_configuration(), STAR)
        assert (rep.res_tokens, rep.prio_tokens, rep.push_tokens, rep.ctrl_tokens) == (0, 0, 0, 0)

    def test_all_tokens_reserved_counts_as_held(self):
        # the deadlock shape: every token reserved, none free
        sim = Simulator(CHAIN5, SimParams(k=3, ell=5, cmax=3, timeout=None))
        cfg = sim.empty_configuration()
        cfg.states["a"].rset = [Reserved(0, 0), Reserved(0, 1)]
        cfg.states["b"].rset = [Reserved(0, 2)]
        cfg.states["c"].rset = [Reserved(0, 3)]
        cfg.states["d"].rset = [Reserved(0, 4)]
        rep = census(cfg, CHAIN5)
        assert rep.res_tokens == 5
        free = sum(1 for key in sim.channel_keys for m in cfg.channels[key]
                   if isinstance(m, ResT))
        assert free == 0

    def test_matches_independent_recount_on_injected_configs(self):
        for seed in range(60):
            topo = random_tree(seed, 2 + seed % 8)
            sim = Simulator(topo, SimParams(k=2, ell=4, cmax=3, timeout=None))
            cfg = sim.inject_arbitrary(seed)
            rep = census(cfg, topo)
            assert (rep.res_tokens, rep.prio_tokens, rep.push_tokens,
                    rep.ctrl_tokens) == recount(cfg, topo)


class TestLegitimacy:
    def test_canonical_configuration_is_legitimate(self):
        sim = make_sim()
        assert is_legitimate(sim.initial_configuration(), STAR, 3)

    def test_two_pushers_not_legitimate(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.channels[("b", 0)].append(PushT())
        assert not is_legitimate(cfg, STAR, 3)

    def test_missing_resource_not_legitimate(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        for i, m in enumerate(cfg.channels[("a", 0)]):
            if isinstance(m, ResT):
                del cfg.channels[("a", 0)][i]
                break
        assert not is_legitimate(cfg, STAR, 3)

    def test_reset_in_progress_not_legitimate(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.states["r"].reset = True
        assert not is_legitimate(cfg, STAR, 3)

    def test_stale_second_ctrl_not_legitimate(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.channels[("r", 1)].append(Ctrl(7, False, 0, 0))
        assert not is_legitimate(cfg, STAR, 3)

    def test_inflated_root_counter_not_legitimate(self):
        # nominal census but SToken carries a stale count: the next wrap
        # would see ell+1 and reset, so this must not be legitimate
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.states["r"].stoken = 1
        assert not is_legitimate(cfg, STAR, 3)


class TestStabilization:
    def test_canonical_start_stabilizes_at_zero(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 300)
        assert stabilization_time(trace) == 0
        assert closure_regressions(trace) == 0

    def test_excess_tokens_reset_then_stabilize(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.channels[("b", 0)].extend([ResT(uid=90), ResT(uid=91)])
        trace = sim.run(cfg, RoundRobinPolicy(), 600)
        stab = stabilization_time(trace)
        assert stab is not None and stab > 0
        obs = traversal_observations(trace)
        assert any(o.new_reset for o in obs), "excess must trigger a reset"
        # flush completion: census zero at the end of each clean reset tour
        for o in obs:
            if o.arriving_r and o.clean:
                assert o.census_before.species() == (0, 0, 0)

    def test_deficit_replenished_without_reset(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        q = cfg.channels[("a", 0)]
        # drop one resource token and the pusher
        for idx in sorted((i for i, m in enumerate(q)
                           if isinstance(m, (ResT, PushT))), reverse=True)[:2]:
            del q[idx]
        trace = sim.run(cfg, RoundRobinPolicy(), 600)
        stab = stabilization_time(trace)
        assert stab is not None
        assert not any(o.new_reset for o in traversal_observations(trace))

    def test_never_legitimate_reports_none(self):
        sim = make_sim(timeout=None)
        trace = sim.run(sim.empty_configuration(), RoundRobinPolicy(), 50)
        assert stabilization_time(trace) is None
        assert first_legitimate(trace) is None


class TestTraversalCounting:
    def test_counts_match_census_at_every_wrap(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 2000)
        obs = traversal_observations(trace)
        assert len(obs) > 10
        for o in obs:
            assert not o.new_reset
            assert o.res_total == o.census_before.res_tokens == 3
            assert o.prio_total == o.census_before.prio_tokens == 1
            assert o.push_total == o.census_before.push_tokens == 1

    def test_clean_flag_requires_single_ctrl_history(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 800)
        obs = traversal_observations(trace)
        assert all(o.clean for o in obs[1:])  # first tour has no observed start


class TestSafety:
    def test_hand_built_overuse_fails(self):
        sim = make_sim(k=1, ell=1)
        cfg = sim.empty_configuration()
        cfg.states["a"].state = IN
        cfg.states["a"].rset = [Reserved(0, 0), Reserved(0, 1)]  # k+1 units in CS
        trace = sim.run(cfg, RoundRobinPolicy(), 1)
        verdict = check_safety(trace, stabilization=0)
        assert not verdict.passed
        assert any("in CS" in v for v in verdict.post_stabilization)

    def test_prestabilization_violations_recorded_not_failed(self):
        sim = make_sim(k=1, ell=1, timeout=20)
        cfg = sim.empty_configuration()
        cfg.states["a"].state = IN
        cfg.states["a"].rset = [Reserved(0, 0), Reserved(0, 1)]
        cfg.app.remaining["a"] = 1
        trace = sim.run(cfg, RoundRobinPolicy(), 400)
        stab = stabilization_time(trace)
        assert stab is not None
        verdict = check_safety(trace, stab)
        assert verdict.passed
        assert verdict.pre_stabilization

    def test_clean_run_passes(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 500)
        assert check_safety(trace).passed


class TestFairnessChecker:
    def test_satisfied_requests_pass_with_waits(self):
        from klexsim.appmodel import Workload, WorkloadEvent

        sim = make_sim(timeout=None)
        wl = Workload([WorkloadEvent(0, "a", 1, 2), WorkloadEvent(1, "b", 2, 2)], k=2)
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 400, workload=wl)
        verdict = check_fairness(trace)
        assert verdict.passed and not verdict.inconclusive
        assert all(r.waiting is not None for r in verdict.requests)
        assert verdict.max_waiting <= waiting_time_bound(3, 3)

    def test_budget_exhaustion_is_inconclusive(self):
        from klexsim.appmodel import Workload, WorkloadEvent

        sim = make_sim(timeout=None)
        wl = Workload([WorkloadEvent(0, "a", 2, 5)], k=2)
        # 2 steps: request armed but tokens cannot have arrived yet
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 2, workload=wl)
        verdict = check_fairness(trace)
        assert not verdict.passed and verdict.inconclusive

    def test_quiescent_starvation_is_failure(self):
        sim = make_sim(timeout=None)
        cfg = sim.empty_configuration()  # no tokens anywhere, none will come
        cfg.states["a"].state = REQ
        cfg.states["a"].need = 1
        trace = sim.run(cfg, RoundRobinPolicy(), 50)
        assert trace.ended == "quiescent"
        verdict = check_fairness(trace)
        assert not verdict.passed and not verdict.inconclusive


class TestKlLiveness:
    def test_empty_requesters_vacuously_pass(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 10)
        scenario = LivenessScenario(pinned={"a": 2}, requesters={})
        assert check_kl_liveness(scenario, trace).passed

    def test_requester_bound_validated(self):
        with pytest.raises(ValueError, match="ell - alpha"):
            LivenessScenario(pinned={"a": 2}, requesters={"b": 2}).validate(ell=3)

    def test_pinned_scenario_satisfies_a_requester(self):
        from klexsim.appmodel import Workload, WorkloadEvent
        import math

        sim = make_sim(k=2, ell=3)
        wl = Workload([
            WorkloadEvent(0, "a", 2, math.inf),  # pinned forever with 2 units
            WorkloadEvent(30, "b", 1, 2),
        ], k=2)
        scenario = LivenessScenario(pinned={"a": 2}, requesters={"b": 1})
        scenario.validate(ell=3)
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 600, workload=wl)
        verdict = check_kl_liveness(scenario, trace)
        assert verdict.passed
        assert "b" in verdict.satisfied
        # the pinned process never leaves its critical section
        assert trace.final.states["a"].state == IN


class TestConservation:
    def test_census_conserved_between_wraps_without_reset(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 1500)
        prev = trace.initial_census
        for rec in trace.records:
            if rec.traversal_end is None:
                assert rec.census.species() == prev.species()
            prev = rec.census

    def test_flush_monotonically_decreases_census(self):
        sim = make_sim()
        cfg = sim.initial_configuration()
        cfg.channels[("b", 0)].extend([ResT(), PushT()])
        sim.stamp_uids(cfg)
        trace = sim.run(cfg, RoundRobinPolicy(), 800)
        flushing = False
        prev = trace.initial_census
        for rec in trace.records:
            if flushing and rec.traversal_end is None:
                assert sum(rec.census.species()) <= sum(prev.species())
            if rec.traversal_end is not None:
                flushing = rec.traversal_end.new_reset
            prev = rec.census


class TestPusherCirculation:
    def test_every_process_pushed_in_every_window(self):
        # post-stabilization the unique pusher follows the ring forever, so
        # each process receives it at least once per bounded window
        sim = make_sim(timeout=None)
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 3000)
        push_steps = {pid: [] for pid in STAR.process_ids}
        for rec in trace.records:
            for line in rec.lines:
                if "event=deliver msg=PushT" in line:
                    push_steps[line.split("proc=")[1].split()[0]].append(rec.step)
        ring = 2 * (STAR.n - 1)
        window = 2 * ring * (3 + 4)  # ring length times maximal queueing
        for pid, steps in push_steps.items():
            assert steps, f"{pid} never received the pusher"
            gaps = [b - a for a, b in zip(steps, steps[1:])]
            assert max(gaps) <= window, f"{pid} went {max(gaps)} steps unpushed"


class TestReport:
    def test_render_mentions_key_facts(self):
        sim = make_sim()
        trace = sim.run(sim.initial_configuration(), RoundRobinPolicy(), 100)
        text = render_report(trace, STAR, 3, sample_every=50)
        assert "stabilization step: 0" in text
        assert "safety: pass" in text
        assert "census timeline:" in text
