import json
from itertools import chain, combinations

import pytest

from epsvp.controller import (NO_EVENT, TICK, Action, BpcuFsm, BreakBeforeMakeParams,
                              Observation, Transition, generate_priority_controller,
                              load_controller, parse_guard, priority_target,
                              refine_break_before_make)
from epsvp.errors import FsmError, ParseError, UnknownIdError, ValidationError
from epsvp.requirements import check_priority, compile_no_paralleling
from epsvp.topology import ContactorConfig, Status

F = frozenset


def subsets(xs):
    return [F(c) for c in chain.from_iterable(combinations(xs, k) for k in range(len(xs) + 1))]


def obs(topo, available, closed=(), safe=None):
    status = {s: ("Available" if s in available else "Off") for s in topo.sources}
    return Observation.make(status, topo.contactors, closed, safe)


def run(fsm, state, o, event=TICK):
    """One tick plus internal steps until nothing changes."""
    actions = []
    for _ in range(64):
        nxt, acts = fsm.step(state, event, o)
        if nxt == state and not acts and event != TICK:
            return state, actions
        actions.extend(acts)
        state = nxt
        event = NO_EVENT
    raise AssertionError("no quiescence")


def feasible_optimum(topo, lists, available):
    """Brute force: does some safe configuration satisfy every priority list?"""
    prop = compile_no_paralleling(topo)
    for closed in subsets(topo.contactors):
        cfg = ContactorConfig.from_closed(topo, closed)
        if prop.evaluate(cfg):
            continue
        v = check_priority(topo, lists, cfg, available)
        if all(x.ok or x.expected is None for x in v.values()):
            return True
    return False


@pytest.mark.parametrize("available", subsets(("L1", "APU", "R1")))
def test_target_is_safe_and_prioritised(topo, lists, available):
    t = priority_target(topo, lists, available)
    cfg = ContactorConfig.from_closed(topo, t.closed)
    assert compile_no_paralleling(topo).evaluate(cfg) is None
    verdicts = check_priority(topo, lists, cfg, available)
    if feasible_optimum(topo, lists, available):
        assert all(v.ok or v.expected is None for v in verdicts.values())


def test_shedding_closed_form(topo, lists):
    # APU (3000 W) alone feeds 2 x 1322.5 W + 2 x 661.25 W: both sheddable loads go.
    assert priority_target(topo, lists, {"APU"}).shed == {"LB1S", "LB2S"}
    # L1 (4000 W) carries the full 3967.5 W.
    assert priority_target(topo, lists, {"L1"}).shed == set()
    # Nothing available: every sheddable load is shed.
    t = priority_target(topo, lists, set())
    assert t.closed == set() and t.shed == {"LB1S", "LB2S"}


def test_naive_controller_reaches_every_target(topo, lists, naive):
    states = set(naive.states)
    for a in subsets(topo.sources):
        for b in subsets(topo.sources):
            start = naive.initial if a is None else priority_target(topo, lists, a).name
            state, _ = run(naive, naive.initial, obs(topo, a))
            assert state == start
            want = priority_target(topo, lists, b)
            end, acts = run(naive, state, obs(topo, b))
            assert end == want.name and end in states
            here = priority_target(topo, lists, a)
            assert {x.target for x in acts if x.verb == "close"} == want.closed - here.closed
            assert {x.target for x in acts if x.verb == "open"} == here.closed - want.closed


def test_generated_controllers_deterministic(topo, naive, refined):
    assert naive.nondeterminism(topo) is None
    assert refined.nondeterminism(topo) is None


def test_nondeterminism_detected(topo):
    fsm = BpcuFsm(["init", "a", "b"], "init", [
        Transition("init", "a", parse_guard("L1 == Available")),
        Transition("init", "b", parse_guard("APU == Available")),
    ])
    state, event, env = fsm.nondeterminism(topo)
    assert state == "init" and event == TICK
    assert env == {"APU": "Available", "L1": "Available"}


def test_refined_never_opens_and_closes_together(refined):
    for tr in refined.transitions:
        assert not (tr.verbs("open") and tr.verbs("close"))


def test_refined_waits_for_safe_and_delay(topo, lists, refined):
    params = refined.refinement
    wait = params.confirm_samples + 1  # confirm samples, then one tick of delay
    for a in subsets(topo.sources):
        start, _ = run(refined, refined.initial, obs(topo, a))
        for b in subsets(topo.sources):
            want = priority_target(topo, lists, b)
            state, closed = start, set(priority_target(topo, lists, a).closed)
            opened_at, closed_at = None, None
            for k in range(20):
                state, acts = run(refined, state, obs(topo, b, closed))
                for x in acts:
                    if x.verb == "open":
                        closed.discard(x.target)
                        opened_at = k
                    elif x.verb == "close":
                        closed.add(x.target)
                        closed_at = k
            assert state == want.name and closed == want.closed
            if opened_at is not None and closed_at is not None:
                assert closed_at - opened_at >= wait


def test_refined_resets_when_unsafe(topo, refined):
    all_up = obs(topo, {"L1", "APU", "R1"})
    state, _ = run(refined, refined.initial, all_up)
    # L1 fails: the machine opens C1 and waits while C1 never becomes safe.
    stuck = obs(topo, {"APU", "R1"}, closed={"C5"}, safe=set())
    state, acts = run(refined, state, stuck)
    assert [str(x) for x in acts] == ["open(C1)"]
    for _ in range(10):
        state, acts = run(refined, state, stuck)
        assert not acts and state.endswith("confirm1")


def test_delay_ticks_rounding(naive):
    fsm = refine_break_before_make(naive, BreakBeforeMakeParams(0.1, 2, 2.5e-3))
    assert any(s.endswith("delay3") for s in fsm.states)
    assert not any(s.endswith("delay4") for s in fsm.states)
    assert any(s.endswith("confirm2") for s in fsm.states)
    assert not any(s.endswith("confirm3") for s in fsm.states)


@pytest.mark.parametrize("kw", [dict(current_threshold_fraction=0.0),
                                dict(current_threshold_fraction=1.0),
                                dict(confirm_samples=0), dict(deterministic_delay=-1.0)])
def test_refinement_params_validated(kw):
    with pytest.raises(ValidationError):
        BreakBeforeMakeParams(**kw)


def test_guard_language():
    g = parse_guard("L1 == Available and (C1 != Open or not safe_C1)")
    assert g.names == {"L1", "C1", "safe_C1"}
    assert g({"L1": "Available", "C1": "Closed", "safe_C1": True, "Available": "Available",
              "Open": "Open"})
    assert parse_guard("")({}) is True
    for bad in ["__import__('os')", "L1.x", "a == b == c", "1 + 2", "L1 ==", "[x]"]:
        with pytest.raises(ParseError):
            parse_guard(bad)
    with pytest.raises(FsmError):
        parse_guard("missing")({})


def test_action_parsing():
    assert Action.parse("open(C1)") == Action("open", "C1")
    assert Action.parse("shed LB1S") == Action("shed", "LB1S")
    for bad in ["toggle(C1)", "open()", "open"]:
        with pytest.raises(ParseError):
            Action.parse(bad)


def test_round_trip_preserves_behaviour(topo, refined):
    again = load_controller(refined.dumps(), topo)
    assert again.states == refined.states
    assert again.refinement == refined.refinement
    assert [(t.source, t.target, t.guard.text, t.actions, t.on) for t in again.transitions] \
        == [(t.source, t.target, t.guard.text, t.actions, t.on) for t in refined.transitions]
    for a in subsets(topo.sources):
        o = obs(topo, a)
        for s in refined.states[:20]:
            assert again.step(s, TICK, o) == refined.step(s, TICK, o)


def test_structural_errors(topo):
    with pytest.raises(ValidationError):
        BpcuFsm(["a"], "b", [])
    with pytest.raises(ValidationError):
        BpcuFsm(["a", "a"], "a", [])
    with pytest.raises(ValidationError):
        BpcuFsm(["a"], "a", [Transition("a", "z")])
    with pytest.raises(ValidationError):
        BpcuFsm(["a"], "a", [Transition("a", "a", on="clock")])
    fsm = BpcuFsm(["a"], "a", [Transition("a", "a", actions=(Action("close", "C9"),))])
    with pytest.raises(UnknownIdError):
        fsm.validate(topo)
    fsm = BpcuFsm(["a"], "a", [Transition("a", "a", parse_guard("G9 == Available"))])
    with pytest.raises(UnknownIdError):
        fsm.validate(topo)
    with pytest.raises(FsmError):
        fsm.step("nowhere", TICK, {})
    with pytest.raises(FsmError):
        fsm.step("a", "clock", {})
    with pytest.raises(ParseError):
        BpcuFsm.from_dict({"states": ["a"]})


def test_default_is_self_loop(topo):
    fsm = BpcuFsm(["a", "b"], "a", [Transition("a", "b", parse_guard("false"))])
    assert fsm.step("a", TICK, obs(topo, set())) == ("a", ())


def test_priority_list_without_reachable_source(topo, lists):
    from epsvp.requirements import PriorityList
    t = topo.without("C1", "C2")
    with pytest.raises(ValidationError):
        generate_priority_controller(t, [PriorityList("B1", ("L1", "APU"))])
