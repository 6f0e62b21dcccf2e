import json

import numpy as np
import pytest
from gen import random_program
from hypothesis import given, settings
from hypothesis import strategies as st

from lisa.agent import (
    ActionDef,
    ActionKind,
    ActionRef,
    AgentProgram,
    AgentState,
    BeliefBase,
    CycleRecord,
    IntentionStatus,
    Literal,
    LogicRule,
    Plan,
    Predicate,
    Source,
    Trace,
    applicable_plans,
    apply_rules,
    brf_events,
    buf_update,
    initial_state,
    preds,
    run_agent,
    step_cycle,
)
from lisa.errors import DeclarationError
from lisa.rng import Sampler, counter_uniform, counter_uniform_array

P = Predicate


def rule(head, *body):
    return LogicRule(P(head), tuple(Literal(P(b.lstrip("~")), not b.startswith("~")) for b in body))


def plan(pid, trigger, body=("noop",), context=()):
    refs = tuple(ActionRef(b) if "(" not in b else ActionRef(b[:b.index("(")], P(b[b.index("(") + 1:-1])) for b in body)
    ctx = tuple(Literal(P(c.lstrip("~")), not c.startswith("~")) for c in context)
    return Plan(pid, f"plan{pid}", P(trigger), ctx, refs)


# ---------------------------------------------------------------- predicates


def test_predicate_order_and_text():
    assert P("a") < P("a", ("x",)) < P("b")
    assert str(P("at", ("x", "y"))) == "at(x,y)"
    assert P.parse(" at( x , y ) ") == P("at", ("x", "y"))
    assert P("a") == P("a") and hash(P("a")) == hash(P("a"))
    with pytest.raises(ValueError):
        P("")


# ---------------------------------------------------------------- buf_update


def test_buf_additive():
    base = BeliefBase.notes(["m"])
    out = buf_update(base, preds(["p"]), ())
    assert dict(out.items()) == {P("m"): Source.MENTAL_NOTE, P("p"): Source.PERCEPT}


def test_buf_drops_nonpersistent_percept():
    base = BeliefBase({P("p"): Source.PERCEPT})
    assert len(buf_update(base, (), ())) == 0


def test_buf_identity_on_persisting_percept():
    base = BeliefBase({P("m"): Source.MENTAL_NOTE, P("p"): Source.PERCEPT})
    out = buf_update(base, preds(["p"]), preds(["f"]))
    assert out.predicates() == preds(["m", "p", "f"])
    assert out.source(P("f")) is Source.ACTION_FEEDBACK


def test_buf_feedback_is_not_persistent():
    base = buf_update(BeliefBase(), (), preds(["f"]))
    assert P("f") not in buf_update(base, (), ())


def test_buf_undeclared_predicate():
    with pytest.raises(DeclarationError, match="zz"):
        buf_update(BeliefBase(), preds(["zz"]), (), declared=preds(["p"]))


# ---------------------------------------------------------------- brf_events


@pytest.mark.parametrize(
    "prev, cur, events",
    [(["a"], ["a", "b"], ["b"]), (["a"], ["a"], []), (["a", "b"], ["b", "c"], ["c"])],
)
def test_brf_events(prev, cur, events):
    assert brf_events(BeliefBase.notes(prev), BeliefBase.notes(cur)).added == preds(events)


def test_brf_ignores_source_tags():
    prev = BeliefBase({P("a"): Source.PERCEPT})
    cur = BeliefBase({P("a"): Source.MENTAL_NOTE})
    assert len(brf_events(prev, cur)) == 0


# ---------------------------------------------------------------- apply_rules


def test_rules_one_step():
    assert apply_rules(BeliefBase.notes(["a"]), [rule("b", "a")]).predicates() == preds(["a", "b"])


def test_rules_unmet_body():
    assert apply_rules(BeliefBase.notes(["a"]), [rule("c", "a", "b")]).predicates() == preds(["a"])


def test_rules_chase():
    out = apply_rules(BeliefBase.notes(["a"]), [rule("c", "b"), rule("b", "a")])
    assert out.predicates() == preds(["a", "b", "c"])
    assert out.source(P("c")) is Source.MENTAL_NOTE


def test_rules_negation_uses_pass_snapshot():
    # pass 1 derives b and, against the same snapshot, c (b still absent)
    out = apply_rules(BeliefBase.notes(["a"]), [rule("b", "a"), rule("c", "a", "~b")])
    assert out.predicates() == preds(["a", "b", "c"])


def test_rule_body_must_be_nonempty():
    with pytest.raises(ValueError):
        LogicRule(P("a"), ())


ATOMS = [f"x{i}" for i in range(6)]
literal = st.tuples(st.sampled_from(ATOMS), st.booleans())
rules_st = st.lists(st.tuples(st.sampled_from(ATOMS), st.lists(literal, min_size=1, max_size=3)), max_size=8)


def _rules(spec, positive_only=False):
    return [LogicRule(P(h), tuple(Literal(P(a), pos or positive_only) for a, pos in body)) for h, body in spec]


def _naive_fixpoint(facts, rules):
    facts = set(facts)
    while True:
        snap = frozenset(facts)
        new = {r.head for r in rules if all((l.pred in snap) == l.positive for l in r.body)} - snap
        if not new:
            return frozenset(facts)
        facts |= new


@given(st.sets(st.sampled_from(ATOMS)), rules_st)
def test_rules_idempotent_and_match_naive(facts, spec):
    rules = _rules(spec)
    once = apply_rules(BeliefBase.notes(facts), rules)
    assert apply_rules(once, rules) == once
    assert once.predicates() == _naive_fixpoint(preds(facts), rules)


@given(st.sets(st.sampled_from(ATOMS)), st.sets(st.sampled_from(ATOMS)), rules_st)
def test_rules_monotone_without_negation(a, extra, spec):
    rules = _rules(spec, positive_only=True)
    small = apply_rules(BeliefBase.notes(a), rules).predicates()
    big = apply_rules(BeliefBase.notes(a | extra), rules).predicates()
    assert small <= big


@given(st.sets(st.sampled_from(ATOMS)), rules_st)
def test_rules_terminate_within_bound(facts, spec):
    rules = _rules(spec)
    out = apply_rules(BeliefBase.notes(facts), rules)
    assert len(out) - len(facts) <= max(1, len(rules)) * len(ATOMS)


# ---------------------------------------------------------------- applicable_plans


def test_applicable_simple():
    p = plan(0, "go")
    assert applicable_plans(preds(["go"]), preds(["go"]), [p]) == [p]


def test_applicable_context_gate():
    p = plan(0, "go", context=("b",))
    assert applicable_plans(preds(["go"]), preds(["go"]), [p]) == []


def test_applicable_three_of_five():
    library = [
        plan(0, "e1"),
        plan(1, "e3"),
        plan(2, "e2", context=("~c",)),
        plan(3, "e1", context=("c",)),
        plan(4, "e2", context=("d",)),
    ]
    facts = preds(["e1", "e2", "d"])
    got = applicable_plans(preds(["e1", "e2"]), facts, library)
    # truth-assignment enumeration: trigger in events and every literal holds
    expected = [p for p in library if p.trigger in {P("e1"), P("e2")}
                and all((l.pred in facts) == l.positive for l in p.context)]
    assert got == expected
    assert [p.id for p in got] == [0, 2, 4]


@given(st.permutations(ATOMS), st.sets(st.sampled_from(ATOMS)),
       st.lists(st.tuples(st.sampled_from(ATOMS), st.lists(literal, max_size=2)), max_size=6))
def test_applicable_order_stable(events, facts, spec):
    library = [Plan(i, f"q{i}", P(t), tuple(Literal(P(a), pos) for a, pos in ctx), (ActionRef("noop"),))
               for i, (t, ctx) in enumerate(spec)]
    ev = [P(e) for e in events[:3]]
    a = applicable_plans(ev, preds(facts), library)
    b = applicable_plans(list(reversed(ev)), preds(facts), library)
    assert a == b
    assert [p.id for p in a] == sorted(p.id for p in a)
    assert set(a) <= set(library)


# ---------------------------------------------------------------- program validation


def test_action_feedback_must_sum_to_one():
    with pytest.raises(ValueError, match="sum"):
        ActionDef("a", ActionKind.RUN_ONCE, ((preds(["x"]), 0.6), (preds(["y"]), 0.3)))


def test_internal_action_has_no_feedback():
    with pytest.raises(ValueError):
        ActionDef("a", ActionKind.INTERNAL_ADD, ((preds(["x"]), 1.0),), target=P("x"))


def test_undeclared_action_rejected():
    with pytest.raises(DeclarationError, match="fly"):
        AgentProgram.create(plans=[plan(0, "go", ("fly",))])


def test_action_cannot_be_initial_belief():
    with pytest.raises(DeclarationError):
        AgentProgram.create(initial_beliefs=[P("move")], actions=[ActionDef("move", ActionKind.RUN_ONCE)])


# ---------------------------------------------------------------- cycle


def test_empty_program_fixpoint():
    prog = AgentProgram.create()
    state, _ = initial_state(prog)
    nxt, rec = step_cycle(prog, state, Sampler(0), 1)
    assert nxt == state
    assert rec.beliefs == rec.events == rec.desires == rec.actions_fired == ()


def test_internal_add_timing():
    prog = AgentProgram.create(initial_beliefs=[P("start")], plans=[plan(0, "start", ("note(done)",))])
    trace = run_agent(prog, horizon=3)
    assert trace[0].actions_fired == () and trace[0].beliefs == ()
    assert trace[1].events == ("start",) and trace[1].actions_fired == ("note(done)",)
    assert "done" not in trace[1].beliefs
    assert trace[2].events == ("done",) and "done" in trace[2].beliefs
    assert trace[3].events == ()


def test_horizon_zero_has_initial_record_only():
    prog = AgentProgram.create(initial_beliefs=[P("a")])
    trace = run_agent(prog, horizon=0)
    assert len(trace) == 1 and trace[0].cycle == 0
    assert trace.final_state.beliefs.predicates() == preds(["a"])


def test_initial_actions_fire_on_cycle_zero():
    move = ActionDef("move", ActionKind.RUN_ONCE, ((preds(["moved"]), 1.0),))
    prog = AgentProgram.create(initial_actions=[ActionRef("move")], actions=[move])
    trace = run_agent(prog, horizon=2)
    assert trace[0].actions_fired == ("move",)
    assert trace[1].events == ("moved",)
    assert trace[2].beliefs == ()  # feedback is not persistent


def test_run_once_waits_for_feedback():
    move = ActionDef("move", ActionKind.RUN_ONCE, ((preds(["ok"]), 1.0),))
    prog = AgentProgram.create(initial_beliefs=[P("go")], actions=[move],
                               plans=[plan(0, "go", ("move", "note(after)"))])
    trace = run_agent(prog, horizon=4)
    assert trace[1].actions_fired == ("move",)
    # the feedback arrives on cycle 2 and releases the intention in the same cycle
    assert trace[2].events == ("ok",) and trace[2].actions_fired == ("note(after)",)
    assert trace[3].events == ("after",)
    assert trace.final_state.intentions == ()


def test_run_repeated_until_stop():
    scan = ActionDef("scan", ActionKind.RUN_REPEATED, ((preds(["ping"]), 1.0),))
    prog = AgentProgram.create(
        initial_beliefs=[P("go")],
        actions=[scan],
        plans=[plan(0, "go", ("scan",)), plan(1, "ping", ("stop(scan)",))],
    )
    trace = run_agent(prog, horizon=5)
    # stop applies at the end of the cycle that fires it, so one ping arrives
    assert [("ping" in r.beliefs) for r in trace.records[1:]] == [False, True, False, False, False]
    assert "stop(scan)" in trace[2].actions_fired


def test_run_repeated_samples_every_cycle():
    scan = ActionDef("scan", ActionKind.RUN_REPEATED, ((preds(["ping"]), 1.0),))
    prog = AgentProgram.create(initial_beliefs=[P("go")], actions=[scan], plans=[plan(0, "go", ("scan",))])
    trace = run_agent(prog, horizon=5)
    assert [("ping" in r.beliefs) for r in trace.records[1:]] == [False, True, True, True, True]
    assert trace[3].events == ()


def test_conflicting_internal_ops_last_wins(caplog):
    prog = AgentProgram.create(
        initial_beliefs=[P("go")],
        plans=[plan(0, "go", ("note(x)",)), plan(1, "go", ("drop(x)",))],
    )
    with caplog.at_level("WARNING"):
        trace = run_agent(prog, horizon=2)
    assert "x" not in trace[2].beliefs
    assert any("conflicting" in r.message for r in caplog.records)


def test_no_duplicate_intentions():
    slow = ActionDef("slow", ActionKind.RUN_ONCE, ((frozenset(), 1.0),))
    prog = AgentProgram.create(actions=[slow], plans=[plan(0, "tick", ("slow", "slow", "slow"))], percepts=[P("tick")])
    sampler = Sampler(0)
    state, _ = initial_state(prog)
    for cycle, sensed in enumerate([["tick"], [], ["tick"], []], start=1):
        state, _ = step_cycle(prog, state, sampler, cycle, percepts=preds(sensed))
        assert len(state.intentions) <= 1


def test_operational_states_are_active_subset():
    prog = AgentProgram.create(initial_beliefs=[P("idle")], operational_states=[P("idle"), P("busy")],
                               plans=[plan(0, "idle", ("note(busy)",))])
    trace = run_agent(prog, horizon=2)
    assert trace[1].operational_states == ("idle",)
    assert trace[2].operational_states == ("busy", "idle")


def test_explicit_percepts_callback():
    prog = AgentProgram.create(percepts=[P("p")], plans=[plan(0, "p", ("note(seen)",))])
    trace = run_agent(prog, horizon=3, percepts=lambda c: preds(["p"]) if c == 2 else frozenset())
    assert trace[2].events == ("p",)
    assert "seen" in trace[3].beliefs


# ---------------------------------------------------------------- random-program invariants


def _walk(seed, horizon=25):
    rng = np.random.default_rng(seed)
    prog, env = random_program(rng)
    sampler = Sampler(seed)
    state, _ = initial_state(prog, env)
    out = []
    for cycle in range(1, horizon + 1):
        nxt, rec = step_cycle(prog, state, sampler, cycle, env)
        out.append((state, nxt, rec))
        state = nxt
    return prog, out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_events_are_snapshot_differences(seed):
    _, steps = _walk(seed)
    prev = frozenset()
    for _, _, rec in steps:
        now = frozenset(rec.beliefs)
        assert frozenset(rec.events) == now - prev
        prev = now


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_intentions_advance_at_most_one_step(seed):
    prog, steps = _walk(seed)
    for before, after, _ in steps:
        old = {it.plan_id: it for it in before.intentions}
        for it in after.intentions:
            body = prog.plans[it.plan_id].body
            assert 0 <= it.program_counter <= len(body)
            if it.status is IntentionStatus.WAITING:
                assert prog.action_map[body[it.program_counter - 1].name].kind.external
            prev = old.get(it.plan_id)
            if prev is None or prev.program_counter == len(body):
                assert it.program_counter <= 1
                continue
            delta = it.program_counter - prev.program_counter
            assert delta in (0, 1)
            if delta == 0:
                assert prev.status is IntentionStatus.WAITING and it.status is IntentionStatus.WAITING


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2**32))
def test_run_agent_is_pure(prog_seed, seed):
    prog, env = random_program(np.random.default_rng(prog_seed))
    a = run_agent(prog, env, horizon=15, seed=seed)
    b = run_agent(prog, env, horizon=15, seed=seed)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.final_state == b.final_state


def test_records_are_ordered_json():
    rec = CycleRecord(3, ("a",), ("a",), ("p",), ("move",), ())
    line = rec.to_json()
    assert list(json.loads(line)) == ["cycle", "beliefs", "events", "desires", "actions_fired", "operational_states"]
    assert CycleRecord.from_json(line) == rec
    trace = Trace([rec, rec])
    assert Trace.from_jsonl(trace.to_jsonl()).records == trace.records


def test_state_is_hashable():
    prog, env = random_program(np.random.default_rng(1))
    state, _ = initial_state(prog, env)
    assert isinstance(hash(state), int) and isinstance(state, AgentState)


# ---------------------------------------------------------------- rng


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6), st.text(max_size=8))
def test_counter_rng_scalar_matches_vector(seed, counter, name):
    u = counter_uniform(seed, counter, name)
    v = counter_uniform_array(seed, [np.array([counter]), name])[0]
    assert 0.0 <= u < 1.0 and u == v
