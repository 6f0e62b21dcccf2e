"""Markov chain abstraction of an agent running in an environment.

A chain state is the agent state at a cycle boundary: beliefs, the predicate
set the last deliberation saw, intentions, outstanding external actions and
the environment state. One transition is one reasoning cycle. Its random
part is the joint outcome of all feedback and percept sources, whose
probability is the product over sources; the rest of the cycle is a
deterministic function folded into the transition.

Valuation variables:

* ``<pred>`` for each tracked predicate: 0 absent, 1 percept, 2 feedback, 3 mental note
* ``seen_<pred>`` for initial beliefs and predicates an internal action can change: 1 if the last deliberation saw it
* ``i_<plan>``: 0 no intention, otherwise ``1 + 2*pc + waiting``
* ``pend_<action>_<owner>`` / ``run_<action>``: outstanding external actions
* every environment variable under its own name

Each transition also tags its target with ``fired:<action>`` for every
action executed in that cycle.
"""

from __future__ import annotations

import re
from typing import Iterable

from .agent import (
    ActionKind,
    AgentProgram,
    AgentState,
    BeliefBase,
    IntentionStatus,
    Predicate,
    Source,
    initial_state,
    successors,
)
from .dtmc import DEFAULT_CAP, DtmcModel, explore
from .errors import ModelError

_SOURCE_CODE = {Source.PERCEPT: 1, Source.ACTION_FEEDBACK: 2, Source.MENTAL_NOTE: 3}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class BuildError(ModelError):
    """The tracked predicate set cannot represent the agent faithfully."""


def relevant_predicates(program: AgentProgram) -> frozenset[Predicate]:
    """Predicates that can influence plan triggering: triggers, contexts and what derives them."""
    rel: set[Predicate] = set()
    for plan in program.plans:
        rel.add(plan.trigger)
        rel.update(l.pred for l in plan.context)
    changed = True
    while changed:
        changed = False
        for rule in program.rules:
            if rule.head in rel:
                for lit in rule.body:
                    if lit.pred not in rel:
                        rel.add(lit.pred)
                        changed = True
    return frozenset(rel)


def _op_targets(program: AgentProgram) -> set[Predicate]:
    out = {a.target for a in program.actions if a.target is not None}
    for ref in program.initial_actions + tuple(r for p in program.plans for r in p.body):
        if ref.name in ("note", "drop"):
            out.add(ref.arg)
    return out


def _project(state: AgentState, tracked: frozenset[Predicate] | None) -> AgentState:
    if tracked is None:
        return state
    return AgentState(
        beliefs=BeliefBase({p: s for p, s in state.beliefs.items() if p in tracked}),
        reviewed=state.reviewed & tracked,
        intentions=state.intentions,
        pending=state.pending,
        running=state.running,
        env=state.env,
    )


def build_dtmc_from_agent(
    program: AgentProgram,
    env=None,
    tracked: Iterable[Predicate] | None = None,
    cap: int = DEFAULT_CAP,
) -> tuple[DtmcModel, list[AgentState]]:
    """Explore every state the agent can reach and return the chain plus the agent state of each index.

    ``tracked`` defaults to all predicates. A smaller set must still contain
    every predicate that can influence plan selection, otherwise dropping the
    rest would change the chain and a :class:`BuildError` is raised.
    """
    tracked_set = program.predicates if tracked is None else frozenset(tracked)
    extra = tracked_set - program.predicates
    if extra:
        raise BuildError(f"tracked predicate(s) not in the program: {', '.join(map(str, sorted(extra)))}")
    missing = relevant_predicates(program) - tracked_set
    if missing:
        raise BuildError(
            "untracked predicate(s) influence plan selection: "
            + ", ".join(map(str, sorted(missing)))
        )
    projection = None if tracked_set == program.predicates else tracked_set

    start, _ = initial_state(program, env)
    start = _project(start, projection)

    def expand(state: AgentState):
        for p, nxt, rec in successors(program, state, env):
            yield p, _project(nxt, projection), frozenset(f"fired:{a}" for a in rec.actions_fired)

    preds = sorted(tracked_set)
    # reviewed differs from the belief predicates only where an internal action
    # changed them, or for initial beliefs before the first deliberation
    seen = sorted((_op_targets(program) | program.initial_beliefs) & tracked_set)
    plans = program.plans
    pend_keys = sorted(
        {(ref.name, -1) for ref in program.initial_actions}
        | {(ref.name, p.id) for p in plans for ref in p.body}
    )
    pend_keys = [k for k in pend_keys if k[0] in program.action_map and program.action_map[k[0]].kind is ActionKind.RUN_ONCE]
    repeated = sorted(a.name for a in program.actions if a.kind is ActionKind.RUN_REPEATED)
    env_vars = [k for k, _ in start.env]

    variables = (
        [p.var_name for p in preds]
        + [f"seen_{p.var_name}" for p in seen]
        + [f"i_{p.name}" for p in plans]
        + [f"pend_{a}_{'init' if o < 0 else plans[o].name}" for a, o in pend_keys]
        + [f"run_{a}" for a in repeated]
        + env_vars
    )
    if len(set(variables)) != len(variables):
        dup = sorted({v for v in variables if variables.count(v) > 1})
        raise BuildError(f"valuation variable name clash: {', '.join(dup)}")
    for v in variables:
        if not _IDENT.match(v):
            raise BuildError(f"predicate {v} does not give a valid variable name")
    pend_index = {k: i for i, k in enumerate(pend_keys)}

    def valuation(state: AgentState) -> tuple[int, ...]:
        vals = [_SOURCE_CODE.get(state.beliefs.source(p), 0) for p in preds]
        vals += [int(p in state.reviewed) for p in seen]
        intent = [0] * len(plans)
        for it in state.intentions:
            intent[it.plan_id] = 1 + 2 * it.program_counter + (it.status is IntentionStatus.WAITING)
        vals += intent
        pend = [0] * len(pend_keys)
        for key in state.pending:
            pend[pend_index[key]] += 1
        vals += pend
        vals += [int(a in state.running) for a in repeated]
        vals += [v for _, v in state.env]
        return tuple(vals)

    constants = dict(getattr(env, "constants", {}) or {})
    return explore(start, expand, valuation, variables, constants=constants, cap=cap)
