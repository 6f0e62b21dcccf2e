"""LISA agent: program representation and the reasoning cycle.

One cycle runs, in order: action feedback and perception arrive (BUF), logic
rules are closed to a fixpoint, the BRF computes events as newly added
predicates, every plan triggered by an event with a true context becomes an
intention, and every ready intention executes exactly one action. Internal
actions take effect at the end of the cycle; external actions suspend their
intention until feedback arrives at the start of the next cycle.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .errors import DeclarationError
from .rng import Sampler

log = logging.getLogger(__name__)

FEEDBACK_TOL = 1e-9
BUILTIN_ACTIONS = ("note", "drop", "stop")


class Source(str, Enum):
    PERCEPT = "percept"
    MENTAL_NOTE = "mental_note"
    ACTION_FEEDBACK = "action_feedback"


class ActionKind(str, Enum):
    INTERNAL_ADD = "internal_add"
    INTERNAL_REMOVE = "internal_remove"
    RUN_ONCE = "external_run_once"
    RUN_REPEATED = "external_run_repeated"

    @property
    def external(self) -> bool:
        return self in (ActionKind.RUN_ONCE, ActionKind.RUN_REPEATED)


class IntentionStatus(str, Enum):
    READY = "ready"
    WAITING = "waiting_feedback"
    DONE = "done"
    FAILED = "failed"


_PRED_RE = re.compile(r"^\s*([a-z][A-Za-z0-9_]*)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")


@dataclass(frozen=True, order=True)
class Predicate:
    """Ground predicate ``name(arg, ...)``; ordered by name then arguments."""

    name: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("predicate name must be nonempty")

    def __str__(self) -> str:
        return f"{self.name}({','.join(self.args)})" if self.args else self.name

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        m = _PRED_RE.match(text)
        if m is None:
            raise ValueError(f"not a ground predicate: {text!r}")
        args = tuple(a.strip() for a in m.group(2).split(",")) if m.group(2) else ()
        return cls(m.group(1), args)

    @property
    def var_name(self) -> str:
        return "_".join((self.name,) + self.args)


def preds(items: Iterable[str | Predicate]) -> frozenset[Predicate]:
    return frozenset(p if isinstance(p, Predicate) else Predicate.parse(p) for p in items)


@dataclass(frozen=True)
class Literal:
    pred: Predicate
    positive: bool = True

    def holds(self, facts: frozenset[Predicate] | set[Predicate]) -> bool:
        return (self.pred in facts) == self.positive

    def __str__(self) -> str:
        return str(self.pred) if self.positive else f"not {self.pred}"


def holds_all(literals: Iterable[Literal], facts: frozenset[Predicate] | set[Predicate]) -> bool:
    return all(lit.holds(facts) for lit in literals)


class BeliefBase:
    """Immutable map from predicate to source tag."""

    __slots__ = ("_map", "_hash")

    def __init__(self, entries: Mapping[Predicate, Source] | Iterable[tuple[Predicate, Source]] = ()):
        self._map: dict[Predicate, Source] = dict(entries)
        self._hash: int | None = None

    def predicates(self) -> frozenset[Predicate]:
        return frozenset(self._map)

    def source(self, p: Predicate) -> Source | None:
        return self._map.get(p)

    def items(self):
        return self._map.items()

    def __contains__(self, p: object) -> bool:
        return p in self._map

    def __iter__(self) -> Iterator[Predicate]:
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BeliefBase) and self._map == other._map

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._map.items()))
        return self._hash

    def __repr__(self) -> str:
        inner = ", ".join(f"{p}:{s.value}" for p, s in sorted(self._map.items()))
        return f"BeliefBase({{{inner}}})"

    @classmethod
    def notes(cls, items: Iterable[str | Predicate]) -> "BeliefBase":
        return cls({p: Source.MENTAL_NOTE for p in preds(items)})


@dataclass(frozen=True)
class EventSet:
    added: frozenset[Predicate] = frozenset()

    def __contains__(self, p: object) -> bool:
        return p in self.added

    def __iter__(self) -> Iterator[Predicate]:
        return iter(sorted(self.added))

    def __len__(self) -> int:
        return len(self.added)


@dataclass(frozen=True)
class LogicRule:
    head: Predicate
    body: tuple[Literal, ...]

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"rule for {self.head} has an empty body")


@dataclass(frozen=True)
class ActionDef:
    name: str
    kind: ActionKind
    feedback: tuple[tuple[frozenset[Predicate], float], ...] = ()
    target: Predicate | None = None  # fixed predicate of a user-declared internal action

    def __post_init__(self):
        if self.kind.external:
            if not self.feedback:
                object.__setattr__(self, "feedback", ((frozenset(), 1.0),))
            total = sum(p for _, p in self.feedback)
            if abs(total - 1.0) > FEEDBACK_TOL:
                raise ValueError(f"action {self.name}: feedback probabilities sum {total:g}")
            if any(not 0.0 <= p <= 1.0 for _, p in self.feedback):
                raise ValueError(f"action {self.name}: feedback probability outside [0, 1]")
        elif self.feedback:
            raise ValueError(f"internal action {self.name} cannot declare feedback")


@dataclass(frozen=True)
class ActionRef:
    name: str
    arg: Predicate | None = None

    def __str__(self) -> str:
        return f"{self.name}({self.arg})" if self.arg is not None else self.name


@dataclass(frozen=True)
class Plan:
    id: int
    name: str
    trigger: Predicate
    context: tuple[Literal, ...]
    body: tuple[ActionRef, ...]
    outcomes: tuple[tuple[frozenset[Predicate], float], ...] = ()

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"plan {self.name} has an empty body")

    def context_holds(self, facts: frozenset[Predicate] | set[Predicate]) -> bool:
        return holds_all(self.context, facts)


@dataclass(frozen=True, order=True)
class Intention:
    plan_id: int
    program_counter: int = 0
    status: IntentionStatus = IntentionStatus.READY


@dataclass(frozen=True)
class OperationalStateSet:
    declared: frozenset[Predicate]
    active: frozenset[Predicate]


@dataclass(frozen=True, eq=True)
class AgentProgram:
    """Immutable agent: predicates, initial beliefs/actions, rules, plans, actions, operational states."""

    predicates: frozenset[Predicate]
    initial_beliefs: frozenset[Predicate]
    initial_actions: tuple[ActionRef, ...]
    rules: tuple[LogicRule, ...]
    plans: tuple[Plan, ...]
    actions: tuple[ActionDef, ...]
    operational_states: frozenset[Predicate] = frozenset()
    percepts: frozenset[Predicate] = frozenset()

    def __post_init__(self):
        missing = (self.initial_beliefs | self.operational_states | self.percepts) - self.predicates
        if missing:
            raise DeclarationError(f"undeclared predicate(s): {', '.join(map(str, sorted(missing)))}")
        names = [a.name for a in self.actions]
        if len(set(names)) != len(names):
            raise DeclarationError("duplicate action declaration")
        clash = set(names) & {p.name for p in self.initial_beliefs}
        if clash:
            raise DeclarationError(f"action name(s) used as initial belief: {', '.join(sorted(clash))}")
        for i, plan in enumerate(self.plans):
            if plan.id != i:
                raise DeclarationError(f"plan {plan.name} has id {plan.id}, expected {i}")
        if len({p.name for p in self.plans}) != len(self.plans):
            raise DeclarationError("duplicate plan name")
        for rule in self.rules:
            if rule.head.name in names:
                raise DeclarationError(f"rule head {rule.head} is an action")
        for ref in self.initial_actions + tuple(a for p in self.plans for a in p.body):
            self.check_action(ref)

    @classmethod
    def create(
        cls,
        initial_beliefs: Iterable[Predicate] = (),
        initial_actions: Iterable[ActionRef] = (),
        rules: Iterable[LogicRule] = (),
        plans: Iterable[Plan] = (),
        actions: Iterable[ActionDef] = (),
        operational_states: Iterable[Predicate] = (),
        percepts: Iterable[Predicate] = (),
    ) -> "AgentProgram":
        """Build a program whose predicate set is every predicate it mentions."""
        rules, plans, actions = tuple(rules), tuple(plans), tuple(actions)
        initial_actions = tuple(initial_actions)
        used: set[Predicate] = set(initial_beliefs) | set(operational_states) | set(percepts)
        for r in rules:
            used.add(r.head)
            used.update(l.pred for l in r.body)
        for p in plans:
            used.add(p.trigger)
            used.update(l.pred for l in p.context)
            for outcome, _ in p.outcomes:
                used.update(outcome)
        for a in actions:
            if a.target is not None:
                used.add(a.target)
            for outcome, _ in a.feedback:
                used.update(outcome)
        for ref in initial_actions + tuple(a for p in plans for a in p.body):
            if ref.arg is not None and ref.name in ("note", "drop"):
                used.add(ref.arg)
        return cls(
            predicates=frozenset(used),
            initial_beliefs=frozenset(initial_beliefs),
            initial_actions=initial_actions,
            rules=rules,
            plans=plans,
            actions=actions,
            operational_states=frozenset(operational_states),
            percepts=frozenset(percepts),
        )

    @cached_property
    def action_map(self) -> dict[str, ActionDef]:
        return {a.name: a for a in self.actions}

    @cached_property
    def plans_by_trigger(self) -> dict[Predicate, tuple[Plan, ...]]:
        out: dict[Predicate, list[Plan]] = {}
        for p in self.plans:
            out.setdefault(p.trigger, []).append(p)
        return {k: tuple(v) for k, v in out.items()}

    def plan(self, name: str) -> Plan:
        for p in self.plans:
            if p.name == name:
                return p
        raise KeyError(name)

    def check_action(self, ref: ActionRef) -> None:
        if ref.name in ("note", "drop"):
            if ref.arg is None:
                raise DeclarationError(f"{ref.name} needs a predicate argument")
            return
        if ref.name == "stop":
            target = self.action_map.get(ref.arg.name if ref.arg else "")
            if target is None or target.kind is not ActionKind.RUN_REPEATED:
                raise DeclarationError(f"stop({ref.arg}) does not name a runRepeated action")
            return
        if ref.name not in self.action_map:
            raise DeclarationError(f"undeclared action {ref.name}")
        if ref.arg is not None:
            raise DeclarationError(f"action {ref.name} takes no argument")


# ---------------------------------------------------------------- cycle functions


def buf_update(
    base: BeliefBase,
    percepts: Iterable[Predicate],
    feedbacks: Iterable[Predicate],
    declared: frozenset[Predicate] | None = None,
) -> BeliefBase:
    """Belief update: percept and feedback entries are replaced wholesale, mental notes kept."""
    percepts = frozenset(percepts)
    feedbacks = frozenset(feedbacks)
    if declared is not None:
        bad = (percepts | feedbacks) - declared
        if bad:
            raise DeclarationError(f"undeclared predicate(s): {', '.join(map(str, sorted(bad)))}")
    out = {p: s for p, s in base.items() if s is Source.MENTAL_NOTE}
    for p in feedbacks:
        out.setdefault(p, Source.ACTION_FEEDBACK)
    for p in percepts:
        if out.get(p) is not Source.MENTAL_NOTE:
            out[p] = Source.PERCEPT
    return BeliefBase(out)


def brf_events(prev: BeliefBase | Iterable[Predicate], cur: BeliefBase | Iterable[Predicate]) -> EventSet:
    """Events are predicates present now and absent before; deletions raise none."""
    before = prev.predicates() if isinstance(prev, BeliefBase) else frozenset(prev)
    now = cur.predicates() if isinstance(cur, BeliefBase) else frozenset(cur)
    return EventSet(now - before)


def apply_rules(base: BeliefBase, rules: Sequence[LogicRule]) -> BeliefBase:
    """Forward-chain to a fixpoint, adding derived heads as mental notes.

    Each pass tests every rule against the snapshot taken at the start of the
    pass, so negative literals see a consistent view.
    """
    if not rules:
        return base
    entries = dict(base.items())
    while True:
        snapshot = frozenset(entries)
        added = False
        for rule in rules:
            if rule.head not in entries and holds_all(rule.body, snapshot):
                entries[rule.head] = Source.MENTAL_NOTE
                added = True
        if not added:
            return base if len(entries) == len(base) else BeliefBase(entries)


def applicable_plans(events: EventSet | Iterable[Predicate], base: BeliefBase | Iterable[Predicate], plans: Sequence[Plan]) -> list[Plan]:
    """Plans triggered by an event whose context holds, in declaration order."""
    ev = events.added if isinstance(events, EventSet) else frozenset(events)
    facts = base.predicates() if isinstance(base, BeliefBase) else frozenset(base)
    return [p for p in plans if p.trigger in ev and p.context_holds(facts)]


# ---------------------------------------------------------------- agent state


@dataclass(frozen=True)
class AgentState:
    """Everything carried from one cycle boundary to the next.

    ``reviewed`` is the predicate set the BRF saw last cycle (its baseline for
    events); ``pending`` lists runOnce actions awaiting feedback as
    ``(action, owner plan id)`` with owner -1 for initial actions.
    """

    beliefs: BeliefBase
    reviewed: frozenset[Predicate] = frozenset()
    intentions: tuple[Intention, ...] = ()
    pending: tuple[tuple[str, int], ...] = ()
    running: frozenset[str] = frozenset()
    env: tuple = ()


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    beliefs: tuple[str, ...]
    events: tuple[str, ...]
    desires: tuple[str, ...]
    actions_fired: tuple[str, ...]
    operational_states: tuple[str, ...]

    FIELDS = ("cycle", "beliefs", "events", "desires", "actions_fired", "operational_states")

    def to_json(self) -> str:
        return json.dumps({k: (list(v) if isinstance(v, tuple) else v) for k, v in zip(self.FIELDS, self._values())})

    def _values(self):
        return (self.cycle, self.beliefs, self.events, self.desires, self.actions_fired, self.operational_states)

    @classmethod
    def from_json(cls, line: str) -> "CycleRecord":
        d = json.loads(line)
        return cls(d["cycle"], *(tuple(d[k]) for k in cls.FIELDS[1:]))


@dataclass
class Trace:
    records: list[CycleRecord] = field(default_factory=list)
    final_state: AgentState | None = None

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        return cls([CycleRecord.from_json(ln) for ln in text.splitlines() if ln.strip()])

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> CycleRecord:
        return self.records[i]


def _names(items: Iterable[Predicate]) -> tuple[str, ...]:
    return tuple(str(p) for p in sorted(items))


# ---------------------------------------------------------------- random stage

Alternative = tuple[float, frozenset, tuple]  # (probability, predicates, env updates)
Chooser = Callable[[str, Sequence[Alternative]], Iterable[tuple[float, Alternative]]]


def _merge_env(env_state: tuple, updates: Iterable[tuple[str, int]]) -> tuple:
    if not updates:
        return env_state
    d = dict(env_state)
    d.update(updates)
    return tuple(sorted(d.items()))


def _feedback_sources(program: AgentProgram, state: AgentState, env) -> list[tuple[str, Sequence[Alternative]]]:
    sources = []
    for action, owner in state.pending:
        sources.append((f"feedback:{action}:{owner}", _feedback_alts(program, action, state.env, env)))
    for action in sorted(state.running):
        sources.append((f"repeat:{action}", _feedback_alts(program, action, state.env, env)))
    return sources


def _feedback_alts(program: AgentProgram, action: str, env_state: tuple, env) -> Sequence[Alternative]:
    if env is not None:
        hook = env.feedback(action, env_state)
        if hook is not None:
            return hook
    return [(p, outcome, ()) for outcome, p in program.action_map[action].feedback]


def _combine(sources: Sequence[tuple[str, Sequence[Alternative]]], chooser: Chooser) -> Iterator[tuple[float, frozenset, tuple]]:
    """Joint outcomes of independent sources: (probability, predicates, merged updates)."""
    if not sources:
        yield 1.0, frozenset(), ()
        return
    (sid, alts), rest = sources[0], sources[1:]
    for p, (_, items, updates) in chooser(sid, alts):
        for q, more, more_updates in _combine(rest, chooser):
            merged = dict(updates)
            for k, v in more_updates:
                if k in merged and merged[k] != v:
                    raise ValueError(f"conflicting environment updates to {k}")
                merged[k] = v
            yield p * q, items | more, tuple(sorted(merged.items()))


def _random_stage(program: AgentProgram, state: AgentState, env, chooser: Chooser, percepts: frozenset | None):
    """Yield ``(probability, feedback predicates, percepts, env state)`` for each joint outcome."""
    fb_sources = _feedback_sources(program, state, env)
    for p, feedback, updates in _combine(fb_sources, chooser):
        env1 = _merge_env(state.env, updates)
        if percepts is not None:
            yield p, feedback, percepts, env1
            continue
        pc_sources = env.percept_sources(env1) if env is not None else []
        for q, sensed, updates2 in _combine(pc_sources, chooser):
            env2 = _merge_env(env1, updates2)
            observed = env.observe(env2) if env is not None else frozenset()
            yield p * q, feedback, sensed | observed, env2


def _enumerate(_: str, alts: Sequence[Alternative]):
    return [(a[0], a) for a in alts if a[0] > 0.0]


def _sampling(sampler: Sampler, cycle: int) -> Chooser:
    def choose(sid: str, alts: Sequence[Alternative]):
        i = sampler.choose(cycle, sid, [a[0] for a in alts])
        return [(1.0, alts[i])]

    return choose


# ---------------------------------------------------------------- deliberation


def _deliberate(
    program: AgentProgram,
    state: AgentState,
    cycle: int,
    feedback: frozenset[Predicate],
    percepts: frozenset[Predicate],
    env_state: tuple,
    select: Callable[[list[Plan]], list[Plan]] | None = None,
    warn: bool = True,
) -> tuple[AgentState, CycleRecord]:
    base = buf_update(state.beliefs, percepts, feedback, program.predicates)
    base = apply_rules(base, program.rules)
    snapshot = base.predicates()
    events = snapshot - state.reviewed

    received = {(a, o) for a, o in state.pending} | {(a, None) for a in state.running}
    intentions: dict[int, Intention] = {}
    plans = program.plans
    for it in state.intentions:
        if it.status is IntentionStatus.WAITING:
            plan = plans[it.plan_id]
            awaited = plan.body[it.program_counter - 1].name
            if (awaited, it.plan_id) in received or (awaited, None) in received:
                if it.program_counter == len(plan.body):
                    continue
                it = Intention(it.plan_id, it.program_counter, IntentionStatus.READY)
        intentions[it.plan_id] = it

    desires = applicable_plans(events, snapshot, plans)
    chosen = desires if select is None else select(desires)
    for plan in chosen:
        if plan.id not in intentions:
            intentions[plan.id] = Intention(plan.id)

    ops: list[tuple[int, str, Predicate]] = []
    stops: set[str] = set()
    pending: list[tuple[str, int]] = []
    running = set(state.running)
    fired: list[str] = []
    for pid in sorted(intentions):
        it = intentions[pid]
        if it.status is not IntentionStatus.READY:
            continue
        plan = plans[pid]
        ref = plan.body[it.program_counter]
        pc = it.program_counter + 1
        fired.append(str(ref))
        external = _execute(program, ref, pid, ops, stops, pending, running)
        if external:
            intentions[pid] = Intention(pid, pc, IntentionStatus.WAITING)
        elif pc == len(plan.body):
            del intentions[pid]
        else:
            intentions[pid] = Intention(pid, pc, IntentionStatus.READY)

    final = _apply_ops(base, ops, warn)
    running -= stops
    new_state = AgentState(
        beliefs=final,
        reviewed=snapshot,
        intentions=tuple(intentions[k] for k in sorted(intentions)),
        pending=tuple(sorted(pending)),
        running=frozenset(running),
        env=env_state,
    )
    record = CycleRecord(
        cycle=cycle,
        beliefs=_names(snapshot),
        events=_names(events),
        desires=tuple(p.name for p in desires),
        actions_fired=tuple(fired),
        operational_states=_names(program.operational_states & snapshot),
    )
    return new_state, record


def _execute(program, ref: ActionRef, owner: int, ops, stops, pending, running) -> bool:
    """Run one action; returns True if the owner must wait for feedback."""
    if ref.name == "note":
        ops.append((owner, "add", ref.arg))
        return False
    if ref.name == "drop":
        ops.append((owner, "remove", ref.arg))
        return False
    if ref.name == "stop":
        stops.add(ref.arg.name)
        return False
    action = program.action_map.get(ref.name)
    if action is None:
        raise DeclarationError(f"undeclared action {ref.name}")
    if action.kind is ActionKind.INTERNAL_ADD:
        ops.append((owner, "add", action.target))
        return False
    if action.kind is ActionKind.INTERNAL_REMOVE:
        ops.append((owner, "remove", action.target))
        return False
    if action.kind is ActionKind.RUN_ONCE:
        pending.append((action.name, owner))
    else:
        running.add(action.name)
    return True


def _apply_ops(base: BeliefBase, ops: list[tuple[int, str, Predicate]], warn: bool = True) -> BeliefBase:
    if not ops:
        return base
    entries = dict(base.items())
    kinds: dict[Predicate, set[str]] = {}
    for owner, kind, pred in ops:
        kinds.setdefault(pred, set()).add(kind)
        if kind == "add":
            entries[pred] = Source.MENTAL_NOTE
        else:
            entries.pop(pred, None)
    for pred, ks in kinds.items():
        if warn and len(ks) > 1:
            log.warning("conflicting internal actions on %s this cycle; last in intention order wins", pred)
    return BeliefBase(entries)


# ---------------------------------------------------------------- drivers


def initial_state(program: AgentProgram, env=None) -> tuple[AgentState, CycleRecord]:
    """Cycle 0: load initial beliefs as mental notes and execute the initial actions."""
    base = BeliefBase({p: Source.MENTAL_NOTE for p in program.initial_beliefs})
    ops: list = []
    stops: set[str] = set()
    pending: list = []
    running: set[str] = set()
    for ref in program.initial_actions:
        _execute(program, ref, -1, ops, stops, pending, running)
    state = AgentState(
        beliefs=_apply_ops(base, ops),
        pending=tuple(sorted(pending)),
        running=frozenset(running - stops),
        env=env.initial_state() if env is not None else (),
    )
    record = CycleRecord(0, (), (), (), tuple(str(r) for r in program.initial_actions), ())
    return state, record


def step_cycle(
    program: AgentProgram,
    state: AgentState,
    sampler: Sampler,
    cycle: int,
    env=None,
    percepts: Iterable[Predicate] | None = None,
    select: Callable[[list[Plan]], list[Plan]] | None = None,
) -> tuple[AgentState, CycleRecord]:
    """Run one reasoning cycle with random outcomes drawn from ``sampler``.

    Percepts come from ``env`` unless given explicitly.
    """
    fixed = frozenset(percepts) if percepts is not None else None
    chooser = _sampling(sampler, cycle)
    (_, feedback, sensed, env_state), = _random_stage(program, state, env, chooser, fixed)
    return _deliberate(program, state, cycle, feedback, sensed, env_state, select)


def successors(program: AgentProgram, state: AgentState, env=None) -> list[tuple[float, AgentState, CycleRecord]]:
    """All one-cycle outcomes of ``state`` with their probabilities."""
    out = []
    for p, feedback, sensed, env_state in _random_stage(program, state, env, _enumerate, None):
        nxt, rec = _deliberate(program, state, -1, feedback, sensed, env_state, warn=False)
        out.append((p, nxt, rec))
    return out


def run_agent(program: AgentProgram, env=None, horizon: int = 0, seed: int = 0, percepts=None) -> Trace:
    """Cycle 0 initialisation followed by ``horizon`` reasoning cycles.

    ``percepts`` optionally maps a cycle number to a fixed percept set and
    bypasses the environment's perception.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    sampler = Sampler(seed)
    state, rec = initial_state(program, env)
    trace = Trace([rec])
    for cycle in range(1, horizon + 1):
        fixed = percepts(cycle) if percepts is not None else None
        state, rec = step_cycle(program, state, sampler, cycle, env, fixed)
        trace.records.append(rec)
    trace.final_state = state
    return trace
