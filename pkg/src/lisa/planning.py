"""Plan selection by probabilistic reachability over a course-of-plans tree.

Event nodes hold the events raised at a point of the mission together with
the beliefs accumulated along the branch; plan nodes are the plans those
events trigger. A plan node branches on its implication table outcomes with
their probabilities, while an event node's branches are choices. The reward
of a plan is the probability of reaching the goal when that plan is chosen
first and every later choice is made optimally.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import count
from typing import Callable, Iterable, Mapping, Sequence

from .agent import AgentProgram, Plan, Predicate, preds
from .dtmc import DtmcModel, ReachQuery, TracePath, check_query, most_probable_paths, target_mask
from . import expr as ex
from .errors import PlanningError

log = logging.getLogger(__name__)

PROB_TOL = 1e-9

Outcomes = tuple[tuple[frozenset[Predicate], float], ...]


@dataclass(frozen=True)
class ImplicationTable:
    """Outcome distribution of each plan, keyed by plan id."""

    outcomes: Mapping[int, Outcomes]

    def __post_init__(self):
        for pid, dist in self.outcomes.items():
            total = sum(p for _, p in dist)
            if abs(total - 1.0) > PROB_TOL:
                raise PlanningError(f"plan {pid}: outcome probabilities sum {total:.12g}")

    @classmethod
    def from_program(cls, program: AgentProgram) -> "ImplicationTable":
        return cls({p.id: p.outcomes for p in program.plans if p.outcomes})

    def __contains__(self, pid: int) -> bool:
        return pid in self.outcomes

    def __getitem__(self, pid: int) -> Outcomes:
        return self.outcomes[pid]


@dataclass(eq=False)
class EventNode:
    id: int
    events: frozenset[Predicate]
    beliefs: frozenset[Predicate]
    depth: int
    goal: bool = False
    children: list["PlanNode"] = field(default_factory=list)
    value: float = 0.0  # terminal value of a leaf

    @property
    def leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class PlanNode:
    id: int
    plan: Plan
    children: list[tuple[float, EventNode]] = field(default_factory=list)


@dataclass(eq=False)
class CoursePlanTree:
    root: EventNode
    horizon: int
    goal: frozenset[Predicate]
    plans: tuple[Plan, ...]
    table: ImplicationTable
    root_events: frozenset[Predicate]
    leaf_value: Callable[[EventNode], float] | None = None

    def event_nodes(self) -> list[EventNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            for pn in reversed(node.children):
                stack.extend(child for _, child in reversed(pn.children))
        return sorted(out, key=lambda n: n.id)

    def __len__(self) -> int:
        return sum(1 + len(n.children) for n in self.event_nodes())


@dataclass(frozen=True)
class CourseOfPlans:
    plans: tuple[Plan, ...]
    events: frozenset[Predicate]
    likelihood: float


@dataclass
class RewardTable:
    rewards: dict[int, float]
    cycle: int = 0

    def __getitem__(self, pid: int) -> float:
        return self.rewards[pid]

    def __contains__(self, pid: int) -> bool:
        return pid in self.rewards


def triggered(plans: Sequence[Plan], events: frozenset[Predicate], beliefs: frozenset[Predicate]) -> list[Plan]:
    return [p for p in plans if p.trigger in events and p.context_holds(beliefs)]


def build_tree(
    plans: Sequence[Plan],
    table: ImplicationTable,
    beliefs: Iterable[Predicate],
    root_events: Iterable[Predicate],
    horizon: int,
    goal: Iterable[Predicate] = (),
    leaf_value: Callable[[EventNode], float] | None = None,
) -> CoursePlanTree:
    """Expand plans and outcomes breadth of ``horizon`` plan layers.

    A node whose accumulated beliefs contain the goal is a leaf of value 1.
    Other leaves are worth ``leaf_value(node)`` when given, else 0.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    goal = preds(goal)
    plans = tuple(plans)
    root_events = preds(root_events)
    ids = count()

    def node(events, bel, depth) -> EventNode:
        n = EventNode(next(ids), events, bel, depth)
        n.goal = bool(goal) and goal <= bel
        if n.goal:
            n.value = 1.0
            return n
        if depth < horizon:
            for plan in triggered(plans, events, bel):
                if plan.id not in table:
                    raise PlanningError(f"plan {plan.name} has no entry in the implication table")
                pn = PlanNode(next(ids), plan)
                n.children.append(pn)
                for outcome, p in table[plan.id]:
                    pn.children.append((p, node(outcome, bel | outcome, depth + 1)))
        if n.leaf and leaf_value is not None:
            n.value = float(leaf_value(n))
        return n

    root = node(root_events, preds(beliefs) | root_events, 0)
    return CoursePlanTree(root, horizon, goal, plans, table, root_events, leaf_value)


def branches(tree: CoursePlanTree, policy: Mapping[int, int]) -> list[CourseOfPlans]:
    """Root-to-leaf branches under ``policy`` (event node id to plan id)."""
    out: list[CourseOfPlans] = []

    def walk(n: EventNode, seq: tuple[Plan, ...], lam: float):
        if n.leaf:
            out.append(CourseOfPlans(seq, n.events, lam))
            return
        pn = _chosen(n, policy)
        for p, child in pn.children:
            walk(child, seq + (pn.plan,), lam * p)

    walk(tree.root, (), 1.0)
    return out


def _chosen(n: EventNode, policy: Mapping[int, int]) -> PlanNode:
    if n.id not in policy:
        raise PlanningError(f"policy has no choice for event node {n.id}")
    for pn in n.children:
        if pn.plan.id == policy[n.id]:
            return pn
    raise PlanningError(f"policy selects plan {policy[n.id]} which is not triggered at event node {n.id}")


def tree_to_dtmc(tree: CoursePlanTree, policy: Mapping[int, int]) -> DtmcModel:
    """Chain over the event nodes reached under ``policy``.

    Variables are ``node`` (tree id, negative for the two sinks), ``goal`` and
    ``depth``. Leaves are absorbing, except that a leaf of fractional value
    ``v`` moves to a goal sink with probability ``v`` and a failure sink with
    ``1 - v``. The child of each chosen plan is labelled ``plan:<name>`` and
    ``fired:<first action>``.
    """
    order: list[EventNode] = []
    index: dict[int, int] = {}
    labels: dict[int, set[str]] = {}
    stack = [tree.root]
    while stack:
        n = stack.pop()
        index[n.id] = len(order)
        order.append(n)
        labels.setdefault(n.id, set())
        if not n.leaf:
            pn = _chosen(n, policy)
            for p, child in reversed(pn.children):
                labels.setdefault(child.id, set()).update({f"plan:{pn.plan.name}", f"fired:{pn.plan.body[0]}"})
                stack.append(child)
    valuations = [(n.id, int(n.goal), n.depth) for n in order]
    state_labels = [frozenset(labels[n.id] | ({"goal"} if n.goal else set())) for n in order]
    sinks: dict[str, int] = {}

    def sink(kind: str) -> int:
        if kind not in sinks:
            sinks[kind] = len(valuations)
            valuations.append((-1 if kind == "goal" else -2, int(kind == "goal"), -1))
            state_labels.append(frozenset({"goal"}) if kind == "goal" else frozenset())
        return sinks[kind]

    rows: list[tuple[tuple[int, float], ...]] = []
    for n in order:
        if not n.leaf:
            pn = _chosen(n, policy)
            merged: dict[int, float] = {}
            for p, child in pn.children:
                if p > 0.0:
                    merged[index[child.id]] = merged.get(index[child.id], 0.0) + p
            rows.append(tuple(sorted(merged.items())))
        elif n.goal or n.value in (0.0, 1.0):
            if n.value == 1.0 and not n.goal:
                rows.append(((sink("goal"), 1.0),))
            else:
                rows.append(((index[n.id], 1.0),))
        else:
            rows.append(tuple(sorted(((sink("goal"), n.value), (sink("fail"), 1.0 - n.value)))))
    for kind in sorted(sinks, key=sinks.get):
        rows.append(((sinks[kind], 1.0),))
    return DtmcModel(
        variables=("node", "goal", "depth"),
        valuations=tuple(valuations),
        rows=tuple(rows),
        initial=0,
        labels=tuple(state_labels),
    )


GOAL_QUERY = ReachQuery(ex.parse_expression("goal=1"))


def optimal_values(tree: CoursePlanTree) -> tuple[dict[int, float], dict[int, int]]:
    """Bottom-up values of every event node and the maximising choice (lowest plan id on ties)."""
    values: dict[int, float] = {}
    policy: dict[int, int] = {}
    for n in reversed(tree.event_nodes()):
        if n.leaf:
            values[n.id] = n.value
            continue
        best, best_pid = -1.0, None
        for pn in n.children:
            v = sum(p * values[c.id] for p, c in pn.children)
            if v > best + 1e-15 or (abs(v - best) <= 1e-15 and pn.plan.id < best_pid):
                best, best_pid = v, pn.plan.id
        values[n.id] = best
        policy[n.id] = best_pid
    return values, policy


def compute_rewards(
    desires: Iterable[Plan],
    tree: CoursePlanTree,
    backend: str = "linear",
    cycle: int = 0,
) -> RewardTable:
    """Reward of each desired plan: goal reachability when it is chosen at the root and later choices are optimal."""
    values, policy = optimal_values(tree)
    at_root = {pn.plan.id for pn in tree.root.children}
    rewards: dict[int, float] = {}
    for plan in desires:
        if plan.id not in at_root:
            raise PlanningError(f"plan {plan.name} is not triggered at the root of the tree")
        chosen = dict(policy)
        chosen[tree.root.id] = plan.id
        model = tree_to_dtmc(tree, chosen)
        rewards[plan.id] = min(1.0, max(0.0, check_query(model, GOAL_QUERY, backend=backend)))
    return RewardTable(rewards, cycle)


def reward_update(prev: RewardTable, beliefs: Iterable[Predicate], tree: CoursePlanTree, cycle: int | None = None) -> RewardTable:
    """Rebuild the tree against ``beliefs`` and recompute rewards for the plans now desired."""
    fresh = build_tree(tree.plans, tree.table, beliefs, tree.root_events, tree.horizon, tree.goal, tree.leaf_value)
    desires = [pn.plan for pn in fresh.root.children]
    table = compute_rewards(desires, fresh, cycle=prev.cycle + 1 if cycle is None else cycle)
    for pid in sorted(set(prev.rewards) | set(table.rewards)):
        before, after = prev.rewards.get(pid), table.rewards.get(pid)
        if before != after:
            log.debug("reward of plan %d: %s -> %s", pid, before, after)
    return table


def select_plan(desires: Sequence[Plan], rewards: RewardTable | Mapping[int, float]) -> Plan | None:
    """Desire with the largest reward, lowest plan id on ties; None when nothing is desired."""
    table = rewards.rewards if isinstance(rewards, RewardTable) else rewards
    best = None
    for plan in desires:
        if plan.id not in table:
            raise PlanningError(f"no reward for plan {plan.name}")
        r = table[plan.id]
        if best is None or r > table[best.id] or (r == table[best.id] and plan.id < best.id):
            best = plan
    return best


def selection_record(cycle: int, desires: Sequence[Plan], rewards: RewardTable, chosen: Plan | None,
                     path_probability: float | None = None) -> str:
    """Structured log line for a selector decision."""
    names = {p.id: p.name for p in desires}
    return json.dumps({
        "cycle": cycle,
        "desires": [p.name for p in desires],
        "rewards": {names.get(k, str(k)): v for k, v in sorted(rewards.rewards.items())},
        "chosen": chosen.name if chosen else None,
        "path_probability": path_probability,
    })


def enumerate_symbolic_plans(
    plans: Sequence[Plan],
    table: ImplicationTable,
    beliefs: Iterable[Predicate],
    goal: Iterable[Predicate],
    depth: int,
    root_events: Iterable[Predicate] | None = None,
) -> list[tuple[Plan, ...]]:
    """Plan sequences of length at most ``depth`` that can reach the goal.

    Each plan must be triggered by an event of the previous outcome (the root
    events for the first) with its context true in the accumulated beliefs,
    and the goal must first hold after some outcome of the last plan.
    Ordered by length then plan ids.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    goal = preds(goal)
    bel0 = preds(beliefs)
    events0 = bel0 if root_events is None else preds(root_events)
    bel0 = bel0 | events0
    found: set[tuple[int, ...]] = set()
    by_id = {p.id: p for p in plans}

    def search(events, bel, seq):
        for plan in triggered(plans, events, bel):
            if plan.id not in table:
                continue
            path = seq + (plan.id,)
            for outcome, p in table[plan.id]:
                if p <= 0.0:
                    continue
                nb = bel | outcome
                if goal <= nb:
                    found.add(path)
                elif len(path) < depth:
                    search(outcome, nb, path)

    if not goal <= bel0:
        search(events0, bel0, ())
    return [tuple(by_id[i] for i in seq) for seq in sorted(found, key=lambda s: (len(s), s))]


# ---------------------------------------------------------------- counterexample selection


def choice_dtmc(tree: CoursePlanTree) -> DtmcModel:
    """Chain that picks a root plan uniformly and then follows optimal choices.

    Used for counterexample-driven selection: the most probable path to the
    goal starts with the transition of the recommended plan.
    """
    _, policy = optimal_values(tree)
    root = tree.root
    if root.leaf:
        return tree_to_dtmc(tree, policy)
    parts = []
    for pn in root.children:
        chosen = dict(policy)
        chosen[root.id] = pn.plan.id
        parts.append(tree_to_dtmc(tree, chosen))
    # glue the per-plan chains under a fresh root; each chain's own root is dropped
    valuations = [(root.id, int(root.goal), 0)]
    labels: list[frozenset[str]] = [frozenset()]
    rows: list[list[tuple[int, float]]] = [[]]
    share = 1.0 / len(parts)
    for k, part in enumerate(parts):
        offset = len(valuations) - 1  # part state s>0 maps to offset + s
        for s in range(1, part.n_states):
            node_id, goal, depth = part.valuations[s]
            valuations.append((node_id if node_id >= 0 else node_id - 2 * k, goal, depth))
            labels.append(part.labels[s])
            rows.append([(offset + t, p) for t, p in part.rows[s] if t != 0])
        rows[0].extend((offset + t, share * p) for t, p in part.rows[0])
    return DtmcModel(
        variables=("node", "goal", "depth"),
        valuations=tuple(valuations),
        rows=tuple(tuple(sorted(r)) for r in rows),
        initial=0,
        labels=tuple(labels),
    )


@dataclass(frozen=True)
class Recommendation:
    action: str
    path: TracePath


def counterexample_select(model: DtmcModel, failure_query: ReachQuery) -> Recommendation | None:
    """First action on the most probable path into the complement of the failure target."""
    failure = target_mask(model, failure_query.target)
    paths = most_probable_paths(model, ~failure, 1)
    if not paths:
        return None
    path = paths[0]
    for s in path.states[1:]:
        fired = sorted(l[len("fired:"):] for l in model.labels[s] if l.startswith("fired:"))
        if fired:
            return Recommendation(fired[0], path)
    return None
