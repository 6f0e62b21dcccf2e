"""Explicit-state discrete-time Markov chains and reachability analysis."""

from __future__ import annotations

import heapq
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .errors import ConvergenceError, ModelError, QueryError, StateSpaceOverflow

ROW_TOL = 1e-9
DEFAULT_CAP = 1_000_000
DENSE_LIMIT = 512


@dataclass(frozen=True, eq=False)
class DtmcModel:
    """Indexed states with integer valuations and a sparse row-stochastic matrix.

    ``rows[s]`` lists ``(target, probability)`` pairs sorted by target.
    ``deadlocks`` holds states that had no enabled transition and were given a
    probability-1 self-loop.
    """

    variables: tuple[str, ...]
    valuations: tuple[tuple[int, ...], ...]
    rows: tuple[tuple[tuple[int, float], ...], ...]
    initial: int = 0
    labels: tuple[frozenset[str], ...] = ()
    constants: Mapping[str, int | float] = field(default_factory=dict)
    deadlocks: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.valuations)
        if len(self.rows) != n:
            raise ModelError(f"{len(self.rows)} rows for {n} states")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(frozenset() for _ in range(n)))
        elif len(self.labels) != n:
            raise ModelError("label list length differs from state count")
        if not 0 <= self.initial < n:
            raise ModelError(f"initial state {self.initial} out of range")
        for s, row in enumerate(self.rows):
            total = 0.0
            for t, p in row:
                if not 0 <= t < n:
                    raise ModelError(f"state {s}: invalid target {t}")
                if not 0.0 < p <= 1.0:
                    raise ModelError(f"state {s}: probability {p!r} outside (0, 1]")
                total += p
            if abs(total - 1.0) > ROW_TOL:
                raise ModelError(f"state {s}: outgoing probabilities sum to {total!r}")
        if len(set(self.valuations)) != n:
            raise ModelError("state valuations are not unique")
        for v in self.valuations:
            if len(v) != len(self.variables):
                raise ModelError("valuation width differs from variable count")

    @property
    def n_states(self) -> int:
        return len(self.valuations)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        n = self.n_states
        indptr = np.zeros(n + 1, dtype=np.int64)
        for s, row in enumerate(self.rows):
            indptr[s + 1] = indptr[s] + len(row)
        indices = np.fromiter((t for row in self.rows for t, _ in row), dtype=np.int64, count=indptr[-1])
        data = np.fromiter((p for row in self.rows for _, p in row), dtype=np.float64, count=indptr[-1])
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    @cached_property
    def columns(self) -> dict[str, np.ndarray]:
        arr = np.array(self.valuations, dtype=np.int64).reshape(self.n_states, len(self.variables))
        return {name: arr[:, i] for i, name in enumerate(self.variables)}

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {v: i for i, v in enumerate(self.valuations)}

    def valuation(self, s: int) -> dict[str, int]:
        return dict(zip(self.variables, self.valuations[s]))

    def find(self, **values: int) -> list[int]:
        """States whose valuation matches all given variable values."""
        return [s for s, v in enumerate(self.valuations) if all(v[self.variables.index(k)] == x for k, x in values.items())]

    def successors(self, s: int) -> tuple[tuple[int, float], ...]:
        return self.rows[s]


Target = Union[np.ndarray, "ex.Expr", Iterable[int], str]


@dataclass(frozen=True)
class ReachQuery:
    target: ex.Expr
    bound: int | None = None

    def __str__(self) -> str:
        op = "F" if self.bound is None else f"F<={self.bound}"
        return f"P=? [ {op} {self.target} ]"


@dataclass(frozen=True)
class TracePath:
    states: tuple[int, ...]
    probability: float

    def __len__(self) -> int:
        return len(self.states) - 1


# ---------------------------------------------------------------- construction


def explore(
    initial: Hashable,
    expand: Callable[[Hashable], Iterable[tuple[float, Hashable, frozenset[str]]]],
    valuation: Callable[[Hashable], tuple[int, ...]],
    variables: Sequence[str],
    state_labels: Callable[[Hashable], frozenset[str]] | None = None,
    constants: Mapping[str, int | float] | None = None,
    cap: int = DEFAULT_CAP,
) -> tuple[DtmcModel, list[Hashable]]:
    """Breadth-first reachability from ``initial``.

    ``expand(key)`` yields ``(probability, successor_key, tags)``; tags are
    added to the successor's label set. An empty expansion marks a deadlock,
    which receives a probability-1 self-loop.
    """
    keys: list[Hashable] = [initial]
    ids: dict[Hashable, int] = {initial: 0}
    rows: list[tuple[tuple[int, float], ...]] = []
    tags: list[set[str]] = [set()]
    deadlocks: list[int] = []
    queue = deque([0])
    while queue:
        s = queue.popleft()
        merged: dict[int, float] = {}
        for p, key, extra in expand(keys[s]):
            if p <= 0.0:
                continue
            t = ids.get(key)
            if t is None:
                if len(keys) >= cap:
                    raise StateSpaceOverflow(cap, len(queue) + 1)
                t = len(keys)
                ids[key] = t
                keys.append(key)
                tags.append(set())
                queue.append(t)
            tags[t].update(extra)
            merged[t] = merged.get(t, 0.0) + p
        if not merged:
            deadlocks.append(s)
            merged = {s: 1.0}
        # merged alternatives can overshoot 1 by an ulp
        rows.append(tuple(sorted((t, min(p, 1.0)) for t, p in merged.items())))
    labels = []
    for s, key in enumerate(keys):
        base = state_labels(key) if state_labels else frozenset()
        labels.append(frozenset(base) | frozenset(tags[s]))
    model = DtmcModel(
        variables=tuple(variables),
        valuations=tuple(valuation(k) for k in keys),
        rows=tuple(rows),
        initial=0,
        labels=tuple(labels),
        constants=dict(constants or {}),
        deadlocks=tuple(deadlocks),
    )
    return model, keys


# ---------------------------------------------------------------- targets


def target_mask(model: DtmcModel, target: Target) -> np.ndarray:
    """Boolean mask of target states from a mask, an index set, an expression or expression text."""
    n = model.n_states
    if isinstance(target, str):
        target = ex.parse_expression(target)
    if isinstance(target, ex.Expr):
        known = set(model.variables) | set(model.constants)
        unknown = ex.names(target) - known
        if unknown:
            raise QueryError(f"unknown identifier(s) in query: {', '.join(sorted(unknown))}")
        columns: dict[str, np.ndarray | int | float] = dict(model.constants)
        columns.update(model.columns)
        label_masks = {
            name: np.fromiter((name in lab for lab in model.labels), dtype=bool, count=n)
            for name in ex.labels(target)
        }
        mask = ex.evaluate_columns(target, columns, label_masks, n)
        return np.asarray(mask, dtype=bool).copy()
    if isinstance(target, np.ndarray) and target.dtype == bool:
        if target.shape != (n,):
            raise QueryError("target mask has wrong shape")
        return target.copy()
    mask = np.zeros(n, dtype=bool)
    mask[list(target)] = True
    return mask


def _predecessors(model: DtmcModel) -> list[list[int]]:
    pred: list[list[int]] = [[] for _ in range(model.n_states)]
    for s, row in enumerate(model.rows):
        for t, _ in row:
            pred[t].append(s)
    return pred


def _backward(pred: list[list[int]], start: np.ndarray, through: np.ndarray) -> np.ndarray:
    """States reaching ``start`` via states in ``through`` (start included)."""
    seen = start.copy()
    queue = deque(np.flatnonzero(start).tolist())
    while queue:
        t = queue.popleft()
        for s in pred[t]:
            if not seen[s] and through[s]:
                seen[s] = True
                queue.append(s)
    return seen


def prob01_masks(model: DtmcModel, target: Target) -> tuple[np.ndarray, np.ndarray]:
    tmask = target_mask(model, target)
    pred = _predecessors(model)
    everywhere = np.ones(model.n_states, dtype=bool)
    prob0 = ~_backward(pred, tmask, everywhere)
    prob1 = ~_backward(pred, prob0, ~tmask)
    return prob0, prob1


def prob01_precompute(model: DtmcModel, target: Target) -> tuple[set[int], set[int]]:
    """States reaching the target with probability exactly 0 and exactly 1."""
    prob0, prob1 = prob01_masks(model, target)
    return set(np.flatnonzero(prob0).tolist()), set(np.flatnonzero(prob1).tolist())


# ---------------------------------------------------------------- solvers


def reach_prob_linear(
    model: DtmcModel,
    target: Target,
    method: str = "auto",
    tol: float = 1e-10,
    max_sweeps: int = 1_000_000,
) -> np.ndarray:
    """Unbounded reachability probabilities by solving the linear system.

    ``method`` is ``'auto'`` (dense solve up to 512 unknowns, Gauss-Seidel
    above), ``'dense'`` or ``'gauss-seidel'``.
    """
    prob0, prob1 = prob01_masks(model, target)
    x = np.where(prob1, 1.0, 0.0)
    unknown = np.flatnonzero(~(prob0 | prob1))
    if unknown.size == 0:
        return x
    if method == "auto":
        method = "dense" if unknown.size <= DENSE_LIMIT else "gauss-seidel"
    if method == "dense":
        P = model.matrix
        A = P[unknown][:, unknown].toarray()
        b = np.asarray(P[unknown] @ x).ravel()
        x[unknown] = np.linalg.solve(np.eye(unknown.size) - A, b)
        return np.clip(x, 0.0, 1.0)
    if method != "gauss-seidel":
        raise ValueError(f"unknown method {method!r}")
    return _gauss_seidel(model, x, unknown, tol, max_sweeps)


def _gauss_seidel(model: DtmcModel, x: np.ndarray, unknown: np.ndarray, tol: float, max_sweeps: int) -> np.ndarray:
    rows = model.rows
    order = unknown[::-1].tolist()  # BFS-numbered models mostly flow to higher indices
    xs = x.tolist()
    P = model.matrix
    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        for s in order:
            acc = 0.0
            diag = 0.0
            for t, p in rows[s]:
                if t == s:
                    diag += p
                else:
                    acc += p * xs[t]
            xs[s] = acc / (1.0 - diag)
        x = np.asarray(xs)
        residual = float(np.max(np.abs(P[unknown] @ x - x[unknown])))
        if residual < tol:
            return x
    raise ConvergenceError(max_sweeps, residual)


def reach_prob_vi(model: DtmcModel, target: Target, eps: float = 1e-8, max_iter: int = 10_000_000) -> np.ndarray:
    """Value iteration with a certified stopping rule.

    The lower iterate starts from the Prob1 indicator and the upper one from
    the complement of Prob0; both converge monotonically, so stopping once
    they are within ``eps`` bounds the error of the returned midpoint by eps/2.
    A plain delta test can stop far from the fixpoint on slowly mixing chains.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    prob0, prob1 = prob01_masks(model, target)
    fixed = prob0 | prob1
    P = model.matrix
    lo = prob1.astype(np.float64)
    hi = (~prob0).astype(np.float64)
    gap = float(np.max(hi - lo)) if lo.size else 0.0
    for _ in range(max_iter):
        if gap < eps:
            return (lo + hi) / 2.0
        lo_next = P @ lo
        hi_next = P @ hi
        lo = np.where(fixed, lo, lo_next)
        hi = np.where(fixed, hi, hi_next)
        gap = float(np.max(hi - lo))
    raise ConvergenceError(max_iter, gap)


def bounded_reach(model: DtmcModel, target: Target, k: int) -> np.ndarray:
    """Probability of reaching the target within ``k`` steps, per state."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    tmask = target_mask(model, target)
    P = model.matrix
    x = tmask.astype(np.float64)
    for _ in range(k):
        x = P @ x
        x[tmask] = 1.0
    return x


# ---------------------------------------------------------------- counterexamples


def most_probable_paths(model: DtmcModel, target: Target, count: int) -> list[TracePath]:
    """The ``count`` most probable paths from the initial state to the target.

    Paths stop at their first target state and may revisit states. Ordering is
    by probability (descending), then length, then lexicographic state indices.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    tmask = target_mask(model, target)
    reach = _backward(_predecessors(model), tmask, np.ones(model.n_states, dtype=bool))
    if not reach[model.initial]:
        return []
    rows = model.rows
    heap: list[tuple[float, int, tuple[int, ...]]] = [(-1.0, 0, (model.initial,))]
    popped = [0] * model.n_states
    found: list[TracePath] = []
    while heap and len(found) < count:
        negp, length, states = heapq.heappop(heap)
        v = states[-1]
        if popped[v] >= count:
            continue
        popped[v] += 1
        if tmask[v]:
            found.append(TracePath(states, -negp))
            continue
        prob = -negp
        for t, p in rows[v]:
            if reach[t]:
                heapq.heappush(heap, (-(prob * p), length + 1, states + (t,)))
    return found


def path_probability(model: DtmcModel, states: Sequence[int]) -> float:
    """Product of edge probabilities along ``states`` (0 if some step is not an edge)."""
    prob = 1.0
    for s, t in zip(states, states[1:]):
        p = dict(model.rows[s]).get(t)
        if p is None:
            return 0.0
        prob *= p
    return prob


# ---------------------------------------------------------------- queries


def check_query(model: DtmcModel, query: ReachQuery, backend: str = "linear", eps: float = 1e-8) -> float:
    """Probability, at the initial state, of satisfying ``query``."""
    if query.bound is not None:
        return float(bounded_reach(model, query.target, query.bound)[model.initial])
    if backend == "linear":
        x = reach_prob_linear(model, query.target)
    elif backend == "vi":
        x = reach_prob_vi(model, query.target, eps)
    else:
        raise QueryError(f"unknown backend {backend!r}")
    return float(x[model.initial])


# ---------------------------------------------------------------- text dump


def dump_model(model: DtmcModel) -> str:
    lines = [f"states {model.n_states}", f"initial {model.initial}"]
    for s in range(model.n_states):
        val = ",".join(f"{n}={v}" for n, v in zip(model.variables, model.valuations[s]))
        lab = ",".join(sorted(model.labels[s]))
        succ = ", ".join(f"{t}:{p:.17g}" for t, p in model.rows[s])
        lines.append(f"{s} {{{val}}} [{lab}] -> {succ}")
    return "\n".join(lines) + "\n"


_DUMP_LINE = re.compile(r"^(\d+) \{(.*)\} \[(.*)\] -> (.*)$")


def load_dump(text: str) -> DtmcModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines[0].split()[1])
    initial = int(lines[1].split()[1])
    variables: tuple[str, ...] = ()
    valuations, labels, rows = [], [], []
    for ln in lines[2 : 2 + n]:
        m = _DUMP_LINE.match(ln)
        if m is None:
            raise ModelError(f"malformed dump line: {ln!r}")
        pairs = [kv.split("=") for kv in m.group(2).split(",") if kv]
        variables = tuple(k for k, _ in pairs)
        valuations.append(tuple(int(v) for _, v in pairs))
        labels.append(frozenset(x for x in m.group(3).split(",") if x))
        row = []
        for item in m.group(4).split(", "):
            t, p = item.split(":")
            row.append((int(t), float(p)))
        rows.append(tuple(row))
    return DtmcModel(variables, tuple(valuations), tuple(rows), initial, tuple(labels))
