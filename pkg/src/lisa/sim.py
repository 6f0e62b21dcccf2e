"""Seeded simulation and the Monte Carlo reachability oracle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .agent import AgentProgram, Trace, initial_state, run_agent, step_cycle
from .dtmc import DtmcModel, ReachQuery, prob01_masks, target_mask
from .errors import QueryError
from .rng import Sampler, _mix, counter_uniform_array

log = logging.getLogger(__name__)

Z99 = 2.576


def run_sim(program: AgentProgram, env=None, seed: int = 0, horizon: int = 0) -> Trace:
    """Trace of ``horizon`` cycles; draws are keyed by (seed, cycle, source), so reruns are identical."""
    return run_agent(program, env, horizon, seed)


def episode_seed(seed: int, episode: int) -> int:
    return _mix(_mix(seed & ((1 << 64) - 1)) ^ (episode + 1))


@dataclass(frozen=True)
class Estimate:
    estimate: float
    half_width: float
    n: int
    successes: int

    def __iter__(self):
        return iter((self.estimate, self.half_width))


def _estimate(successes: int, n: int) -> Estimate:
    p = successes / n
    return Estimate(p, Z99 * math.sqrt(p * (1.0 - p) / n), n, successes)


def monte_carlo(model_or_program, query: ReachQuery, n: int, seed: int = 0, env=None,
                horizon: int | None = None, max_steps: int = 1_000_000) -> Estimate:
    """Fraction of ``n`` seeded episodes that reach the query target, with a 99% normal-approximation half-width.

    For a :class:`DtmcModel` all episodes run in lockstep on arrays. An episode
    ends at the target, or once it enters a state from which the target is
    unreachable (absorbing failures included). For an :class:`AgentProgram`
    each episode is a run of the agent in ``env`` evaluated cycle by cycle.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(model_or_program, DtmcModel):
        return _mc_model(model_or_program, query, n, seed, max_steps)
    if isinstance(model_or_program, AgentProgram):
        return _mc_agent(model_or_program, query, n, seed, env, horizon if horizon is not None else 500)
    raise TypeError("expected a DtmcModel or an AgentProgram")


def _mc_model(model: DtmcModel, query: ReachQuery, n: int, seed: int, max_steps: int) -> Estimate:
    tmask = target_mask(model, query.target)
    prob0, _ = prob01_masks(model, tmask)
    P = model.matrix
    indptr, indices = P.indptr, P.indices
    # key = row + cumulative share within the row, increasing over the whole data array
    lengths = np.diff(indptr)
    rows_of = np.repeat(np.arange(model.n_states), lengths)
    cum = np.cumsum(P.data)
    before = np.concatenate(([0.0], cum))[indptr[:-1]]
    totals = np.add.reduceat(P.data, indptr[:-1]) if len(P.data) else np.zeros(0)
    local = (cum - np.repeat(before, lengths)) / np.repeat(totals, lengths)
    keys = rows_of + local
    keys[indptr[1:] - 1] = np.arange(model.n_states) + 1.0  # exact row ends

    limit = query.bound if query.bound is not None else max_steps
    state = np.full(n, model.initial, dtype=np.int64)
    episodes = np.arange(n, dtype=np.int64)
    success = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    hit = tmask[state]
    success |= hit
    active &= ~hit & ~prob0[state]
    step = 0
    while active.any() and step < limit:
        idx = np.flatnonzero(active)
        s = state[idx]
        u = counter_uniform_array(seed, [episodes[idx], step])
        pos = np.searchsorted(keys, s + u, side="right")
        pos = np.minimum(pos, indptr[s + 1] - 1)
        nxt = indices[pos]
        state[idx] = nxt
        hit = tmask[nxt]
        success[idx[hit]] = True
        active[idx[hit | prob0[nxt]]] = False
        step += 1
    if query.bound is None and active.any():
        log.warning("%d episodes still running after %d steps; counted as failures", int(active.sum()), step)
    return _estimate(int(success.sum()), n)


def _agent_target(program: AgentProgram, env, target: ex.Expr):
    env_vars = {k for k, _ in (env.initial_state() if env is not None else ())}
    consts = dict(getattr(env, "constants", {}) or {})
    pred_names = {p.var_name for p in program.predicates}
    unknown = ex.names(target) - env_vars - set(consts) - pred_names
    if unknown:
        raise QueryError(f"unknown identifier(s) in query: {', '.join(sorted(unknown))}")

    def holds(state, snapshot) -> bool:
        values = dict(consts)
        values.update({p.var_name: 0 for p in program.predicates})
        values.update({p.var_name: 1 for p in snapshot})
        values.update(state.env)
        return bool(ex.evaluate(target, values))

    return holds


def _mc_agent(program: AgentProgram, query: ReachQuery, n: int, seed: int, env, horizon: int) -> Estimate:
    limit = horizon if query.bound is None else min(horizon, query.bound)
    holds = _agent_target(program, env, query.target)
    successes = 0
    for i in range(n):
        sampler = Sampler(episode_seed(seed, i))
        state, _ = initial_state(program, env)
        ok = holds(state, state.beliefs.predicates())
        cycle = 0
        while not ok and cycle < limit:
            cycle += 1
            state, _ = step_cycle(program, state, sampler, cycle, env)
            ok = holds(state, state.reviewed)
        successes += ok
    return _estimate(successes, n)
