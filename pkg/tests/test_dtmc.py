import math

import numpy as np
import pytest
from gen import chain_model
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import best_path, random_chain, reach_sets

from lisa.dtmc import (
    DtmcModel,
    ReachQuery,
    bounded_reach,
    check_query,
    dump_model,
    explore,
    load_dump,
    most_probable_paths,
    path_probability,
    prob01_precompute,
    reach_prob_linear,
    reach_prob_vi,
)
from lisa.errors import ConvergenceError, ModelError, QueryError, StateSpaceOverflow
from lisa.expr import parse_expression
from lisa.prism import parse_query

seeds = st.integers(0, 2**31)


# ---------------------------------------------------------------- model


def test_row_sum_checked():
    with pytest.raises(ModelError, match="sum"):
        chain_model([[(0, 0.5), (1, 0.4)], [(1, 1.0)]])


def test_zero_probability_rejected():
    with pytest.raises(ModelError):
        chain_model([[(0, 1.0), (1, 0.0)], [(1, 1.0)]])


def test_duplicate_valuations_rejected():
    with pytest.raises(ModelError, match="unique"):
        DtmcModel(("s",), ((0,), (0,)), (((0, 1.0),), ((1, 1.0),)))


def test_explore_deadlock_and_labels():
    def expand(k):
        if k < 2:
            yield 0.5, k + 1, frozenset({"up"})
            yield 0.5, 0, frozenset()

    model, keys = explore(0, expand, lambda k: (k,), ("k",))
    assert keys == [0, 1, 2]
    assert model.deadlocks == (2,)
    assert model.rows[2] == ((2, 1.0),)
    assert "up" in model.labels[1] and "up" not in model.labels[0]


def test_explore_overflow_reports_frontier():
    with pytest.raises(StateSpaceOverflow) as info:
        explore(0, lambda k: [(0.5, k + 1, frozenset()), (0.5, k + 2, frozenset())], lambda k: (k,), ("k",), cap=10)
    assert info.value.cap == 10 and info.value.frontier >= 1
    assert "frontier" in str(info.value)


# ---------------------------------------------------------------- prob0 / prob1


def test_prob01_examples():
    m = chain_model([[(1, 0.5), (2, 0.5)], [(1, 1.0)], [(2, 1.0)]])
    prob0, prob1 = prob01_precompute(m, [1])
    assert 2 in prob0 and 1 in prob1 and 0 not in prob0 | prob1


def test_prob01_escape_chain():
    # 0 -> 1 -> 2 -> 3 -> 4 (target); 2 may escape to absorbing 5
    rows = [[(1, 1.0)], [(2, 1.0)], [(3, 0.9), (5, 0.1)], [(4, 1.0)], [(4, 1.0)], [(5, 1.0)]]
    prob0, prob1 = prob01_precompute(chain_model(rows), [4])
    assert (prob0, prob1) == tuple(reach_sets(rows, {4}))
    assert prob0 == {5} and prob1 == {3, 4}


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_prob01_matches_graph_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    rows = random_chain(rng, n, max_out=3, absorbing=0.3)
    target = set(rng.choice(n, size=int(rng.integers(0, min(4, n) + 1)), replace=False).tolist())
    assert prob01_precompute(chain_model(rows), target) == reach_sets(rows, target)


# ---------------------------------------------------------------- unbounded


def test_linear_split():
    m = chain_model([[(1, 0.5), (2, 0.5)], [(1, 1.0)], [(2, 1.0)]])
    assert reach_prob_linear(m, [1])[0] == 0.5


@pytest.mark.parametrize("p", [1e-3, 0.2, 0.9])
def test_geometric_escape(p):
    m = chain_model([[(0, 1 - p), (1, p)], [(1, 1.0)]])
    assert reach_prob_linear(m, [1])[0] == 1.0
    assert reach_prob_vi(m, [1])[0] == pytest.approx(1.0, abs=1e-6)


def test_vi_trivial_targets():
    m = chain_model([[(0, 0.3), (1, 0.7)], [(0, 1.0)]])
    assert np.array_equal(reach_prob_vi(m, [0, 1]), [1.0, 1.0])
    assert np.array_equal(reach_prob_vi(m, []), [0.0, 0.0])


def _nontrivial_chain(rng, n):
    rows = random_chain(rng, n, max_out=4, absorbing=0.15)
    target = set(rng.choice(n, size=max(1, n // 10), replace=False).tolist())
    return chain_model(rows), target


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    m, target = _nontrivial_chain(rng, int(rng.integers(2, 200)))
    dense = reach_prob_linear(m, target, method="dense")
    gs = reach_prob_linear(m, target, method="gauss-seidel")
    vi = reach_prob_vi(m, target, eps=1e-8)
    assert np.max(np.abs(dense - gs)) < 1e-8
    assert np.max(np.abs(dense - vi)) < 1e-6
    assert np.all((dense >= 0) & (dense <= 1))


def test_gauss_seidel_convergence_error():
    m = chain_model([[(0, 0.999), (1, 0.0005), (2, 0.0005)], [(1, 1.0)], [(2, 1.0)]])
    with pytest.raises(ConvergenceError) as info:
        reach_prob_linear(m, [1], method="gauss-seidel", max_sweeps=1, tol=0.0)
    assert info.value.sweeps == 1


# ---------------------------------------------------------------- bounded


def test_bounded_examples():
    m = chain_model([[(1, 1.0)], [(2, 1.0)], [(2, 1.0)]])
    assert np.array_equal(bounded_reach(m, [2], 0), [0.0, 0.0, 1.0])
    assert bounded_reach(m, [2], 1)[0] == 0.0
    assert bounded_reach(m, [2], 2)[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_bounded_monotone(seed):
    rng = np.random.default_rng(seed)
    m, target = _nontrivial_chain(rng, int(rng.integers(2, 60)))
    full = reach_prob_linear(m, target)
    prev = bounded_reach(m, target, 0)
    for k in range(1, 30):
        cur = bounded_reach(m, target, k)
        assert np.all(prev <= cur + 1e-12)
        assert np.all(cur <= full + 1e-12)
        prev = cur


def test_bounded_appendix_converges(appendix_model):
    full = reach_prob_linear(appendix_model, "a1=Na & b1=Nb")[appendix_model.initial]
    k50 = bounded_reach(appendix_model, "a1=Na & b1=Nb", 50)[appendix_model.initial]
    assert 0 <= full - k50 < 1e-3


# ---------------------------------------------------------------- paths


def test_two_path_ordering():
    # 0 -0.6-> 1 -0.5-> 3 ; 0 -0.4-> 2 -1.0-> 3
    rows = [[(1, 0.6), (2, 0.4)], [(3, 0.5), (4, 0.5)], [(3, 1.0)], [(3, 1.0)], [(4, 1.0)]]
    paths = most_probable_paths(chain_model(rows), [3], 2)
    assert [p.states for p in paths] == [(0, 2, 3), (0, 1, 3)]
    assert paths[0].probability == 0.4 and paths[1].probability == 0.6 * 0.5


def test_deterministic_chain_path():
    m = chain_model([[(1, 1.0)], [(2, 1.0)], [(2, 1.0)]])
    (path,) = most_probable_paths(m, [2], 5)
    assert path.states == (0, 1, 2) and path.probability == 1.0


def test_unreachable_target_gives_no_paths():
    m = chain_model([[(0, 1.0)], [(1, 1.0)]])
    assert most_probable_paths(m, [1], 3) == []


def test_loops_allowed():
    m = chain_model([[(0, 0.5), (1, 0.5)], [(1, 1.0)]])
    paths = most_probable_paths(m, [1], 3)
    assert [p.states for p in paths] == [(0, 1), (0, 0, 1), (0, 0, 0, 1)]
    assert [p.probability for p in paths] == [0.5, 0.25, 0.125]


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_paths_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    rows = random_chain(rng, n, max_out=3, absorbing=0.2)
    target = {int(rng.integers(n))}
    paths = most_probable_paths(chain_model(rows), target, 4)
    probs = [p.probability for p in paths]
    assert probs == sorted(probs, reverse=True)
    for p in paths:
        assert p.probability == path_probability(chain_model(rows), p.states)
        assert p.states[-1] in target and not set(p.states[:-1]) & target
    expected = best_path(rows, 0, target, 8)
    if expected is None:
        assert not paths or len(paths[0]) > 8
    elif len(paths[0]) <= 8:
        assert paths[0].states == expected[0]
        assert paths[0].probability == pytest.approx(expected[1], abs=1e-12)


def _top_paths_by_bound(model, target, floor):
    """All target paths with probability >= floor in an acyclic region (depth-first with pruning)."""
    found = []
    tmask = np.zeros(model.n_states, dtype=bool)
    tmask[list(target)] = True

    def dfs(path, prob):
        v = path[-1]
        if tmask[v]:
            found.append((tuple(path), prob))
            return
        for t, p in model.rows[v]:
            if t != v and prob * p >= floor:
                path.append(t)
                dfs(path, prob * p)
                path.pop()

    dfs([model.initial], 1.0)
    return sorted(found, key=lambda pp: (-pp[1], len(pp[0]), pp[0]))


def test_appendix_top_paths(appendix_model):
    m = appendix_model
    target = set(np.flatnonzero(m.columns["a1"] + m.columns["b1"] == 10).tolist())
    paths = most_probable_paths(m, target, 3)
    assert len(paths) == 3
    expected = _top_paths_by_bound(m, target, paths[-1].probability * (1 - 1e-9))
    for got, (states, prob) in zip(paths, expected):
        assert got.states == states
        assert got.probability == pytest.approx(prob, abs=1e-12)


# ---------------------------------------------------------------- queries and dump


def test_check_query_trivial():
    m = chain_model([[(1, 1.0)], [(1, 1.0)], [(2, 1.0)]])
    assert check_query(m, ReachQuery(parse_expression("s=2"))) == 0.0
    assert check_query(m, ReachQuery(parse_expression("s=0"))) == 1.0
    assert check_query(m, ReachQuery(parse_expression("s=1"), bound=0)) == 0.0
    assert check_query(m, ReachQuery(parse_expression("s=1"), bound=1)) == 1.0


def test_check_query_unknown_identifier():
    with pytest.raises(QueryError, match="nope"):
        check_query(chain_model([[(0, 1.0)]]), parse_query("P=? [ F nope=1 ]"))


def test_check_query_backends(appendix_model):
    q = parse_query("P=? [ F a1=Na & b1=Nb ]")
    assert check_query(appendix_model, q, "vi") == pytest.approx(check_query(appendix_model, q), abs=1e-6)
    with pytest.raises(QueryError):
        check_query(appendix_model, q, "magic")


def test_dump_round_trip(appendix_model):
    text = dump_model(appendix_model)
    assert text.startswith(f"states {appendix_model.n_states}\ninitial {appendix_model.initial}\n")
    back = load_dump(text)
    assert back.rows == appendix_model.rows
    assert back.valuations == appendix_model.valuations
    assert back.variables == appendix_model.variables
    assert back.labels == appendix_model.labels


def test_dump_is_bit_exact():
    p = 1 / 3
    m = chain_model([[(0, p), (1, 1 - p)], [(1, 1.0)]])
    back = load_dump(dump_model(m))
    assert back.rows[0] == ((0, p), (1, 1 - p))
    assert math.fsum(q for _, q in back.rows[0]) == pytest.approx(1.0)
