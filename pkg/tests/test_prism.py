import math

import pytest
from conftest import ABORT, MISSION
from oracles import VARS, survey_chain

from lisa.dtmc import check_query, reach_prob_linear
from lisa.errors import LisaSyntaxError, ModelError, QueryError
from lisa.prism import elaborate, export_prism, parse_prism_subset, parse_query

# reference values computed by the linear backend and cross-checked by value
# iteration and Monte Carlo (see test_acceptance)
MISSION_P = 0.6001066389471531
ABORT_P = 0.013694090732216647


def test_appendix_structure(appendix_ast):
    assert [m.name for m in appendix_ast.modules] == ["robot1", "environment", "weather1", "weather2"]
    assert len(appendix_ast.constants) == 7
    consts = appendix_ast.constant_values()
    assert consts == {"No": 15, "Na": 5, "Nb": 5, "Pa": 0.1, "Pb": 0.1, "Pi": 0.5, "Ps": 0.6}
    assert [v.name for v in appendix_ast.variables] == ["a1", "b1", "oil", "s", "t", "w1", "w2"]


def test_constant_defined_by_constant():
    ast = parse_prism_subset("dtmc const double Pa = 0.25; const double Pb = Pa; module m x : [0..1] init 0; endmodule")
    assert ast.constant_values()["Pb"] == 0.25
    assert ast.constant_values({"Pa": 0.5})["Pb"] == 0.5


@pytest.mark.parametrize(
    "text, message",
    [
        ("mdp module m x : [0..1]; endmodule", "only dtmc supported"),
        ("dtmc formula f = 1; module m x : [0..1]; endmodule", "unsupported construct"),
        ("dtmc label \"a\" = x=1; module m x : [0..1]; endmodule", "unsupported construct"),
        ("dtmc rewards \"r\" true : 1; endrewards", "unsupported construct"),
        ("dtmc global g : [0..1]; module m x : [0..1]; endmodule", "unsupported construct"),
        ("dtmc module m x : [0..1]; endmodule module n = m [x=y] endmodule", "unsupported construct"),
        ("dtmc module m x : bool; endmodule", "unsupported construct"),
    ],
)
def test_subset_gate(text, message):
    with pytest.raises(LisaSyntaxError) as info:
        parse_prism_subset(text)
    assert message in str(info.value)
    d = info.value.diagnostics[0]
    assert d.line >= 1 and d.col >= 1


def test_semantic_errors_are_located():
    text = "dtmc\nmodule m\n  x : [0..2] init 0;\n  [] y=0 -> (x'=1);\nendmodule\n"
    with pytest.raises(LisaSyntaxError) as info:
        parse_prism_subset(text)
    assert "y" in str(info.value)
    assert info.value.diagnostics[0].line == 4


def test_cross_module_assignment_rejected():
    text = "dtmc module a x : [0..1] init 0; [] true -> (y'=1); endmodule module b y : [0..1] init 0; endmodule"
    with pytest.raises(LisaSyntaxError):
        parse_prism_subset(text)


def test_initial_state_split(appendix_model):
    m = appendix_model
    assert m.valuation(m.initial) == {"a1": 0, "b1": 0, "oil": 15, "s": 0, "t": 1, "w1": 0, "w2": 0}
    succ = m.successors(m.initial)
    assert [p for _, p in succ] == [0.5, 0.5]
    assert sorted(m.valuation(t)["s"] for t, _ in succ) == [1, 2]


def test_tick1_multiplies_weather_branches(appendix_model):
    m = appendix_model
    (start,) = m.find(s=1, a1=0, b1=0, oil=14, t=1, w1=0, w2=0)
    row = {tuple(m.valuation(t)[k] for k in ("w1", "w2", "t")): p for t, p in m.successors(start)}
    assert row[(1, 1, 0)] == pytest.approx(0.01, abs=1e-15)
    assert row[(0, 0, 0)] == pytest.approx(0.81, abs=1e-15)
    assert sum(row.values()) == pytest.approx(1.0, abs=1e-12)


def test_grid_oracle_matches_every_row(appendix_model):
    rows, grid = survey_chain()
    assert grid == 6 * 6 * 16 * 4 * 2 * 2 * 2
    m = appendix_model
    assert m.n_states == len(rows) == 2845
    order = [m.variables.index(k) for k in VARS]
    index = {tuple(val[j] for j in order): s for s, val in enumerate(m.valuations)}
    for v, row in rows.items():
        s = index[v]
        got = {tuple(m.valuations[t][j] for j in order): p for t, p in m.rows[s]}
        assert got.keys() == row.keys()
        for k, p in row.items():
            assert got[k] == pytest.approx(p, abs=1e-12)


def test_variables_without_init_start_at_minimum(appendix_model):
    v = appendix_model.valuation(appendix_model.initial)
    assert v["w1"] == 0 and v["w2"] == 0


def test_deadlocks_self_loop(appendix_model):
    m = appendix_model
    assert len(m.deadlocks) > 0
    for s in m.deadlocks:
        assert m.rows[s] == ((s, 1.0),)
    done = m.find(s=1, a1=5, b1=5, t=0, oil=3, w1=0, w2=0)
    assert done and set(done) <= set(m.deadlocks)


def test_reference_values(appendix_model):
    assert check_query(appendix_model, parse_query(MISSION)) == pytest.approx(MISSION_P, abs=1e-12)
    assert check_query(appendix_model, parse_query(ABORT)) == pytest.approx(ABORT_P, abs=1e-12)


def test_nondeterminism_detected_and_uniform_flag():
    text = "dtmc module m x : [0..2] init 0; [] x=0 -> (x'=1); [] x=0 -> (x'=2); endmodule"
    ast = parse_prism_subset(text)
    with pytest.raises(ModelError, match="nondeterminism"):
        elaborate(ast)
    m = elaborate(ast, uniform_nondet=True)
    assert sorted(p for _, p in m.successors(m.initial)) == [0.5, 0.5]


def test_range_violation_reported():
    ast = parse_prism_subset("dtmc module m x : [0..1] init 0; [] true -> (x'=x+1); endmodule")
    with pytest.raises(ModelError, match="x"):
        elaborate(ast)


def test_probability_sum_violation():
    ast = parse_prism_subset("dtmc module m x : [0..1] init 0; [] x=0 -> 0.5:(x'=1) + 0.4:(x'=0); endmodule")
    with pytest.raises(ModelError, match="sum"):
        elaborate(ast)


def test_sync_requires_all_declaring_modules():
    text = """dtmc
    module a x : [0..1] init 0; [go] x=0 -> (x'=1); endmodule
    module b y : [0..1] init 0; [go] y=1 -> (y'=0); endmodule"""
    m = elaborate(parse_prism_subset(text))
    assert m.n_states == 1 and m.deadlocks == (0,)


def test_export_coin():
    ast = parse_prism_subset("dtmc module c x : [0..2] init 0; [] x=0 -> 0.5:(x'=1) + 0.5:(x'=2); endmodule")
    text = export_prism(elaborate(ast))
    assert "0.5:(st'=1) + 0.5:(st'=2)" in text
    commands = [ln for ln in text.splitlines() if ln.strip().startswith("[]")]
    assert len(commands) == 3


def test_export_round_trip(appendix_model):
    again = elaborate(parse_prism_subset(export_prism(appendix_model)))
    assert again.n_states == appendix_model.n_states
    # the exported model keeps the original valuation as state comments only,
    # so compare through the state index: st equals the original index
    x = reach_prob_linear(appendix_model, "a1=Na & b1=Nb")
    target = [s for s in range(again.n_states) if x[again.valuation(s)["st"]] == 1.0]
    y = reach_prob_linear(again, target)
    for s in range(again.n_states):
        assert y[s] == pytest.approx(x[again.valuation(s)["st"]], abs=1e-9)


@pytest.mark.parametrize(
    "text, bound",
    [(MISSION, None), ("P=? [ F<=10 s=3 ]", 10), ("P=?[F<=0 (s=3)|!(a1<2)]", 0)],
)
def test_parse_query(text, bound):
    q = parse_query(text)
    assert q.bound == bound


@pytest.mark.parametrize("text", ["P=? [ G s<3 ]", "P=? [ X s=1 ]", "P=? [ s=1 U s=2 ]", "P>0.5 [ F s=1 ]", "P=? [ F ]"])
def test_parse_query_rejects(text):
    with pytest.raises(QueryError):
        parse_query(text)


def test_unknown_identifier_deferred_to_check(appendix_model):
    q = parse_query("P=? [ F nosuch=1 ]")
    with pytest.raises(QueryError, match="nosuch"):
        check_query(appendix_model, q)


def test_constants_override_changes_answer(appendix_ast):
    m = elaborate(appendix_ast, constants={"No": 1})
    assert check_query(m, parse_query(ABORT)) == pytest.approx(1.0)
    assert math.isclose(check_query(m, parse_query(MISSION)), 0.0)
