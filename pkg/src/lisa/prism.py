"""Reader, elaborator and exporter for the dtmc subset of the PRISM language.

Supported: ``dtmc`` header, ``const int|double`` definitions (possibly
expressions over earlier constants, or left undefined and supplied at
elaboration), modules with bounded integer variables, and labelled or
unlabelled guarded commands with probabilistic updates. Everything else is
rejected with a located "unsupported construct" error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import expr as ex
from .dtmc import DtmcModel, ReachQuery, explore, DEFAULT_CAP
from .errors import Diagnostic, LisaSyntaxError, ModelError, QueryError

PROB_TOL = 1e-9

_OTHER_KINDS = {"mdp", "ctmc", "ctmdp", "pta", "pomdp", "popta", "smg", "nondeterministic", "stochastic", "probabilistic"}
_UNSUPPORTED = {"formula", "label", "rewards", "global", "init", "system", "endsystem", "bool", "clock", "player"}


@dataclass(frozen=True)
class Constant:
    name: str
    type: str  # 'int' or 'double'
    definition: ex.Expr | None
    line: int = 0


@dataclass(frozen=True)
class Variable:
    name: str
    low: ex.Expr
    high: ex.Expr
    init: ex.Expr | None
    line: int = 0


@dataclass(frozen=True)
class Assignment:
    var: str
    value: ex.Expr


@dataclass(frozen=True)
class Alternative:
    probability: ex.Expr
    assignments: tuple[Assignment, ...]


@dataclass(frozen=True)
class PrismCommand:
    label: str | None
    guard: ex.Expr
    alternatives: tuple[Alternative, ...]
    line: int = 0


@dataclass(frozen=True)
class Module:
    name: str
    variables: tuple[Variable, ...]
    commands: tuple[PrismCommand, ...]


@dataclass(frozen=True)
class PrismAst:
    kind: str
    constants: tuple[Constant, ...]
    modules: tuple[Module, ...]

    def constant_values(self, overrides: Mapping[str, int | float] | None = None) -> dict[str, int | float]:
        """Resolve constant definitions in declaration order."""
        overrides = dict(overrides or {})
        values: dict[str, int | float] = {}
        for c in self.constants:
            if c.name in overrides:
                v = overrides.pop(c.name)
            elif c.definition is None:
                raise ModelError(f"constant {c.name} is undefined; supply a value")
            else:
                v = ex.evaluate(c.definition, values)
            values[c.name] = int(v) if c.type == "int" else float(v)
        if overrides:
            raise ModelError(f"unknown constant(s): {', '.join(sorted(overrides))}")
        return values

    @property
    def variables(self) -> list[Variable]:
        return [v for m in self.modules for v in m.variables]


# ---------------------------------------------------------------- parsing


def parse_prism_subset(text: str) -> PrismAst:
    """Parse PRISM text; raises :class:`LisaSyntaxError` with located diagnostics."""
    ts = ex.TokenStream(ex.tokenize(text))
    kind_tok = ts.tok
    if kind_tok.kind == "id" and kind_tok.text in _OTHER_KINDS:
        ts.error(f"only dtmc supported (found {kind_tok.text!r})")
    ts.expect("dtmc")
    constants: list[Constant] = []
    modules: list[Module] = []
    while ts.tok.kind != "eof":
        t = ts.tok
        if ts.at("const"):
            constants.append(_parse_const(ts))
        elif ts.at("module"):
            modules.append(_parse_module(ts))
        elif t.kind == "id" and t.text in _UNSUPPORTED | _OTHER_KINDS:
            ts.error(f"unsupported construct: {t.text!r}")
        else:
            ts.error(f"expected 'const' or 'module', found {ts.describe(t)}")
    ast = PrismAst("dtmc", tuple(constants), tuple(modules))
    _check(ast, text)
    return ast


def _parse_const(ts: ex.TokenStream) -> Constant:
    line = ts.expect("const").line
    ctype = "int"
    if ts.at("int") or ts.at("double"):
        ctype = ts.next().text
    elif ts.at("bool"):
        ts.error("unsupported construct: bool constant")
    name = ts.expect_id().text
    definition = None
    if ts.accept("="):
        definition = ex.parse_expr(ts)
    ts.expect(";")
    return Constant(name, ctype, definition, line)


def _parse_module(ts: ex.TokenStream) -> Module:
    ts.expect("module")
    name = ts.expect_id().text
    if ts.at("="):
        ts.error("unsupported construct: module renaming")
    variables: list[Variable] = []
    commands: list[PrismCommand] = []
    while not ts.at("endmodule"):
        t = ts.tok
        if t.kind == "eof":
            ts.error(f"missing 'endmodule' for module {name}")
        if ts.at("["):
            commands.append(_parse_command(ts))
        elif t.kind == "id" and ts.peek().text == ":":
            variables.append(_parse_variable(ts))
        else:
            ts.error(f"expected variable declaration or command, found {ts.describe(t)}")
    ts.expect("endmodule")
    return Module(name, tuple(variables), tuple(commands))


def _parse_variable(ts: ex.TokenStream) -> Variable:
    tok = ts.expect_id()
    ts.expect(":")
    if ts.at("bool"):
        ts.error("unsupported construct: bool variable")
    ts.expect("[")
    low = ex.parse_expr(ts)
    ts.expect("..")
    high = ex.parse_expr(ts)
    ts.expect("]")
    init = None
    if ts.accept("init"):
        init = ex.parse_expr(ts)
    ts.expect(";")
    return Variable(tok.text, low, high, init, tok.line)


def _parse_command(ts: ex.TokenStream) -> PrismCommand:
    line = ts.expect("[").line
    label = None
    if ts.tok.kind == "id":
        label = ts.next().text
    ts.expect("]")
    guard = ex.parse_expr(ts)
    ts.expect("->")
    alternatives = [_parse_alternative(ts)]
    while ts.accept("+"):
        alternatives.append(_parse_alternative(ts))
    ts.expect(";")
    return PrismCommand(label, guard, tuple(alternatives), line)


def _is_assignment_start(ts: ex.TokenStream) -> bool:
    return ts.at("(") and ts.peek(1).kind == "id" and ts.peek(2).text == "'"


def _parse_alternative(ts: ex.TokenStream) -> Alternative:
    if _is_assignment_start(ts) or ts.at("true"):
        return Alternative(ex.Num(1), _parse_assignments(ts))
    prob = ex.parse_expr(ts)
    ts.expect(":")
    return Alternative(prob, _parse_assignments(ts))


def _parse_assignments(ts: ex.TokenStream) -> tuple[Assignment, ...]:
    if ts.accept("true"):
        return ()
    out = [_parse_assignment(ts)]
    while ts.accept("&"):
        out.append(_parse_assignment(ts))
    return tuple(out)


def _parse_assignment(ts: ex.TokenStream) -> Assignment:
    ts.expect("(")
    var = ts.expect_id().text
    ts.expect("'")
    ts.expect("=")
    value = ex.parse_expr(ts)
    ts.expect(")")
    return Assignment(var, value)


def _check(ast: PrismAst, text: str) -> None:
    diags: list[Diagnostic] = []
    seen_consts: set[str] = set()
    for c in ast.constants:
        if c.name in seen_consts:
            diags.append(Diagnostic("error", c.line, 1, f"duplicate constant {c.name}"))
        if c.definition is not None:
            bad = ex.names(c.definition) - seen_consts
            if bad:
                diags.append(Diagnostic("error", c.line, 1, f"constant {c.name} refers to undefined {', '.join(sorted(bad))}"))
        seen_consts.add(c.name)
    owner: dict[str, str] = {}
    for m in ast.modules:
        for v in m.variables:
            if v.name in owner or v.name in seen_consts:
                diags.append(Diagnostic("error", v.line, 1, f"duplicate identifier {v.name}"))
            owner[v.name] = m.name
    known = seen_consts | set(owner)
    for m in ast.modules:
        for cmd in m.commands:
            for name in ex.names(cmd.guard) - known:
                diags.append(Diagnostic("error", cmd.line, 1, f"unknown identifier {name} in guard"))
            for alt in cmd.alternatives:
                for name in ex.names(alt.probability) - known:
                    diags.append(Diagnostic("error", cmd.line, 1, f"unknown identifier {name} in probability"))
                targets = [a.var for a in alt.assignments]
                if len(set(targets)) != len(targets):
                    diags.append(Diagnostic("error", cmd.line, 1, "variable assigned twice in one update"))
                for a in alt.assignments:
                    if owner.get(a.var) != m.name:
                        diags.append(
                            Diagnostic("error", cmd.line, 1, f"module {m.name} cannot assign {a.var}")
                        )
                    for name in ex.names(a.value) - known:
                        diags.append(Diagnostic("error", cmd.line, 1, f"unknown identifier {name} in update"))
    if diags:
        raise LisaSyntaxError(diags)


# ---------------------------------------------------------------- elaboration


@dataclass
class _Compiled:
    module: int
    label: str | None
    guard: object
    alternatives: list[tuple[object, list[tuple[int, object]]]]
    line: int


def _compile(ast: PrismAst, consts: Mapping[str, int | float]):
    variables = ast.variables
    names = [v.name for v in variables]
    lows, highs, inits = [], [], []
    for v in variables:
        lo = int(ex.evaluate(v.low, consts))
        hi = int(ex.evaluate(v.high, consts))
        if lo > hi:
            raise ModelError(f"variable {v.name} has empty range [{lo}..{hi}]")
        init = lo if v.init is None else int(ex.evaluate(v.init, consts))
        if not lo <= init <= hi:
            raise ModelError(f"initial value {init} of {v.name} outside [{lo}..{hi}]")
        lows.append(lo)
        highs.append(hi)
        inits.append(init)
    index = {n: i for i, n in enumerate(names)}
    commands = []
    for mi, m in enumerate(ast.modules):
        for cmd in m.commands:
            guard = ex.compile_expr(ex.substitute(cmd.guard, consts), names)
            alts = []
            for alt in cmd.alternatives:
                prob = ex.compile_expr(ex.substitute(alt.probability, consts), names)
                assigns = [(index[a.var], ex.compile_expr(ex.substitute(a.value, consts), names)) for a in alt.assignments]
                alts.append((prob, assigns))
            commands.append(_Compiled(mi, cmd.label, guard, alts, cmd.line))
    return names, tuple(inits), lows, highs, commands


def elaborate(
    ast: PrismAst,
    constants: Mapping[str, int | float] | None = None,
    uniform_nondet: bool = False,
    cap: int = DEFAULT_CAP,
) -> DtmcModel:
    """Build the reachable state space of the parallel composition.

    A labelled command synchronises with every module declaring that label;
    joint probabilities multiply. More than one enabled choice in a state is
    an error unless ``uniform_nondet`` is set.
    """
    consts = ast.constant_values(constants)
    names, init, lows, highs, commands = _compile(ast, consts)
    declaring: dict[str, set[int]] = {}
    for c in commands:
        if c.label is not None:
            declaring.setdefault(c.label, set()).add(c.module)
    by_label_module: dict[tuple[str, int], list[_Compiled]] = {}
    unlabelled: list[_Compiled] = []
    for c in commands:
        if c.label is None:
            unlabelled.append(c)
        else:
            by_label_module.setdefault((c.label, c.module), []).append(c)

    def distribution(cmd: _Compiled, v: tuple[int, ...]) -> list[tuple[float, list[tuple[int, int]]]]:
        out = []
        total = 0.0
        for prob, assigns in cmd.alternatives:
            p = float(prob(v))
            if p < 0.0 or p > 1.0 + PROB_TOL:
                raise ModelError(f"line {cmd.line}: probability {p} outside [0, 1] in state {_fmt(names, v)}")
            total += p
            out.append((p, [(i, f(v)) for i, f in assigns]))
        if abs(total - 1.0) > PROB_TOL:
            raise ModelError(f"line {cmd.line}: probabilities sum to {total!r} in state {_fmt(names, v)}")
        return out

    def apply(v: tuple[int, ...], updates: list[tuple[int, int]], line: int) -> tuple[int, ...]:
        w = list(v)
        for i, value in updates:
            if value != int(value) or not lows[i] <= value <= highs[i]:
                raise ModelError(
                    f"line {line}: update {names[i]}'={value} leaves range [{lows[i]}..{highs[i]}] in state {_fmt(names, v)}"
                )
            w[i] = int(value)
        return tuple(w)

    def expand(v: tuple[int, ...]):
        choices: list[list[_Compiled]] = [[c] for c in unlabelled if c.guard(v)]
        for label, modules in declaring.items():
            per_module = []
            for mi in sorted(modules):
                enabled = [c for c in by_label_module[(label, mi)] if c.guard(v)]
                if not enabled:
                    break
                per_module.append(enabled)
            else:
                choices.extend(list(combo) for combo in itertools.product(*per_module))
        if not choices:
            return []
        if len(choices) > 1 and not uniform_nondet:
            lines = ", ".join(str(c.line) for combo in choices for c in combo)
            raise ModelError(f"nondeterminism in state {_fmt(names, v)}: {len(choices)} enabled choices (lines {lines})")
        weight = 1.0 / len(choices)
        out = []
        for combo in choices:
            dists = [distribution(c, v) for c in combo]
            line = combo[0].line
            for picks in itertools.product(*dists):
                p = weight
                updates: list[tuple[int, int]] = []
                for q, ups in picks:
                    p *= q
                    updates.extend(ups)
                if p > 0.0:
                    out.append((p, apply(v, updates, line), frozenset()))
        return out

    model, _ = explore(init, expand, lambda v: v, names, constants=consts, cap=cap)
    labels = tuple(
        lab | ({"init"} if s == model.initial else set()) | ({"deadlock"} if s in set(model.deadlocks) else set())
        for s, lab in enumerate(model.labels)
    )
    return DtmcModel(model.variables, model.valuations, model.rows, model.initial, labels, consts, model.deadlocks)


def _fmt(names: Sequence[str], v: Sequence[int]) -> str:
    return "(" + ", ".join(f"{n}={x}" for n, x in zip(names, v)) + ")"


# ---------------------------------------------------------------- export


def export_prism(model: DtmcModel, module: str = "explicit") -> str:
    """Explicit-state single-module program over one variable ``st``."""
    n = model.n_states
    lines = ["dtmc", "", f"module {module}"]
    lines.append(f"  st : [0..{max(n - 1, 0)}] init {model.initial};")
    for s in range(n):
        updates = " + ".join(f"{p!r}:(st'={t})" for t, p in model.rows[s])
        comment = ", ".join(f"{k}={v}" for k, v in zip(model.variables, model.valuations[s]))
        lines.append(f"  [] st={s} -> {updates}; // {comment}" if comment else f"  [] st={s} -> {updates};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- queries


def parse_query(text: str) -> ReachQuery:
    """Parse ``P=? [ F expr ]`` or ``P=? [ F<=k expr ]``."""
    try:
        ts = ex.TokenStream(ex.tokenize(text))
        ts.expect("P")
        ts.expect("=")
        ts.expect("?")
        ts.expect("[")
        if ts.tok.kind == "id" and ts.tok.text in ("G", "X", "U", "W", "R"):
            ts.error("only F supported")
        if not ts.at("F"):
            ts.error("only F supported")
        ts.next()
        bound = None
        if ts.accept("<="):
            tok = ts.next()
            if tok.kind != "num" or not tok.text.isdigit():
                ts.error("step bound must be a nonnegative integer literal", tok)
            bound = int(tok.text)
        target = ex.parse_expr(ts)
        if ts.at("U"):
            ts.error("only F supported")
        ts.expect("]")
        if ts.tok.kind != "eof":
            ts.error(f"unexpected {ts.describe(ts.tok)} after query")
    except LisaSyntaxError as err:
        raise QueryError(str(err)) from err
    return ReachQuery(target, bound)
