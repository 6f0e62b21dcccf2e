"""Textual LISA agent language.

Grammar (EBNF)::

    program   = { statement } ;
    statement = "percept" pred "."
              | "belief" pred "."
              | "opstate" pred "."
              | "init" call "."
              | "action" ID ( ("add" | "remove") pred
                            | ("runOnce" | "runRepeated") [ dist("feedback") ] ) "."
              | "rule" pred ":-" literal { "&" literal } "."
              | "plan" ID ":" "+" pred ":" context "<-" call { ";" call } [ dist("outcomes") ] "." ;
    context   = "true" | literal { "&" literal } ;
    literal   = [ "not" ] pred ;
    call      = ID [ "(" pred ")" ] ;
    dist(kw)  = kw "{" { NUMBER ":" predset ";" } "}" ;
    predset   = "{" "}" | pred { "," pred } ;
    pred      = ID [ "(" ATOM { "," ATOM } ")" ] ;

``//`` starts a comment. ``note(p)`` and ``drop(p)`` add and remove a mental
note; ``stop(a)`` ends a runRepeated action. Parsing never raises anything but
:class:`LisaSyntaxError`, which carries every error found.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .agent import (
    BUILTIN_ACTIONS,
    FEEDBACK_TOL,
    ActionDef,
    ActionKind,
    ActionRef,
    AgentProgram,
    Literal,
    LogicRule,
    Plan,
    Predicate,
)
from .errors import Diagnostic, LisaError, LisaSyntaxError

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+|//[^\n]*)"
    r"|(?P<num>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>:-|<-|[+:;.,&(){}])"
)
KEYWORDS = {"percept", "belief", "opstate", "init", "action", "rule", "plan", "not", "true", "feedback", "outcomes"}
_IDENT = re.compile(r"[a-z][a-zA-Z0-9_]*\Z")
_KINDS = {"add": ActionKind.INTERNAL_ADD, "remove": ActionKind.INTERNAL_REMOVE,
          "runOnce": ActionKind.RUN_ONCE, "runRepeated": ActionKind.RUN_REPEATED}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


class _Abort(Exception):
    pass


def _tokenize(text: str, diags: list[Diagnostic]) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            diags.append(Diagnostic("error", line, pos - line_start + 1, f"unexpected character {text[pos]!r}"))
            pos += 1
            continue
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


@dataclass
class SourceProgram:
    """Parse result: the program plus where each element was declared."""

    text: str
    program: AgentProgram
    locations: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)


class _Parser:
    def __init__(self, text: str):
        self.diags: list[Diagnostic] = []
        self.toks = _tokenize(text, self.diags)
        self.i = 0
        self.loc: dict[tuple[str, str], tuple[int, int]] = {}
        self.percepts: list[Predicate] = []
        self.beliefs: list[Predicate] = []
        self.opstates: list[Predicate] = []
        self.inits: list[tuple[ActionRef, _Tok]] = []
        self.actions: list[tuple[ActionDef, _Tok]] = []
        self.rules: list[tuple[LogicRule, _Tok]] = []
        self.plans: list[tuple[str, Predicate, tuple, tuple, tuple, _Tok]] = []

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "id") and t.text == text

    def error(self, msg: str, tok: _Tok | None = None):
        t = tok or self.tok
        self.diags.append(Diagnostic("error", t.line, t.col, msg))
        raise _Abort

    def expect(self, text: str) -> _Tok:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self._describe(self.tok)}")
        return self.next()

    def ident(self, what: str = "identifier") -> _Tok:
        t = self.tok
        if t.kind != "id" or not _IDENT.match(t.text) or t.text in KEYWORDS:
            self.error(f"expected {what}, found {self._describe(t)}")
        return self.next()

    @staticmethod
    def _describe(t: _Tok) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)

    # grammar
    def parse(self) -> None:
        while self.tok.kind != "eof":
            start = self.i
            try:
                self.statement()
            except _Abort:
                self._recover(start)

    def _recover(self, start: int) -> None:
        if self.i == start:
            self.next()
        while self.tok.kind != "eof" and not self.at("."):
            self.next()
        if self.at("."):
            self.next()

    def statement(self) -> None:
        t = self.tok
        kw = t.text if t.kind == "id" else ""
        handler = {
            "percept": self.decl, "belief": self.decl, "opstate": self.decl,
            "init": self.init, "action": self.action, "rule": self.rule, "plan": self.plan,
        }.get(kw)
        if handler is None:
            self.error(f"expected a statement keyword, found {self._describe(t)}")
        self.next()
        handler(t)
        self.expect(".")

    def pred(self) -> Predicate:
        name = self.ident("predicate name").text
        args: list[str] = []
        if self.at("("):
            self.next()
            while True:
                t = self.tok
                if t.kind not in ("id", "num"):
                    self.error(f"expected a constant, found {self._describe(t)}")
                args.append(self.next().text)
                if not self.at(","):
                    break
                self.next()
            self.expect(")")
        return Predicate(name, tuple(args))

    def decl(self, kw: _Tok) -> None:
        t = self.tok
        p = self.pred()
        target = {"percept": self.percepts, "belief": self.beliefs, "opstate": self.opstates}[kw.text]
        if p not in target:
            target.append(p)
        self.loc.setdefault((kw.text, str(p)), (t.line, t.col))

    def call(self) -> ActionRef:
        name = self.ident("action name").text
        arg = None
        if self.at("("):
            self.next()
            arg = self.pred()
            self.expect(")")
        return ActionRef(name, arg)

    def init(self, kw: _Tok) -> None:
        t = self.tok
        self.inits.append((self.call(), t))

    def dist(self, keyword: str) -> tuple[tuple[frozenset[Predicate], float], ...]:
        start = self.expect(keyword)
        self.expect("{")
        out = []
        while not self.at("}"):
            t = self.tok
            if t.kind != "num":
                self.error(f"expected a probability, found {self._describe(t)}")
            prob = float(self.next().text)
            if prob > 1.0:
                self.error(f"probability {t.text} exceeds 1", t)
            self.expect(":")
            items: set[Predicate] = set()
            if self.at("{"):
                self.next()
                self.expect("}")
            else:
                items.add(self.pred())
                while self.at(","):
                    self.next()
                    items.add(self.pred())
            self.expect(";")
            out.append((frozenset(items), prob))
        self.expect("}")
        if not out:
            self.error(f"empty {keyword} block", start)
        total = sum(p for _, p in out)
        if abs(total - 1.0) > FEEDBACK_TOL:
            self.error(f"probabilities sum {total:.12g}", start)
        return tuple(out)

    def action(self, kw: _Tok) -> None:
        name_tok = self.ident("action name")
        kind_tok = self.tok
        kind = _KINDS.get(kind_tok.text) if kind_tok.kind == "id" else None
        if kind is None:
            self.error(f"expected add, remove, runOnce or runRepeated, found {self._describe(kind_tok)}")
        self.next()
        target = None
        feedback: tuple = ()
        if kind in (ActionKind.INTERNAL_ADD, ActionKind.INTERNAL_REMOVE):
            target = self.pred()
        elif self.at("feedback"):
            feedback = self.dist("feedback")
        self.actions.append((ActionDef(name_tok.text, kind, feedback, target), name_tok))
        self.loc.setdefault(("action", name_tok.text), (name_tok.line, name_tok.col))

    def literals(self) -> tuple[Literal, ...]:
        out = [self.literal()]
        while self.at("&"):
            self.next()
            out.append(self.literal())
        return tuple(out)

    def literal(self) -> Literal:
        positive = True
        if self.at("not"):
            self.next()
            positive = False
        return Literal(self.pred(), positive)

    def rule(self, kw: _Tok) -> None:
        t = self.tok
        head = self.pred()
        self.expect(":-")
        self.rules.append((LogicRule(head, self.literals()), t))

    def plan(self, kw: _Tok) -> None:
        name_tok = self.ident("plan name")
        self.expect(":")
        if not self.at("+"):
            self.error(f"expected '+' before the triggering predicate, found {self._describe(self.tok)}")
        self.next()
        trigger = self.pred()
        self.expect(":")
        if self.at("true"):
            self.next()
            context: tuple[Literal, ...] = ()
        else:
            context = self.literals()
        self.expect("<-")
        body = [self.call()]
        while self.at(";"):
            self.next()
            body.append(self.call())
        outcomes = self.dist("outcomes") if self.at("outcomes") else ()
        self.plans.append((name_tok.text, trigger, context, tuple(body), outcomes, name_tok))
        self.loc.setdefault(("plan", name_tok.text), (name_tok.line, name_tok.col))

    # semantic checks
    def _err(self, tok: _Tok, msg: str) -> None:
        self.diags.append(Diagnostic("error", tok.line, tok.col, msg))

    def build(self) -> AgentProgram | None:
        actions: dict[str, ActionDef] = {}
        for a, tok in self.actions:
            if a.name in BUILTIN_ACTIONS:
                self._err(tok, f"{a.name} is a built-in action")
            elif a.name in actions:
                self._err(tok, f"duplicate action {a.name}")
            else:
                actions[a.name] = a
        belief_names = {p.name for p in self.beliefs}
        for a, tok in self.actions:
            if a.name in belief_names:
                self._err(tok, f"action {a.name} is also an initial belief")
        for rule, tok in self.rules:
            if rule.head.name in actions:
                self._err(tok, f"rule head {rule.head} is an action")

        def check_call(ref: ActionRef, tok: _Tok) -> None:
            if ref.name in ("note", "drop"):
                if ref.arg is None:
                    self._err(tok, f"{ref.name} needs a predicate argument")
            elif ref.name == "stop":
                a = actions.get(ref.arg.name) if ref.arg is not None and not ref.arg.args else None
                if a is None or a.kind is not ActionKind.RUN_REPEATED:
                    self._err(tok, f"stop({ref.arg or ''}) does not name a runRepeated action")
            elif ref.name not in actions:
                self._err(tok, f"undeclared action {ref.name}")
            elif ref.arg is not None:
                self._err(tok, f"action {ref.name} takes no argument")

        for ref, tok in self.inits:
            check_call(ref, tok)
        seen: set[str] = set()
        plans = []
        for name, trigger, context, body, outcomes, tok in self.plans:
            if name in seen:
                self._err(tok, f"duplicate plan {name}")
                continue
            seen.add(name)
            for ref in body:
                check_call(ref, tok)
            plans.append(Plan(len(plans), name, trigger, context, body, outcomes))
        if any(d.severity == "error" for d in self.diags):
            return None
        try:
            return AgentProgram.create(
                initial_beliefs=self.beliefs,
                initial_actions=[r for r, _ in self.inits],
                rules=[r for r, _ in self.rules],
                plans=plans,
                actions=actions.values(),
                operational_states=self.opstates,
                percepts=self.percepts,
            )
        except (LisaError, ValueError) as exc:  # defensive: invariants not covered above
            self.diags.append(Diagnostic("error", 1, 1, str(exc)))
            return None


def parse_source(text: str) -> SourceProgram:
    """Parse ``text``; raises :class:`LisaSyntaxError` listing every error."""
    p = _Parser(text)
    p.parse()
    program = p.build()
    if program is None:
        raise LisaSyntaxError(p.diags)
    return SourceProgram(text, program, p.loc)


def parse_program(text: str) -> AgentProgram:
    return parse_source(text).program


# ---------------------------------------------------------------- validation


def validate(program: AgentProgram | SourceProgram) -> list[Diagnostic]:
    """Warnings for triggers nothing can raise, unsatisfiable contexts and unused actions."""
    locations: dict = {}
    if isinstance(program, SourceProgram):
        locations = program.locations
        program = program.program

    def warn(key, msg):
        line, col = locations.get(key, (1, 1))
        out.append(Diagnostic("warning", line, col, msg))

    out: list[Diagnostic] = []
    producers: set[Predicate] = set(program.percepts) | set(program.initial_beliefs)
    producers.update(r.head for r in program.rules)
    for a in program.actions:
        for outcome, _ in a.feedback:
            producers.update(outcome)
        if a.kind is ActionKind.INTERNAL_ADD:
            producers.add(a.target)
    used_actions: set[str] = set()
    for ref in program.initial_actions + tuple(r for p in program.plans for r in p.body):
        used_actions.add(ref.name)
        if ref.name == "note":
            producers.add(ref.arg)
        if ref.name == "stop":
            used_actions.add(ref.arg.name)
    for plan in program.plans:
        key = ("plan", plan.name)
        if plan.trigger not in producers:
            warn(key, f"plan {plan.name}: trigger {plan.trigger} is never raised")
        pos = {l.pred for l in plan.context if l.positive}
        neg = {l.pred for l in plan.context if not l.positive}
        if pos & neg:
            warn(key, f"plan {plan.name}: unsatisfiable context")
    for a in program.actions:
        if a.name not in used_actions:
            warn(("action", a.name), f"action {a.name} is never used")
    return sorted(out)


# ---------------------------------------------------------------- printing


def _dist(keyword: str, dist: Iterable[tuple[frozenset[Predicate], float]]) -> str:
    parts = []
    for outcome, p in dist:
        items = ", ".join(str(x) for x in sorted(outcome)) if outcome else "{}"
        parts.append(f"    {p!r}: {items};")
    return f" {keyword} {{\n" + "\n".join(parts) + "\n}"


def _lits(lits: Iterable[Literal]) -> str:
    return " & ".join(str(l) for l in lits)


def print_program(program: AgentProgram) -> str:
    """Canonical text for ``program``; parsing it gives back an equal program."""
    lines: list[str] = []

    def section(items: list[str]) -> None:
        if items:
            if lines:
                lines.append("")
            lines.extend(items)

    section([f"percept {p}." for p in sorted(program.percepts)])
    section([f"belief {p}." for p in sorted(program.initial_beliefs)])
    section([f"opstate {p}." for p in sorted(program.operational_states)])
    acts = []
    for a in program.actions:
        head = f"action {a.name} {_KIND_NAMES[a.kind]}"
        if a.target is not None:
            acts.append(f"{head} {a.target}.")
        elif a.feedback == ((frozenset(), 1.0),):
            acts.append(f"{head}.")
        else:
            acts.append(head + _dist("feedback", a.feedback) + ".")
    section(acts)
    section([f"init {r}." for r in program.initial_actions])
    section([f"rule {r.head} :- {_lits(r.body)}." for r in program.rules])
    for plan in program.plans:
        ctx = _lits(plan.context) if plan.context else "true"
        body = "; ".join(str(r) for r in plan.body)
        text = f"plan {plan.name}: +{plan.trigger} : {ctx}\n    <- {body}"
        if plan.outcomes:
            text += _dist("outcomes", plan.outcomes)
        section([text + "."])
    return "\n".join(lines) + "\n"
