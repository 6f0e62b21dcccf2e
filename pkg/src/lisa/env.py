"""Environment models that feed percepts and action feedback to an agent.

An environment owns a small integer state (a sorted tuple of ``(var, value)``
pairs). Each cycle it offers independent random *sources*, each a list of
alternatives ``(probability, predicates, updates)``; the agent samples or
enumerates them. ``observe`` adds deterministic percepts read off the state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .agent import Predicate, preds
from .errors import ModelError

PROB_TOL = 1e-9

Alternative = tuple[float, frozenset[Predicate], tuple[tuple[str, int], ...]]


def check_alternatives(name: str, alts: Sequence[Alternative]) -> None:
    total = sum(a[0] for a in alts)
    if abs(total - 1.0) > PROB_TOL:
        raise ModelError(f"{name}: probabilities sum {total:g}")
    if any(not 0.0 <= a[0] <= 1.0 for a in alts):
        raise ModelError(f"{name}: probability outside [0, 1]")


class Environment:
    """Base environment: no state, no percepts, program-declared feedback."""

    def initial_state(self) -> tuple:
        return ()

    def feedback(self, action: str, state: tuple) -> Sequence[Alternative] | None:
        """Override the program's feedback distribution for ``action``; None keeps it."""
        return None

    def percept_sources(self, state: tuple) -> list[tuple[str, Sequence[Alternative]]]:
        return []

    def observe(self, state: tuple) -> frozenset[Predicate]:
        return frozenset()

    @property
    def constants(self) -> dict[str, int | float]:
        return {}


@dataclass
class StaticEnv(Environment):
    """Memoryless environment: the same independent percept sources every cycle."""

    sources: list[tuple[str, list[Alternative]]] = field(default_factory=list)
    overrides: dict[str, list[Alternative]] = field(default_factory=dict)

    def __post_init__(self):
        for sid, alts in self.sources:
            check_alternatives(f"percept source {sid}", alts)
        for action, alts in self.overrides.items():
            check_alternatives(f"feedback for {action}", alts)

    def feedback(self, action, state):
        return self.overrides.get(action)

    def percept_sources(self, state):
        return self.sources


@dataclass
class MarkovEnv(Environment):
    """Environment driven by its own Markov chain over named modes.

    Each mode fixes the percepts observed in it and a distribution over the
    next mode; feedback overrides may depend on the current mode, which is
    how conditional coupling between agent and environment is expressed.
    """

    modes: list[str]
    initial: str
    percepts: dict[str, frozenset[Predicate]]
    transitions: dict[str, list[tuple[float, str]]]
    overrides: dict[str, dict[str, list[Alternative]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.initial not in self.modes:
            raise ModelError(f"unknown initial mode {self.initial}")
        for mode in self.modes:
            nxt = self.transitions.get(mode, [(1.0, mode)])
            self.transitions[mode] = nxt
            check_alternatives(f"mode {mode} transitions", [(p, frozenset(), ()) for p, _ in nxt])
            for _, m in nxt:
                if m not in self.modes:
                    raise ModelError(f"mode {mode} moves to unknown mode {m}")
        for action, by_mode in self.overrides.items():
            for mode, alts in by_mode.items():
                check_alternatives(f"feedback for {action} in {mode}", alts)

    def initial_state(self):
        return (("mode", self.modes.index(self.initial)),)

    def _mode(self, state) -> str:
        return self.modes[dict(state)["mode"]]

    def feedback(self, action, state):
        return self.overrides.get(action, {}).get(self._mode(state))

    def percept_sources(self, state):
        alts = [(p, frozenset(), (("mode", self.modes.index(m)),)) for p, m in self.transitions[self._mode(state)]]
        return [("mode", alts)]

    def observe(self, state):
        return self.percepts.get(self._mode(state), frozenset())


# ---------------------------------------------------------------- JSON loading


def _alts(items: Sequence[Mapping]) -> list[Alternative]:
    return [
        (float(a["p"]), preds(a.get("preds", ())), tuple(sorted((k, int(v)) for k, v in a.get("set", {}).items())))
        for a in items
    ]


def env_from_dict(data: Mapping) -> Environment:
    kind = data.get("kind")
    if kind == "static":
        sources = [(s["id"], _alts(s["alternatives"])) for s in data.get("percepts", ())]
        overrides = {k: _alts(v) for k, v in data.get("feedback", {}).items()}
        return StaticEnv(sources, overrides)
    if kind == "markov":
        modes = list(data["modes"])
        return MarkovEnv(
            modes=modes,
            initial=data.get("initial", modes[0]),
            percepts={m: preds(spec.get("percepts", ())) for m, spec in data["modes"].items()},
            transitions={m: [(float(t["p"]), t["to"]) for t in spec.get("next", ())] or [(1.0, m)]
                         for m, spec in data["modes"].items()},
            overrides={a: {m: _alts(v) for m, v in by_mode.items()} for a, by_mode in data.get("feedback", {}).items()},
        )
    if kind == "asv":
        from .scenario import AsvEnv, ScenarioConfig

        return AsvEnv(ScenarioConfig.from_dict(data.get("config", {})))
    raise ModelError(f"unknown environment kind {kind!r}")


def load_env(path: str | Path) -> Environment:
    return env_from_dict(json.loads(Path(path).read_text()))
