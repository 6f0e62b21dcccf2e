"""Two-area survey mission for an autonomous surface vehicle.

The vehicle leaves base for Area A or Area B, covers the blocks of each area
one per step, pays double fuel for a block in bad weather, and may switch
areas when only its own area has bad weather. Running out of fuel in an area
aborts the mission. The environment replays the step structure of the
reference PRISM model (weather resampled before every decision), so the
agent-derived chain and the PRISM chain give the same reachability values.

Env state variables: ``s`` position (0 base, 1 area A, 2 area B, 3 aborted),
``a1``/``b1`` covered blocks, ``oil`` fuel, ``w1``/``w2`` bad weather flags and
``ph`` a phase counter (2 just moved, 1 settling, 0 deciding).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Mapping

from .agent import AgentProgram, Predicate
from .dsl import parse_program
from .env import Environment, check_alternatives
from .errors import ModelError

VARIANTS = ("verbatim", "corrected", "passage")


@dataclass(frozen=True)
class ScenarioConfig:
    No: int = 15
    Na: int = 5
    Nb: int = 5
    Pa: float = 0.1
    Pb: float = 0.1
    Pi: float = 0.5
    Ps: float = 0.6
    q: float = 0.4
    variant: str = "verbatim"  # how a switch out of Area B resolves, see AsvEnv.feedback
    goals: tuple[str, ...] = ("mission_complete",)

    def __post_init__(self):
        if self.Na < 1 or self.Nb < 1 or self.No < 1:
            raise ValueError("Na, Nb and No must be at least 1")
        for name in ("Pa", "Pb", "Pi", "Ps", "q"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {', '.join(VARIANTS)}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        d = dict(data)
        if "p" in d:  # single bad-weather probability for both areas
            d.setdefault("Pa", d["p"])
            d.setdefault("Pb", d.pop("p"))
        if "Pa" in d and "Pb" not in d:
            d["Pb"] = d["Pa"]
        if "goals" in d:
            d["goals"] = tuple(d["goals"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goals"] = list(self.goals)
        return d

    @property
    def constants(self) -> dict[str, int | float]:
        return {"No": self.No, "Na": self.Na, "Nb": self.Nb, "Pa": self.Pa, "Pb": self.Pb, "Pi": self.Pi, "Ps": self.Ps}


_PROGRAM = """\
// Two-area survey mission. Percepts come from the ASV environment.
percept at_base. percept in_a. percept in_b. percept aborted.
percept a_done. percept b_done. percept bad_a. percept bad_b.
percept fuel_low. percept fuel_empty. percept decide.

opstate at_base. opstate in_a. opstate in_b. opstate aborted.

action request_area runOnce feedback {{ {Pi!r}: assigned_a; {nPi!r}: assigned_b; }}.
action transit_a runOnce.
action transit_b runOnce.
action cover_block_a runOnce.
action cover_block_b runOnce.
action evade_to_b runOnce.
action evade_to_a runOnce.
action abort runOnce.
action return_to_base runOnce.

init request_area.

rule mission_complete :- a_done & b_done.
rule reserve :- fuel_low.

plan go_a: +assigned_a : at_base <- transit_a outcomes {{ 1.0: in_a, decide; }}.
plan go_b: +assigned_b : at_base <- transit_b outcomes {{ 1.0: in_b, decide; }}.

plan cover_a: +decide : in_a & not bad_a & not a_done & not fuel_empty
    <- cover_block_a outcomes {{ {nPa!r}: a_done, decide; {Pa!r}: bad_a, decide; }}.
plan leave_a: +decide : in_a & a_done & not b_done & not fuel_empty
    <- transit_b outcomes {{ 1.0: in_b, decide; }}.
plan storm_a: +decide : in_a & bad_a & bad_b & not a_done & not b_done & not fuel_low & not fuel_empty
    <- cover_block_a outcomes {{ 1.0: a_done, decide; }}.
plan evade_a: +decide : in_a & bad_a & not bad_b & not a_done & not b_done & not fuel_low & not fuel_empty
    <- evade_to_b outcomes {{ {Ps!r}: a_done, decide; {nPs!r}: in_b, decide; }}.

plan cover_b: +decide : in_b & not bad_b & not b_done & not fuel_empty
    <- cover_block_b outcomes {{ {nPb!r}: b_done, decide; {Pb!r}: bad_b, decide; }}.
plan leave_b: +decide : in_b & b_done & not a_done & not fuel_empty
    <- transit_a outcomes {{ 1.0: in_a, decide; }}.
plan storm_b: +decide : in_b & bad_b & bad_a & not a_done & not b_done & not fuel_low & not fuel_empty
    <- cover_block_b outcomes {{ 1.0: b_done, decide; }}.
plan evade_b: +decide : in_b & bad_b & not bad_a & not a_done & not b_done & not fuel_low & not fuel_empty
    <- evade_to_a outcomes {{ {Ps!r}: b_done, decide; {nPs!r}: in_a, decide; }}.

plan abort_mission: +decide : fuel_empty <- abort outcomes {{ 1.0: aborted; }}.
plan return_home: +decide : mission_complete & not fuel_empty
    <- return_to_base outcomes {{ 1.0: at_base; }}.
"""


def program_text(config: ScenarioConfig) -> str:
    return _PROGRAM.format(
        Pi=config.Pi, nPi=1.0 - config.Pi, Pa=config.Pa, nPa=1.0 - config.Pa,
        Pb=config.Pb, nPb=1.0 - config.Pb, Ps=config.Ps, nPs=1.0 - config.Ps,
    )


@dataclass
class AsvEnv(Environment):
    config: ScenarioConfig = field(default_factory=ScenarioConfig)

    def initial_state(self) -> tuple:
        c = self.config
        return (("a1", 0), ("b1", 0), ("oil", c.No), ("ph", 0), ("s", 0), ("w1", 0), ("w2", 0))

    @property
    def constants(self):
        return self.config.constants

    def _move(self, v: dict, cost: int, **updates: int) -> tuple:
        oil = v["oil"] - cost
        if oil < 0:
            raise ModelError(f"fuel would drop below zero in state {v}")
        updates["oil"] = oil
        s = updates.get("s", v["s"])
        updates["ph"] = 2 if s in (1, 2) else 0
        return tuple(sorted(updates.items()))

    def feedback(self, action: str, state: tuple):
        v = dict(state)
        c = self.config
        none = frozenset()
        if action == "transit_a":
            return [(1.0, none, self._move(v, 1, s=1))]
        if action == "transit_b":
            return [(1.0, none, self._move(v, 1, s=2))]
        if action == "cover_block_a":
            return [(1.0, none, self._move(v, 2 if v["w1"] else 1, a1=v["a1"] + 1))]
        if action == "cover_block_b":
            return [(1.0, none, self._move(v, 2 if v["w2"] else 1, b1=v["b1"] + 1))]
        if action in ("evade_to_b", "evade_to_a"):
            here, there = (1, 2) if action == "evade_to_b" else (2, 1)
            blocks = "a1" if here == 1 else "b1"
            if c.variant == "passage":
                alts = [(1.0 - c.q, none, self._move(v, 1, s=there)), (c.q, none, self._move(v, 1, s=here))]
            else:
                # the reference model leaves a failed switch out of Area B in Area B
                dest = here if (here == 2 and c.variant == "verbatim") else there
                alts = [
                    (c.Ps, none, self._move(v, 2, **{blocks: v[blocks] + 1})),
                    (1.0 - c.Ps, none, self._move(v, 1, s=dest)),
                ]
            check_alternatives(action, alts)
            return alts
        if action == "abort":
            return [(1.0, none, self._move(v, 0, s=3))]
        if action == "return_to_base":
            return [(1.0, none, self._move(v, 1, s=0))]
        return None

    def percept_sources(self, state: tuple):
        v = dict(state)
        if v["ph"] == 2:
            return [("clock", [(1.0, frozenset(), (("ph", 1),))])]
        if v["ph"] == 1:
            c = self.config
            return [
                ("clock", [(1.0, frozenset(), (("ph", 0),))]),
                ("weather_a", [(c.Pa, frozenset(), (("w1", 1),)), (1.0 - c.Pa, frozenset(), (("w1", 0),))]),
                ("weather_b", [(c.Pb, frozenset(), (("w2", 1),)), (1.0 - c.Pb, frozenset(), (("w2", 0),))]),
            ]
        return []

    def observe(self, state: tuple) -> frozenset[Predicate]:
        v = dict(state)
        c = self.config
        s = v["s"]
        out = [("at_base", "in_a", "in_b", "aborted")[s]]
        if v["a1"] == c.Na:
            out.append("a_done")
        if v["b1"] == c.Nb:
            out.append("b_done")
        if v["w1"]:
            out.append("bad_a")
        if v["w2"]:
            out.append("bad_b")
        if v["oil"] == 1:
            out.append("fuel_low")
        if v["oil"] == 0:
            out.append("fuel_empty")
        if v["ph"] == 0 and s in (1, 2):
            out.append("decide")
        return frozenset(Predicate(n) for n in out)


@dataclass(frozen=True)
class Scenario:
    program: AgentProgram
    env: AsvEnv
    queries: dict[str, str]
    config: ScenarioConfig


def asv_scenario(config: ScenarioConfig | None = None) -> Scenario:
    """Agent, environment and the standard queries for ``config``."""
    config = config or ScenarioConfig()
    queries = {
        "mission": "P=? [ F a1=Na & b1=Nb ]",
        "abort": "P=? [ F s=3 ]",
    }
    return Scenario(parse_program(program_text(config)), AsvEnv(config), queries, config)


def data_path(name: str):
    """Path of a bundled data file (``asv.lisa``, ``appendix.pm``, env files)."""
    return resources.files("lisa") / "data" / name


def read_data(name: str) -> str:
    return data_path(name).read_text()


def appendix_model(config: ScenarioConfig | None = None):
    """Reference PRISM chain with the constants of ``config`` (verbatim or corrected switch)."""
    from .prism import elaborate, parse_prism_subset

    config = config or ScenarioConfig()
    if config.variant == "passage":
        raise ValueError("the reference PRISM model has no passage variant")
    name = "appendix.pm" if config.variant == "verbatim" else "appendix_corrected.pm"
    return elaborate(parse_prism_subset(read_data(name)), constants=config.constants)


_SWITCH_PLANS = """\
percept in_a. percept bad_a. percept bad_b. percept decide.
action cover_block_a runOnce.
action transit_b runOnce.
plan explore_block: +decide : in_a & bad_a & not bad_b
    <- cover_block_a outcomes { 1.0: in_block_a2; }.
plan go_to_b: +decide : in_a & bad_a & not bad_b
    <- transit_b outcomes { 1.0: in_block_b1; }.
"""


@dataclass(frozen=True)
class SwitchDecision:
    """Bad weather in block A1, good weather in Area B: explore on or move to B1."""

    tree: object
    rewards: object
    chosen: object
    values: dict[str, float]


def switch_decision(config: ScenarioConfig | None = None) -> SwitchDecision:
    """Rewards of the two competing plans from the reference model's reachability values.

    "In Block A2" is the state after covering A1 at double cost and "In Block
    B1" the state after moving to Area B, both still before the next weather
    draw. Their mission-completion probabilities are the leaf values.
    """
    from .dtmc import reach_prob_linear
    from .planning import ImplicationTable, build_tree, compute_rewards, select_plan

    config = config or ScenarioConfig()
    model = appendix_model(config)
    x = reach_prob_linear(model, "a1=Na & b1=Nb")
    oil = config.No - 1
    (a2,) = model.find(s=1, a1=1, b1=0, oil=oil - 2, t=1, w1=1, w2=0)
    (b1,) = model.find(s=2, a1=0, b1=0, oil=oil - 1, t=1, w1=1, w2=0)
    values = {"in_block_a2": float(x[a2]), "in_block_b1": float(x[b1])}
    program = parse_program(_SWITCH_PLANS)

    def leaf(node) -> float:
        return max((values[str(p)] for p in node.events if str(p) in values), default=0.0)

    tree = build_tree(
        program.plans, ImplicationTable.from_program(program),
        beliefs={Predicate("in_a"), Predicate("bad_a")}, root_events={Predicate("decide")},
        horizon=1, goal={Predicate("mission_complete")}, leaf_value=leaf,
    )
    desires = [pn.plan for pn in tree.root.children]
    rewards = compute_rewards(desires, tree)
    return SwitchDecision(tree, rewards, select_plan(desires, rewards), values)
