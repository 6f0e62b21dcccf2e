"""LISA agent toolkit: reasoning cycle, Markov chain abstraction, PRISM subset and plan selection."""

from .abstraction import build_dtmc_from_agent
from .agent import (
    ActionDef,
    ActionKind,
    ActionRef,
    AgentProgram,
    AgentState,
    BeliefBase,
    EventSet,
    Intention,
    IntentionStatus,
    Literal,
    LogicRule,
    OperationalStateSet,
    Plan,
    Predicate,
    Source,
    Trace,
    applicable_plans,
    apply_rules,
    brf_events,
    buf_update,
    run_agent,
    step_cycle,
)
from .dsl import parse_program, print_program, validate
from .dtmc import (
    DtmcModel,
    ReachQuery,
    TracePath,
    bounded_reach,
    check_query,
    most_probable_paths,
    prob01_precompute,
    reach_prob_linear,
    reach_prob_vi,
)
from .errors import (
    ConvergenceError,
    DeclarationError,
    Diagnostic,
    LisaError,
    LisaSyntaxError,
    ModelError,
    PlanningError,
    QueryError,
    StateSpaceOverflow,
)
from .planning import (
    ImplicationTable,
    RewardTable,
    build_tree,
    compute_rewards,
    counterexample_select,
    enumerate_symbolic_plans,
    reward_update,
    select_plan,
    tree_to_dtmc,
)
from .prism import elaborate, export_prism, parse_prism_subset, parse_query
from .scenario import ScenarioConfig, asv_scenario
from .sim import monte_carlo, run_sim

__version__ = "0.1.0"
