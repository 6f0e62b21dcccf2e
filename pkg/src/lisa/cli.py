"""Command-line interface: ``lisa <command> ...``.

Exit status is 0 on success, 1 when the input has errors (diagnostics are
written to stderr as JSON lines) and 2 on any other failure (a single JSON
error object on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .abstraction import build_dtmc_from_agent
from .agent import Predicate
from .dsl import parse_source, validate
from .dtmc import DtmcModel, ReachQuery, check_query, most_probable_paths
from .env import load_env
from .errors import LisaError, LisaSyntaxError
from .planning import (
    GOAL_QUERY,
    ImplicationTable,
    build_tree,
    choice_dtmc,
    compute_rewards,
    counterexample_select,
    select_plan,
)
from .prism import elaborate, export_prism, parse_prism_subset, parse_query
from .scenario import data_path
from .sim import monte_carlo, run_sim


def _resolve(path: str) -> Path:
    """A file path, or the name of a bundled data file."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (path, f"{path}.json"):
        bundled = data_path(candidate)
        if bundled.is_file():
            return Path(str(bundled))
    raise FileNotFoundError(f"no such file: {path}")


def _read(path: str) -> str:
    return _resolve(path).read_text(encoding="utf-8")


def _constants(items: list[str] | None) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in items or ():
        name, _, value = item.partition("=")
        if not value:
            raise ValueError(f"expected NAME=VALUE, got {item!r}")
        out[name.strip()] = int(value) if value.strip().lstrip("-").isdigit() else float(value)
    return out


def _program(path: str):
    return parse_source(_read(path))


def _env(args):
    return load_env(_resolve(args.env)) if getattr(args, "env", None) else None


def _model(args) -> DtmcModel:
    path = args.model
    if path.endswith(".lisa"):
        model, _ = build_dtmc_from_agent(_program(path).program, _env(args))
        return model
    ast = parse_prism_subset(_read(path))
    return elaborate(ast, constants=_constants(getattr(args, "const", None)),
                     uniform_nondet=getattr(args, "uniform_nondet", False))


def cmd_parse(args) -> int:
    src = _program(args.file)
    for d in validate(src):
        print(str(d))
    prog = src.program
    print(f"ok: {len(prog.plans)} plans, {len(prog.actions)} actions, {len(prog.rules)} rules, "
          f"{len(prog.initial_beliefs)} initial beliefs")
    if args.print:
        from .dsl import print_program

        sys.stdout.write(print_program(prog))
    return 0


def cmd_run(args) -> int:
    trace = run_sim(_program(args.file).program, _env(args), args.seed, args.horizon)
    text = trace.to_jsonl()
    if args.trace:
        Path(args.trace).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_check(args) -> int:
    model = _model(args)
    query = parse_query(args.query)
    print(f"{check_query(model, query, backend=args.backend):.10g}")
    return 0


def cmd_paths(args) -> int:
    model = _model(args)
    query = parse_query(args.query)
    for path in most_probable_paths(model, query.target, args.count):
        end = model.valuation(path.states[-1])
        desc = ",".join(f"{k}={v}" for k, v in end.items())
        print(f"{path.probability:.10g} len={len(path.states) - 1} {' '.join(map(str, path.states))} [{desc}]")
    return 0


def cmd_select(args) -> int:
    prog = _program(args.file).program
    beliefs = {Predicate.parse(b) for b in args.belief} | set(prog.initial_beliefs)
    events = {Predicate.parse(e) for e in args.event} or set(prog.initial_beliefs)
    goal = {Predicate.parse(g) for g in args.goal}
    tree = build_tree(prog.plans, ImplicationTable.from_program(prog), beliefs, events, args.horizon, goal)
    desires = [pn.plan for pn in tree.root.children]
    if not desires:
        print("no applicable plan")
        return 0
    rewards = compute_rewards(desires, tree)
    for plan in desires:
        print(f"{plan.name}\t{rewards[plan.id]:.10g}")
    chosen = select_plan(desires, rewards)
    print(f"selected: {chosen.name}")
    rec = counterexample_select(choice_dtmc(tree), ReachQuery(~GOAL_QUERY.target))
    if rec is not None:
        print(f"most probable path: {rec.path.probability:.10g} first action {rec.action}")
    return 0


def cmd_export(args) -> int:
    text = export_prism(_model(args))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_mc(args) -> int:
    model = _model(args)
    est = monte_carlo(model, parse_query(args.query), args.n, args.seed)
    print(f"{est.estimate:.10g} +/- {est.half_width:.10g} (99% CI, n={est.n})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lisa", description="LISA agents, Markov chain abstraction and plan selection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse and validate a .lisa program")
    p.add_argument("file")
    p.add_argument("--print", action="store_true", help="also print the canonical form")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("run", help="simulate an agent")
    p.add_argument("file")
    p.add_argument("--env")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--trace", help="write the trace here instead of stdout")
    p.set_defaults(func=cmd_run)

    def model_args(p, query=True):
        p.add_argument("model", help=".pm file, or .lisa file with --env")
        p.add_argument("--env")
        p.add_argument("--const", action="append", metavar="NAME=VALUE", help="override a PRISM constant")
        p.add_argument("--uniform-nondet", action="store_true", help="resolve nondeterminism uniformly")
        if query:
            p.add_argument("--query", required=True)

    p = sub.add_parser("check", help="reachability probability at the initial state")
    model_args(p)
    p.add_argument("--backend", choices=("linear", "vi"), default="linear")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("paths", help="most probable paths to the query target")
    model_args(p)
    p.add_argument("--count", type=int, default=3)
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("select", help="reward table and selected plan")
    p.add_argument("file")
    p.add_argument("--goal", action="append", required=True)
    p.add_argument("--horizon", type=int, default=4)
    p.add_argument("--event", action="append", default=[], help="root event (default: initial beliefs)")
    p.add_argument("--belief", action="append", default=[])
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("export-prism", help="explicit-state PRISM export")
    model_args(p, query=False)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("mc", help="Monte Carlo estimate with 99% confidence half-width")
    model_args(p)
    p.add_argument("-n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mc)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LisaSyntaxError as exc:
        for d in exc.diagnostics:
            print(json.dumps(d.to_dict()), file=sys.stderr)
        return 1
    except (LisaError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
