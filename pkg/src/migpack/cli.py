"""Command-line surface: place / compact / reconfigure / evaluate / generate / experiment.

Exit codes: 0 on success, 1 for invalid input (machine-readable JSON on
stderr), 2 for an internal invariant violation (a bin-level answer that
cannot be indexed, or an emitted state failing validation).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional, Sequence

from .feasibility import InvalidStateError, LayoutInfeasibleError
from .harness import (
    APPROACHES,
    TestCase,
    generate_cases,
    run_approach,
    run_experiment,
)
from .heuristics import compact as compact_op
from .heuristics import reconfigure as reconfigure_op
from .metrics import METRIC_NAMES, evaluate
from .serialization import (
    InputError,
    case_to_dict,
    dumps,
    load_case,
    load_json,
    load_plan,
    load_state,
    metrics_to_dict,
    plan_to_dict,
    save_json,
    workload_from_dict,
)

_APPROACH_ALIASES = {"rule": "rule-based"}


def _canonical_approach(name: str) -> str:
    name = _APPROACH_ALIASES.get(name, name)
    if name not in APPROACHES:
        raise InputError(f"unknown approach {name!r}; expected one of {sorted(APPROACHES)}")
    return name


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # invalid flags are invalid input, not a crash
        raise InputError(message)


def _load_workloads(path: str):
    payload = load_json(path)
    if "workloads" not in payload:
        raise InputError(f"{path}: expected a 'workloads' list")
    return [workload_from_dict(w, f"workload in {path}") for w in payload["workloads"]]


def _emit_plan(plan, out: Optional[str]) -> None:
    payload = plan_to_dict(plan)
    if out:
        save_json(out, payload)
        print(f"plan written to {out}")
    else:
        sys.stdout.write(dumps(payload))


def _run_single(state, new_workloads, use_case, approach, time_limit, node_limit, spare_gpus=None):
    approach = _canonical_approach(approach)
    if approach == "rule-based" and use_case == "compaction":
        return compact_op(state, spare_gpus)
    if approach == "rule-based" and use_case == "reconfiguration":
        return reconfigure_op(state)
    case = TestCase(seed=0, use_case=use_case, cluster=state, new_workloads=tuple(new_workloads))
    return run_approach(case, approach, time_limit, node_limit).plan


def _cmd_place(args) -> int:
    state = load_state(args.state)
    workloads = _load_workloads(args.workloads)
    plan = _run_single(
        state, workloads, "initial", args.approach, args.time_limit, args.node_limit
    )
    _emit_plan(plan, args.out)
    return 0


def _cmd_compact(args) -> int:
    state = load_state(args.state)
    plan = _run_single(
        state, (), "compaction", args.approach, args.time_limit, args.node_limit,
        spare_gpus=args.spare_gpus,
    )
    _emit_plan(plan, args.out)
    return 0


def _cmd_reconfigure(args) -> int:
    state = load_state(args.state)
    plan = _run_single(
        state, (), "reconfiguration", args.approach, args.time_limit, args.node_limit
    )
    _emit_plan(plan, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    state = load_state(args.state)
    plan = load_plan(args.plan)
    report = evaluate(state, plan)
    sys.stdout.write(dumps(metrics_to_dict(report)))
    return 0


def _cmd_generate(args) -> int:
    if args.use_case not in ("initial", "compaction", "reconfiguration"):
        raise InputError(f"unknown use case {args.use_case!r}")
    os.makedirs(args.out, exist_ok=True)
    cases = generate_cases(args.gpus, args.seed, args.use_case, args.cases)
    for i, case in enumerate(cases):
        path = os.path.join(args.out, f"case-{i:04d}.json")
        save_json(path, case_to_dict(case))
    print(f"{len(cases)} cases written to {args.out}")
    return 0


def _write_csv(path: str, fieldnames: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _cmd_experiment(args) -> int:
    case_files = sorted(
        os.path.join(args.cases, name)
        for name in os.listdir(args.cases)
        if name.endswith(".json")
    )
    if not case_files:
        raise InputError(f"no case files in {args.cases}")
    cases = [load_case(path) for path in case_files]
    approaches = [_canonical_approach(a.strip()) for a in args.approaches.split(",") if a.strip()]
    if not approaches:
        raise InputError("no approaches given")

    result = run_experiment(cases, approaches, args.time_limit, args.node_limit)

    os.makedirs(args.out, exist_ok=True)
    per_case_fields = (
        ["case_index", "seed", "approach"]
        + list(METRIC_NAMES)
        + ["solver_status", "objective", "optimality_gap", "wall_time"]
    )
    _write_csv(os.path.join(args.out, "per_case.csv"), per_case_fields, result.rows)

    table_fields = ["approach"] + list(METRIC_NAMES)
    _write_csv(
        os.path.join(args.out, "averages.csv"),
        table_fields,
        ({"approach": a, **result.averages[a]} for a in approaches),
    )
    _write_csv(
        os.path.join(args.out, "normalized.csv"),
        table_fields,
        ({"approach": a, **result.normalized[a]} for a in approaches),
    )
    summary = {
        "format_version": 1,
        "kind": "experiment_summary",
        "use_case": result.use_case,
        "cases": len(cases),
        "approaches": list(approaches),
        "time_limit": args.time_limit,
        "averages": result.averages,
        "normalized": result.normalized,
        "failures": [
            {"case_index": i, "approach": a, "error": e} for i, a, e in result.failures
        ],
    }
    save_json(os.path.join(args.out, "summary.json"), summary)

    if not args.no_figures:
        from .plots import render_normalized_metrics

        render_normalized_metrics(
            result.normalized,
            os.path.join(args.out, "normalized_metrics.png"),
            title=f"{result.use_case}: normalized averages over {len(cases)} cases",
        )

    print(f"experiment results written to {args.out}")
    if result.failures:
        print(f"{len(result.failures)} case runs failed; see summary.json", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="migpack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_solver_flags(p):
        p.add_argument("--time-limit", type=float, default=30.0,
                       help="solver wall-clock cap in seconds (default 30)")
        p.add_argument("--node-limit", type=int, default=None,
                       help="deterministic cap on solver node expansions")
        p.add_argument("--out", default=None, help="write the plan here instead of stdout")

    p = sub.add_parser("place", help="place new workloads onto the cluster")
    p.add_argument("--state", required=True)
    p.add_argument("--workloads", required=True)
    p.add_argument("--approach", default="rule",
                   help="rule | mip | first-fit | load-balanced | joint-mip")
    add_solver_flags(p)
    p.set_defaults(func=_cmd_place)

    p = sub.add_parser("compact", help="vacate underutilized GPUs")
    p.add_argument("--state", required=True)
    p.add_argument("--approach", default="rule", help="rule | mip")
    p.add_argument("--spare-gpus", type=int, default=None,
                   help="cap on free GPUs the rule-based fallback may enlist")
    add_solver_flags(p)
    p.set_defaults(func=_cmd_compact)

    p = sub.add_parser("reconfigure", help="re-place all workloads on minimal GPUs")
    p.add_argument("--state", required=True)
    p.add_argument("--approach", default="rule", help="rule | mip")
    add_solver_flags(p)
    p.set_defaults(func=_cmd_reconfigure)

    p = sub.add_parser("evaluate", help="score a plan against its initial state")
    p.add_argument("--state", required=True)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("generate", help="write random test cases")
    p.add_argument("--gpus", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--use-case", required=True,
                   help="initial | compaction | reconfiguration")
    p.add_argument("--cases", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("experiment", help="run approaches over a case directory")
    p.add_argument("--cases", required=True, help="directory of test-case files")
    p.add_argument("--approaches", required=True,
                   help="comma-separated subset of "
                        "first-fit,load-balanced,rule-based,mip,joint-mip")
    p.add_argument("--time-limit", type=float, default=30.0)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering the comparison figure")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(json.dumps({"error": "invalid-input", "detail": str(exc)}) + "\n")
        return 1
    except (LayoutInfeasibleError, InvalidStateError) as exc:
        sys.stderr.write(
            json.dumps({"error": "internal-invariant-violation", "detail": str(exc)}) + "\n"
        )
        return 2
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
