"""JSON file formats for cluster states, plans, test cases, and reports.

One self-describing schema with a ``format_version`` field. Serialization is
canonical (sorted keys, two-space indent, trailing newline), so
serialize -> parse -> serialize round-trips byte-identically.
"""

from __future__ import annotations

import json
from typing import Any

from .feasibility import validate_state
from .harness import TestCase
from .metrics import MetricsReport
from .model import (
    ClusterState,
    GpuSpec,
    IndexedPlacement,
    Migration,
    PlacementPlan,
    Workload,
)

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def dumps(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _require(mapping: Any, key: str, context: str):
    if not isinstance(mapping, dict) or key not in mapping:
        raise InputError(f"missing {key!r} in {context}")
    return mapping[key]


def _check_version(payload: dict, context: str) -> None:
    version = _require(payload, "format_version", context)
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported format_version {version!r} in {context}")


# --- cluster states ---------------------------------------------------------


def state_to_dict(state: ClusterState) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "cluster_state",
        "gpus": [
            {
                "id": gid,
                "model": spec.model_name,
                "partitions": [
                    {
                        "profile_id": p.profile_id,
                        "start_index": p.start_index,
                        "workload_id": p.workload_id,
                        "movable": p.movable,
                    }
                    for p in sorted(
                        state.placements_on(gid), key=lambda p: p.start_index
                    )
                ],
            }
            for gid, spec in state.gpus
        ],
        "pending_workloads": [workload_to_dict(w) for w in state.pending_workloads],
    }


def workload_to_dict(w: Workload) -> dict:
    out = {"workload_id": w.workload_id, "profile_id": w.profile_id, "movable": w.movable}
    if w.reward is not None:
        out["reward"] = w.reward
    return out


def workload_from_dict(data: dict, context: str = "workload") -> Workload:
    try:
        return Workload(
            workload_id=str(_require(data, "workload_id", context)),
            profile_id=int(_require(data, "profile_id", context)),
            movable=bool(data.get("movable", True)),
            reward=data.get("reward"),
        )
    except (ValueError, KeyError) as exc:
        raise InputError(f"bad {context}: {exc}") from exc


def _gpu_spec_for_model(model: str) -> GpuSpec:
    if model not in ("A100-80GB",):
        raise InputError(f"unsupported gpu model {model!r}")
    return GpuSpec(model_name=model)


def state_from_dict(payload: dict, context: str = "cluster state") -> ClusterState:
    _check_version(payload, context)
    gpus = []
    placements = []
    for gpu in _require(payload, "gpus", context):
        gid = str(_require(gpu, "id", "gpu entry"))
        spec = _gpu_spec_for_model(str(gpu.get("model", "A100-80GB")))
        gpus.append((gid, spec))
        for part in gpu.get("partitions", []):
            try:
                placements.append(
                    IndexedPlacement(
                        gpu_id=gid,
                        workload_id=part.get("workload_id"),
                        profile_id=int(_require(part, "profile_id", f"partition on {gid}")),
                        start_index=int(_require(part, "start_index", f"partition on {gid}")),
                        movable=bool(part.get("movable", True)),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise InputError(f"bad partition on gpu {gid}: {exc}") from exc
    pending = tuple(
        workload_from_dict(w, "pending workload")
        for w in payload.get("pending_workloads", [])
    )
    state = ClusterState(gpus=tuple(gpus), placements=tuple(placements), pending_workloads=pending)
    try:
        validate_state(state)
    except Exception as exc:
        raise InputError(f"invalid {context}: {exc}") from exc
    return state


# --- plans -------------------------------------------------------------------


def plan_to_dict(plan: PlacementPlan) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "placement_plan",
        "final_state": state_to_dict(plan.final_state),
        "migrations": [
            {
                "workload_id": m.workload_id,
                "from_gpu": m.from_gpu,
                "to_gpu": m.to_gpu,
                "to_index": m.to_index,
            }
            for m in plan.migrations
        ],
        "repartitioned_gpus": sorted(plan.repartitioned_gpus),
        "pending": list(plan.pending),
    }


def plan_from_dict(payload: dict, context: str = "placement plan") -> PlacementPlan:
    _check_version(payload, context)
    final_state = state_from_dict(_require(payload, "final_state", context), "plan final state")
    migrations = tuple(
        Migration(
            workload_id=str(_require(m, "workload_id", "migration")),
            from_gpu=m.get("from_gpu"),
            to_gpu=str(_require(m, "to_gpu", "migration")),
            to_index=int(_require(m, "to_index", "migration")),
        )
        for m in payload.get("migrations", [])
    )
    return PlacementPlan(
        final_state=final_state,
        migrations=migrations,
        repartitioned_gpus=frozenset(payload.get("repartitioned_gpus", [])),
        pending=tuple(payload.get("pending", [])),
    )


# --- test cases ---------------------------------------------------------------


def case_to_dict(case: TestCase) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "test_case",
        "seed": case.seed,
        "use_case": case.use_case,
        "cluster": state_to_dict(case.cluster),
        "new_workloads": [workload_to_dict(w) for w in case.new_workloads],
    }


def case_from_dict(payload: dict, context: str = "test case") -> TestCase:
    _check_version(payload, context)
    use_case = str(_require(payload, "use_case", context))
    return TestCase(
        seed=int(_require(payload, "seed", context)),
        use_case=use_case,
        cluster=state_from_dict(_require(payload, "cluster", context), "case cluster"),
        new_workloads=tuple(
            workload_from_dict(w, "new workload")
            for w in payload.get("new_workloads", [])
        ),
    )


# --- reports -------------------------------------------------------------------


def metrics_to_dict(report: MetricsReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "metrics_report",
        "metrics": report.as_dict(),
    }


# --- file helpers ---------------------------------------------------------------


def load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def save_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(payload))


def load_state(path: str) -> ClusterState:
    return state_from_dict(load_json(path), path)


def load_plan(path: str) -> PlacementPlan:
    return plan_from_dict(load_json(path), path)


def load_case(path: str) -> TestCase:
    return case_from_dict(load_json(path), path)
