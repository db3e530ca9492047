"""File formats: round-trips, validation, error reporting."""

import json

import pytest

from migpack.harness import generate_case
from migpack.model import ClusterState, GpuSpec, IndexedPlacement, Workload
from migpack.heuristics import place_initial
from migpack.serialization import (
    InputError,
    case_from_dict,
    case_to_dict,
    dumps,
    plan_from_dict,
    plan_to_dict,
    state_from_dict,
    state_to_dict,
)


def sample_state():
    return ClusterState(
        gpus=(("gpu-01", GpuSpec()), ("gpu-02", GpuSpec())),
        placements=(
            IndexedPlacement("gpu-01", "a1", 14, 4),
            IndexedPlacement("gpu-01", "a2", 19, 6, movable=False),
            IndexedPlacement("gpu-02", None, 15, 0),
        ),
        pending_workloads=(Workload("p1", 9),),
    )


class TestStateFormat:
    def test_round_trip_is_byte_identical(self):
        state = sample_state()
        text = dumps(state_to_dict(state))
        parsed = state_from_dict(json.loads(text))
        assert dumps(state_to_dict(parsed)) == text

    def test_round_trip_preserves_content(self):
        state = sample_state()
        parsed = state_from_dict(state_to_dict(state))
        assert set(parsed.gpu_ids) == set(state.gpu_ids)
        assert sorted(
            (p.gpu_id, p.workload_id, p.profile_id, p.start_index, p.movable)
            for p in parsed.placements
        ) == sorted(
            (p.gpu_id, p.workload_id, p.profile_id, p.start_index, p.movable)
            for p in state.placements
        )
        assert parsed.pending_workloads == state.pending_workloads

    def test_empty_partition_representable(self):
        parsed = state_from_dict(state_to_dict(sample_state()))
        unassigned = [p for p in parsed.placements if p.workload_id is None]
        assert len(unassigned) == 1
        assert unassigned[0].profile_id == 15

    def test_missing_version_rejected(self):
        with pytest.raises(InputError):
            state_from_dict({"gpus": []})

    def test_invalid_layout_rejected(self):
        payload = state_to_dict(sample_state())
        payload["gpus"][0]["partitions"].append(
            {"profile_id": 14, "start_index": 4, "workload_id": "dup", "movable": True}
        )
        with pytest.raises(InputError):
            state_from_dict(payload)

    def test_unknown_profile_rejected(self):
        payload = state_to_dict(sample_state())
        payload["gpus"][0]["partitions"][0]["profile_id"] = 3
        with pytest.raises(InputError):
            state_from_dict(payload)


class TestPlanFormat:
    def test_round_trip(self):
        state = ClusterState(gpus=(("g0", GpuSpec()), ("g1", GpuSpec())))
        plan = place_initial(state, [Workload("w1", 9), Workload("w2", 5)])
        text = dumps(plan_to_dict(plan))
        parsed = plan_from_dict(json.loads(text))
        assert dumps(plan_to_dict(parsed)) == text
        assert parsed.migrations == plan.migrations
        assert parsed.pending == plan.pending


class TestCaseFormat:
    def test_round_trip(self):
        case = generate_case(8, 7, "initial")
        text = dumps(case_to_dict(case))
        parsed = case_from_dict(json.loads(text))
        assert dumps(case_to_dict(parsed)) == text
        assert parsed.seed == case.seed
        assert parsed.new_workloads == case.new_workloads
