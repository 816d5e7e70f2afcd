"""Predict-clean, planner verdict parsing and the predict-evaluate-refine loop."""
import json
import time

import numpy as np
import pytest

from app.core.exceptions import InvalidPlan, MalformedLayout, NoVerdictFound, PortFailure, ShapeMismatch
from app.schemas.refinement import LoopConfig
from app.services.denoiser_service import ToyDenoiser
from app.services.planner_service import ScriptedPlanner
from app.services.refinement_service import (
    artifact_id,
    parse_planner_response,
    predict_clean,
    render_conditions,
    run_refinement_loop,
    trace_to_jsonl,
)
from conftest import DOG_PLAN

PROMPT = "a dog on a lawn"

MOVE_DOG_BACK = {
    "isaligned": False,
    "optimized_layout": {"entity_layout": [{"entity_name": "dog", "size": [1, 0.5, 0.8], "position": [0, 0, 4]}]},
}


class FailingDenoiser(ToyDenoiser):
    def __init__(self, fail_at: int):
        super().__init__()
        self.fail_at = fail_at

    def step(self, z_t, t, conditions):
        if self.calls == self.fail_at:
            raise RuntimeError("GPU fell over")
        return super().step(z_t, t, conditions)


def _run(script, **cfg):
    planner = ScriptedPlanner(script)
    denoiser = ToyDenoiser()
    trace = run_refinement_loop(PROMPT, denoiser, planner, LoopConfig(**cfg))
    return trace, planner, denoiser


def test_predict_clean_examples():
    z = np.full((2, 2), 5.0)
    assert np.array_equal(predict_clean(z, np.ones((2, 2)), 0.0), z)
    assert predict_clean(np.array([2.0]), np.array([-2.0]), 0.5)[0] == 3.0
    assert np.array_equal(predict_clean(z, z, 1.0), np.zeros((2, 2)))


def test_predict_clean_inverts_the_flow(rng):
    x0 = rng.normal(size=1000)
    eps = rng.normal(size=1000)
    t = rng.uniform(0.0, 1.0, size=1000)
    for i in range(1000):
        z_t = (1 - t[i]) * x0[i] + t[i] * eps[i]
        estimate = predict_clean(np.array([z_t]), np.array([eps[i] - x0[i]]), float(t[i]))[0]
        assert abs(estimate - x0[i]) <= 1e-14 * (1.0 + abs(x0[i]) + abs(eps[i]))


def test_predict_clean_rejects_bad_input():
    with pytest.raises(ShapeMismatch):
        predict_clean(np.zeros(3), np.zeros(4), 0.5)
    with pytest.raises(ValueError):
        predict_clean(np.zeros(3), np.zeros(3), 1.5)


def test_artifact_id_is_content_hash():
    a = np.linspace(0.0, 1.0, 16).reshape(4, 4)
    assert artifact_id(a) == artifact_id(a.copy())
    assert len(artifact_id(a)) == 16
    assert artifact_id(a) != artifact_id(a + 1e-3)


def test_parse_aligned_verdict_keeps_prose_as_rationale():
    verdict = parse_planner_response('The layout matches the caption.\n```json\n{"isaligned": true}\n```')
    assert verdict.isaligned
    assert verdict.optimized_layout is None
    assert verdict.rationale == "The layout matches the caption."


def test_parse_aligned_verdict_drops_layout():
    verdict = parse_planner_response(json.dumps({"isaligned": True, "optimized_layout": {"entity_layout": []}}))
    assert verdict.isaligned and verdict.optimized_layout is None


def test_parse_misaligned_verdict():
    verdict = parse_planner_response("Move the dog back.\n" + json.dumps(MOVE_DOG_BACK))
    assert not verdict.isaligned
    assert verdict.optimized_layout.entities[0].position == (0.0, 0.0, 4.0)
    assert verdict.rationale == "Move the dog back."


def test_parse_verdict_accepts_string_flag():
    assert not parse_planner_response('{"isaligned": "false", "optimized_layout": {}}').isaligned
    assert parse_planner_response('{"isaligned": "True"}').isaligned


def test_parse_verdict_errors():
    with pytest.raises(NoVerdictFound):
        parse_planner_response("I think it looks fine.")
    with pytest.raises(NoVerdictFound):
        parse_planner_response('{"aligned": true}')
    with pytest.raises(MalformedLayout):
        parse_planner_response('{"isaligned": false}')
    with pytest.raises(MalformedLayout):
        parse_planner_response('{"isaligned": 1}')
    with pytest.raises(MalformedLayout):
        parse_planner_response('{"isaligned": false, "optimized_layout": {"entity_layout": [{"size": [1, 1, 1]}]}}')


def test_render_conditions_shapes(two_box_plan):
    conditions = render_conditions(two_box_plan, 64, 64, patch_size=16)
    assert conditions.depth.values.shape == (64, 64)
    assert conditions.preview.shape == (64, 64)
    assert 0.0 <= conditions.preview.min() and conditions.preview.max() <= 1.0
    assert len(conditions.masks) == 2
    assert conditions.attention.layout.k == 2
    assert conditions.attention.layout.n_image == 16


def test_always_aligned_planner_never_revises():
    trace, planner, denoiser = _run({"plan": DOG_PLAN}, num_steps=20, stability_window=2)
    assert trace.revisions == 0
    assert trace.verdicts == 2
    assert trace.denoiser_calls == 20 == denoiser.calls
    assert trace.final_plan == trace.initial_plan
    assert [c["step"] for c in planner.refine_calls] == [0, 1]


def test_aligned_planner_with_sparse_schedule():
    trace, planner, _ = _run({"plan": DOG_PLAN}, num_steps=20, eval_schedule=(0, 5, 10), stability_window=2)
    assert trace.verdicts == 2
    assert [c["step"] for c in planner.refine_calls] == [0, 5]


def test_single_correction_scenario():
    trace, planner, denoiser = _run(
        {"plan": DOG_PLAN, "refine": [MOVE_DOG_BACK, {"isaligned": True}]},
        num_steps=20,
        stability_window=2,
    )
    assert trace.revisions == 1
    assert trace.rerenders == 1
    assert trace.verdicts == 3
    assert trace.denoiser_calls == 21 == denoiser.calls
    assert trace.initial_plan.entities[0].position == (0.0, 0.0, 2.0)
    assert trace.final_plan.entities[0].position == (0.0, 0.0, 4.0)

    first = trace.events[0]
    assert first.isaligned is False
    assert first.revision == 1 and first.rerendered
    assert first.revised_layout["entity_layout"][0]["position"] == [0, 0, 4]
    assert all(e.revision is None for e in trace.events[1:])
    # the second evaluation already sees the revised plan
    assert '"position": [0, 0, 4]' in planner.refine_calls[1]["plan"]


def test_refinement_limit_zero_skips_evaluation():
    trace, planner, _ = _run({"plan": DOG_PLAN, "refine": [MOVE_DOG_BACK]}, num_steps=20, max_refinements=0)
    assert trace.revisions == 0
    assert trace.verdicts == 0
    assert len(trace.events) == 20
    assert planner.refine_calls == []


def test_refinement_limit_stops_evaluation():
    trace, _, _ = _run({"plan": DOG_PLAN, "refine": [MOVE_DOG_BACK]}, num_steps=10, max_refinements=2)
    assert trace.revisions == 2
    assert trace.verdicts == 2
    assert trace.denoiser_calls == 12


def test_trace_is_deterministic():
    script = {"plan": DOG_PLAN, "refine": [MOVE_DOG_BACK, {"isaligned": True}]}
    first = trace_to_jsonl(_run(script, num_steps=8, seed=7)[0])
    second = trace_to_jsonl(_run(script, num_steps=8, seed=7)[0])
    assert first == second
    other_seed = trace_to_jsonl(_run(script, num_steps=8, seed=8)[0])
    assert other_seed != first


def test_trace_jsonl_layout():
    trace, _, _ = _run({"plan": DOG_PLAN}, num_steps=5)
    lines = [json.loads(line) for line in trace_to_jsonl(trace).splitlines()]
    assert len(lines) == 7
    assert lines[0]["type"] == "header" and lines[0]["prompt"] == PROMPT
    assert [line["step"] for line in lines[1:-1]] == [0, 1, 2, 3, 4]
    assert lines[1]["t"] == 1.0
    assert lines[-1]["type"] == "summary"
    assert lines[-1]["denoiser_calls"] == 5
    assert "timestamp" not in json.dumps(lines)


def test_planner_failure_is_a_port_failure():
    with pytest.raises(PortFailure) as info:
        _run({"plan": "there is no plan"}, num_steps=3)
    assert info.value.step == -1


def test_unknown_entity_revision_fails_at_that_step():
    bad = {"isaligned": False, "optimized_layout": {"entity_layout": [
        {"entity_name": "cat", "size": [1, 1, 1], "position": [0, 0, 0]},
    ]}}
    with pytest.raises(PortFailure) as info:
        _run({"plan": DOG_PLAN, "refine": [{"isaligned": True}, bad]}, num_steps=5, stability_window=3)
    assert info.value.step == 1


def test_denoiser_failure_reports_step():
    planner = ScriptedPlanner({"plan": DOG_PLAN})
    with pytest.raises(PortFailure) as info:
        run_refinement_loop(PROMPT, FailingDenoiser(fail_at=3), planner, LoopConfig(num_steps=6))
    assert info.value.step == 3


def test_unusable_initial_plan_is_rejected():
    plan = {
        "scene_parameters": {"scene_size": 10, "camera_pitch_angle": 20},
        "entity_layout": [{"entity_name": "dog", "size": [1, -1, 1], "position": [0, 0, 0]}],
    }
    with pytest.raises(InvalidPlan):
        _run({"plan": plan}, num_steps=3)


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(num_steps=0)
    with pytest.raises(ValueError):
        LoopConfig(num_steps=5, eval_schedule=(7,))
    assert LoopConfig(num_steps=4).timesteps() == [1.0, 0.75, 0.5, 0.25]


def test_toy_run_finishes_quickly():
    """20 steps at 128x128 with the planner consulted at every step."""
    started = time.perf_counter()
    trace, planner, _ = _run(
        {"plan": DOG_PLAN, "refine": [MOVE_DOG_BACK, {"isaligned": True}]},
        num_steps=20,
        stability_window=20,
        image_width=128,
        image_height=128,
    )
    elapsed = time.perf_counter() - started
    assert trace.verdicts == 20 == len(planner.refine_calls)
    assert elapsed < 5.0
