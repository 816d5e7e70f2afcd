import json
import hashlib
import logging
import re
from typing import Any, Dict, List, Optional

import numpy as np

from app.core.config import settings
from app.core.exceptions import (
    InvalidPlan,
    MalformedLayout,
    NoJsonFound,
    NoVerdictFound,
    PlanError,
    PortFailure,
    ShapeMismatch,
)
from app.schemas.refinement import (
    ConditionSet,
    ImageArtifact,
    LoopConfig,
    PlannerVerdict,
    RefinementTrace,
    StepState,
    TraceEvent,
)
from app.schemas.scene import ScenePlan
from app.services.attention_service import build_attention_mask, layout_for_plan, patchify_mask
from app.services.camera_service import derive_camera, project_box_mask
from app.services.denoiser_service import DenoiserPort
from app.services.depth_service import default_depth_range, depth_to_gray, render_depth
from app.services.planner_service import PlannerPort
from app.services.scene_service import (
    apply_refinement,
    box_from_entity,
    find_json_object,
    parse_layout_fragment,
    parse_plan,
    plan_to_dict,
    serialize_plan,
    validate_plan,
)

logger = logging.getLogger(__name__)

_FENCE = re.compile(r"```[A-Za-z]*")


def predict_clean(z_t: np.ndarray, v_t: np.ndarray, t: float) -> np.ndarray:
    """One-step clean estimate under the rectified-flow parameterization: z_t - t * v_t."""
    z_t = np.asarray(z_t, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if z_t.shape != v_t.shape:
        raise ShapeMismatch(f"latent shape {z_t.shape} does not match velocity shape {v_t.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return z_t - t * v_t


def artifact_id(pixels: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(pixels, dtype="<f4").tobytes()).hexdigest()[:16]


def parse_planner_response(text: str) -> PlannerVerdict:
    """
    Extract the verdict from a refine response.

    The first JSON object holding ``isaligned`` is the verdict; the prose around
    it (or an explicit ``rationale`` key) becomes the rationale. A layout sent
    along with an aligned verdict is ignored.

    Raises:
        NoVerdictFound: if no object carries ``isaligned``.
        MalformedLayout: if the flag is not boolean, or a misaligned verdict has no usable layout.
    """
    try:
        obj, start, end = find_json_object(text, required_key="isaligned")
    except NoJsonFound:
        raise NoVerdictFound()

    flag = obj["isaligned"]
    if isinstance(flag, str) and flag.strip().lower() in ("true", "false"):
        flag = flag.strip().lower() == "true"
    if not isinstance(flag, bool):
        raise MalformedLayout(f"'isaligned' must be a boolean, got {flag!r}")

    rationale = obj.get("rationale")
    if not isinstance(rationale, str):
        prose = _FENCE.sub("", text[:start] + "\n" + text[end:])
        rationale = "\n".join(line.rstrip() for line in prose.strip().splitlines())

    if flag:
        if obj.get("optimized_layout"):
            logger.debug("Ignoring optimized_layout on an aligned verdict")
        return PlannerVerdict(isaligned=True, rationale=rationale)

    layout = obj.get("optimized_layout")
    if not isinstance(layout, dict):
        raise MalformedLayout("a misaligned verdict must carry an 'optimized_layout' object")
    try:
        fragment = parse_layout_fragment(layout)
    except PlanError as e:
        raise MalformedLayout(f"optimized_layout: {e}") from e
    return PlannerVerdict(isaligned=False, optimized_layout=fragment, rationale=rationale)


def render_conditions(
    plan: ScenePlan,
    image_width: int,
    image_height: int,
    patch_size: Optional[int] = None,
    depth_global: Optional[bool] = None,
    global_isolated: Optional[bool] = None,
    distance_factor: Optional[float] = None,
    vfov_deg: Optional[float] = None,
) -> ConditionSet:
    """Render camera, depth map, entity masks, attention mask and depth preview for a plan."""
    patch = patch_size or settings.PATCH_SIZE
    camera = derive_camera(plan.params, image_width, image_height, distance_factor, vfov_deg)
    boxes = [box_from_entity(e) for e in plan.entities]
    depth = render_depth(camera, boxes)
    masks = tuple(project_box_mask(camera, box) for box in boxes)

    layout = layout_for_plan(plan, image_width, image_height, patch)
    bitsets = [patchify_mask(mask, patch) for mask in masks]
    attention = build_attention_mask(layout, bitsets, depth_global=depth_global, global_isolated=global_isolated)

    near, far = default_depth_range(camera, plan.params)
    preview = depth_to_gray(depth, near, far).astype(np.float64) / 65535.0
    return ConditionSet(camera=camera, depth=depth, masks=masks, attention=attention, preview=preview)


def _call_port(step: int, fn, *args):
    try:
        return fn(*args)
    except PortFailure:
        raise
    except Exception as e:
        logger.error(f"Port call failed at step {step}: {e}")
        raise PortFailure(step, e) from e


def run_refinement_loop(
    prompt: str,
    denoiser: DenoiserPort,
    planner: PlannerPort,
    cfg: LoopConfig,
    condition_options: Optional[Dict[str, Any]] = None,
) -> RefinementTrace:
    """
    Run the predict-evaluate-refine cycle within a single denoising pass.

    At each step the denoiser's velocity yields a clean estimate. On scheduled
    steps, while evaluation is still active, the planner judges that estimate;
    a misaligned verdict revises the plan, re-renders the conditions and
    recomputes the velocity of the same step before advancing. Evaluation
    stops after ``stability_window`` consecutive aligned verdicts or once
    ``max_refinements`` revisions were made.

    Raises:
        PortFailure: when a port errors or answers with something unusable; the
            step index is -1 for the initial planning call.
        InvalidPlan: when the initial plan violates plan invariants.
    """
    plan_text = _call_port(-1, planner.plan, prompt)
    plan = _call_port(-1, parse_plan, plan_text, prompt)
    report = validate_plan(plan)
    if not report.usable:
        raise InvalidPlan("; ".join(f.message for f in report.errors))
    for finding in report.warnings:
        logger.warning(f"Plan warning: {finding.message}")

    initial_plan = plan
    width, height = cfg.image_width, cfg.image_height
    options = condition_options or {}
    conditions = render_conditions(plan, width, height, **options)

    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((height, width))
    schedule = set(cfg.schedule())
    timesteps = cfg.timesteps()
    state = StepState()
    denoiser_calls = 0

    logger.info(f"Starting refinement loop: {cfg.num_steps} steps, {len(schedule)} scheduled evaluations")
    for i, t in enumerate(timesteps):
        t_next = timesteps[i + 1] if i + 1 < len(timesteps) else 0.0

        v = _call_port(i, denoiser.step, z, t, conditions)
        denoiser_calls += 1
        x0 = predict_clean(z, v, t)
        event: Dict[str, Any] = {"step": i, "t": t, "artifact_id": artifact_id(x0)}

        if i in schedule and state.evaluating and state.revisions < cfg.max_refinements:
            image = ImageArtifact(artifact_id=event["artifact_id"], pixels=x0, step=i)
            response = _call_port(i, planner.refine, prompt, plan.entity_names, serialize_plan(plan), image)
            verdict = _call_port(i, parse_planner_response, response)
            event["isaligned"] = verdict.isaligned
            event["rationale"] = verdict.rationale

            if verdict.isaligned:
                state.aligned_streak += 1
                if state.aligned_streak >= cfg.stability_window:
                    logger.info(f"Alignment stable after step {i}; evaluation stops")
                    state.evaluating = False
            else:
                state.aligned_streak = 0
                plan = _call_port(i, _revise, plan, verdict)
                state.revisions += 1
                conditions = render_conditions(plan, width, height, **options)

                # re-guide the same timestep with the revised conditions
                v = _call_port(i, denoiser.step, z, t, conditions)
                denoiser_calls += 1
                event["revision"] = state.revisions
                event["revised_layout"] = plan_to_dict(plan)
                event["rerendered"] = True
                logger.info(f"Step {i}: plan revision {state.revisions} applied, conditions re-rendered")
                if state.revisions >= cfg.max_refinements:
                    logger.info("Refinement limit reached; evaluation stops")

        state.events.append(TraceEvent(**event))
        z = z + (t_next - t) * v

    return RefinementTrace(
        prompt=prompt,
        seed=cfg.seed,
        num_steps=cfg.num_steps,
        initial_plan=initial_plan,
        final_plan=plan,
        events=tuple(state.events),
        denoiser_calls=denoiser_calls,
    )


def _revise(plan: ScenePlan, verdict: PlannerVerdict) -> ScenePlan:
    revised = apply_refinement(plan, verdict.optimized_layout)
    report = validate_plan(revised)
    if not report.usable:
        raise InvalidPlan("revised plan: " + "; ".join(f.message for f in report.errors))
    return revised


def trace_to_jsonl(trace: RefinementTrace) -> str:
    """Header line, one line per step, summary line; keys sorted and no timestamps."""
    lines: List[Dict[str, Any]] = [{
        "type": "header",
        "prompt": trace.prompt,
        "seed": trace.seed,
        "num_steps": trace.num_steps,
        "initial_plan": plan_to_dict(trace.initial_plan),
    }]
    for event in trace.events:
        record = {"type": "step"}
        record.update(event.model_dump(mode="json", exclude_none=True))
        lines.append(record)
    lines.append({
        "type": "summary",
        "revisions": trace.revisions,
        "rerenders": trace.rerenders,
        "verdicts": trace.verdicts,
        "denoiser_calls": trace.denoiser_calls,
        "final_plan": plan_to_dict(trace.final_plan),
    })
    return "".join(json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n" for line in lines)
