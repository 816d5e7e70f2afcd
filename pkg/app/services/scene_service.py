import json
import math
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from app.core.exceptions import (
    InvalidPlan,
    MissingKey,
    NoJsonFound,
    TypeMismatch,
    UnknownEntity,
)
from app.schemas.camera import Box3D
from app.schemas.scene import (
    EntitySpec,
    FindingList,
    LayoutFragment,
    SceneParameters,
    ScenePlan,
    ValidationReport,
)

logger = logging.getLogger(__name__)

_decoder = json.JSONDecoder()


PLAN_KEYS = ("scene_parameters", "entity_layout")


def find_json_object(
    text: str, required_key: Union[str, Sequence[str], None] = None
) -> Tuple[Dict[str, Any], int, int]:
    """
    Locate the first balanced JSON object embedded in ``text``.

    Planners wrap their JSON in prose and markdown fences; every '{' is tried as a
    start position. With ``required_key`` (one key or several, any of which
    qualifies) the first object containing it wins, which may be nested inside a
    larger object.

    Returns:
        (object, start, end) where ``text[start:end]`` is the object's source.

    Raises:
        NoJsonFound: carrying the first decode error met, if any.
    """
    keys = (required_key,) if isinstance(required_key, str) else tuple(required_key or ())
    decode_error = None
    idx = text.find("{")
    while idx != -1:
        try:
            obj, end = _decoder.raw_decode(text, idx)
        except json.JSONDecodeError as exc:
            decode_error = decode_error or exc
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict) and (not keys or any(key in obj for key in keys)):
            return obj, idx, end
        idx = text.find("{", idx + 1)
    raise NoJsonFound(decode_error=decode_error)


def extract_json_object(text: str, required_key: Union[str, Sequence[str], None] = None) -> Dict[str, Any]:
    return find_json_object(text, required_key)[0]


def extract_keyed_object(text: str, keys: Sequence[str]) -> Dict[str, Any]:
    """
    The first object holding any of ``keys``, else the first object at all.

    When no object holds a key and some '{' failed to decode, that decode error is
    raised rather than handing back an object nested inside the malformed one.
    """
    try:
        return extract_json_object(text, keys)
    except NoJsonFound as exc:
        if exc.decode_error is not None:
            raise
    return extract_json_object(text)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _require(obj: Dict[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise MissingKey(f"{path}.{key}" if path else key)
    return obj[key]


def _number(value: Any, field: str) -> float:
    if not _is_number(value):
        raise TypeMismatch(field, "a number")
    return float(value)


def _triple(value: Any, field: str) -> tuple:
    if not isinstance(value, list) or len(value) != 3 or not all(_is_number(v) for v in value):
        raise TypeMismatch(field, "a list of 3 numbers")
    return tuple(float(v) for v in value)


def _text(value: Any, field: str) -> str:
    if not isinstance(value, str):
        raise TypeMismatch(field, "a string")
    return value


def _parse_params(obj: Any) -> SceneParameters:
    if not isinstance(obj, dict):
        raise TypeMismatch("scene_parameters", "an object")
    return SceneParameters(
        scene_size=_number(_require(obj, "scene_size", "scene_parameters"), "scene_parameters.scene_size"),
        camera_pitch_deg=_number(
            _require(obj, "camera_pitch_angle", "scene_parameters"), "scene_parameters.camera_pitch_angle"
        ),
    )


def _parse_entity(obj: Any, index: int) -> EntitySpec:
    path = f"entity_layout[{index}]"
    if not isinstance(obj, dict):
        raise TypeMismatch(path, "an object")
    name = _text(_require(obj, "entity_name", path), f"{path}.entity_name")
    local_prompt = obj.get("local_prompt", name)
    yaw = obj.get("yaw", 0.0)
    return EntitySpec(
        entity_name=name,
        local_prompt=_text(local_prompt, f"{path}.local_prompt"),
        size=_triple(_require(obj, "size", path), f"{path}.size"),
        position=_triple(_require(obj, "position", path), f"{path}.position"),
        yaw_deg=_number(yaw, f"{path}.yaw"),
    )


def _parse_entities(obj: Any) -> List[EntitySpec]:
    if not isinstance(obj, list):
        raise TypeMismatch("entity_layout", "a list")
    return [_parse_entity(item, i) for i, item in enumerate(obj)]


def plan_from_dict(obj: Dict[str, Any], global_prompt: Optional[str] = None) -> ScenePlan:
    params = _parse_params(_require(obj, "scene_parameters", ""))
    entities = _parse_entities(_require(obj, "entity_layout", ""))
    if not entities:
        raise InvalidPlan("entity_layout must contain at least one entity")
    if global_prompt is None:
        global_prompt = _text(obj.get("global_prompt", ""), "global_prompt")
    return ScenePlan(global_prompt=global_prompt, params=params, entities=tuple(entities))


def parse_plan(document: str, global_prompt: Optional[str] = None) -> ScenePlan:
    """
    Parse a planner's scene-plan document into a ScenePlan.

    Args:
        document: JSON text, optionally wrapped in prose and markdown fences.
        global_prompt: Overrides any ``global_prompt`` key in the document.

    Returns:
        The parsed plan; invariant checks beyond structure are left to validate_plan.
    """
    obj = extract_keyed_object(document, PLAN_KEYS)
    plan = plan_from_dict(obj, global_prompt)
    logger.debug(f"Parsed plan with {len(plan.entities)} entities")
    return plan


def parse_layout_fragment(obj: Dict[str, Any]) -> LayoutFragment:
    """Parse a revision fragment; both top-level keys are optional, an empty dict is a no-op."""
    if not isinstance(obj, dict):
        raise TypeMismatch("optimized_layout", "an object")
    params = _parse_params(obj["scene_parameters"]) if "scene_parameters" in obj else None
    entities = _parse_entities(obj["entity_layout"]) if "entity_layout" in obj else []
    return LayoutFragment(params=params, entities=tuple(entities))


def format_number(value: float) -> str:
    """Decimal text with at most 6 fractional digits and no exponent."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    if text in ("-0", ""):
        return "0"
    return text


def _triple_text(values: Iterable[float]) -> str:
    return "[" + ", ".join(format_number(v) for v in values) + "]"


def _entity_text(entity: EntitySpec) -> str:
    parts = [
        f'"entity_name": {json.dumps(entity.entity_name, ensure_ascii=False)}',
        f'"size": {_triple_text(entity.size)}',
        f'"position": {_triple_text(entity.position)}',
    ]
    if entity.yaw_deg != 0.0:
        parts.append(f'"yaw": {format_number(entity.yaw_deg)}')
    if entity.local_prompt != entity.entity_name:
        parts.append(f'"local_prompt": {json.dumps(entity.local_prompt, ensure_ascii=False)}')
    return "{" + ", ".join(parts) + "}"


def _params_text(params: SceneParameters) -> str:
    return (
        f'{{"scene_size": {format_number(params.scene_size)}, '
        f'"camera_pitch_angle": {format_number(params.camera_pitch_deg)}}}'
    )


def serialize_plan(plan: ScenePlan) -> str:
    """Serialize to the planner schema: scene_parameters, entity_layout, then optional extras."""
    lines = ["{", f'  "scene_parameters": {_params_text(plan.params)},', '  "entity_layout": [']
    entity_lines = [f"    {_entity_text(e)}" for e in plan.entities]
    lines.append(",\n".join(entity_lines))
    closing = "  ]"
    if plan.global_prompt:
        closing += f',\n  "global_prompt": {json.dumps(plan.global_prompt, ensure_ascii=False)}'
    lines.append(closing)
    lines.append("}")
    return "\n".join(lines) + "\n"


def plan_to_dict(plan: ScenePlan) -> Dict[str, Any]:
    return json.loads(serialize_plan(plan))


def validate_plan(plan: ScenePlan) -> ValidationReport:
    """
    Check plan invariants.

    Errors are invariant violations (non-positive scene size or extents, pitch out
    of [0, 89], duplicate or empty names, non-finite numbers). Warnings are the
    visibility rule (every size component should exceed scene_size/10) and
    entities whose X or Z lies outside [-scene_size, scene_size].
    """
    findings = FindingList()
    params = plan.params

    if not math.isfinite(params.scene_size) or params.scene_size <= 0:
        findings.error("scene_size", f"scene_size must be > 0, got {params.scene_size}")
    if not 0.0 <= params.camera_pitch_deg <= 89.0:
        findings.error("camera_pitch", f"camera_pitch_angle must be in [0, 89], got {params.camera_pitch_deg}")
    if not plan.entities:
        findings.error("no_entities", "plan must contain at least one entity")

    seen = set()
    for entity in plan.entities:
        name = entity.entity_name
        if not name.strip():
            findings.error("empty_name", "entity_name must not be empty", name)
        if name in seen:
            findings.error("duplicate_name", f"entity name '{name}' is not unique", name)
        seen.add(name)

        values = (*entity.size, *entity.position, entity.yaw_deg)
        if not all(math.isfinite(v) for v in values):
            findings.error("non_finite", f"entity '{name}' has non-finite size or position", name)
            continue

        for axis, value in zip(("length_x", "width_z", "height_y"), entity.size):
            if value <= 0:
                findings.error("non_positive_size", f"entity '{name}' {axis} must be > 0, got {value}", name)

        if params.scene_size > 0:
            threshold = params.scene_size / 10.0
            small = [v for v in entity.size if 0 < v <= threshold]
            if small:
                findings.warning(
                    "below_visibility",
                    f"entity '{name}' has size components below scene_size/10 ({format_number(threshold)} m)",
                    name,
                )
            x, _, z = entity.position
            if abs(x) > params.scene_size or abs(z) > params.scene_size:
                findings.warning(
                    "out_of_bounds",
                    f"entity '{name}' at x={format_number(x)}, z={format_number(z)} lies outside "
                    f"[-{format_number(params.scene_size)}, {format_number(params.scene_size)}]",
                    name,
                )

    report = findings.report()
    if report.errors:
        logger.warning(f"Plan has {len(report.errors)} errors and {len(report.warnings)} warnings")
    return report


def apply_refinement(plan: ScenePlan, fragment: LayoutFragment) -> ScenePlan:
    """
    Return a new plan where the fragment's entities take their revised size,
    position and yaw; other entities and the entity order are untouched.

    Raises:
        UnknownEntity: if the fragment names an entity absent from the plan.
    """
    if fragment.is_empty:
        return plan

    known = set(plan.entity_names)
    updates: Dict[str, EntitySpec] = {}
    for revised in fragment.entities:
        if revised.entity_name not in known:
            raise UnknownEntity(revised.entity_name)
        updates[revised.entity_name] = revised

    entities = []
    for entity in plan.entities:
        revised = updates.get(entity.entity_name)
        if revised is None:
            entities.append(entity)
            continue
        entities.append(entity.model_copy(update={
            "size": revised.size,
            "position": revised.position,
            "yaw_deg": revised.yaw_deg,
        }))

    params = fragment.params if fragment.params is not None else plan.params
    logger.info(f"Applied refinement to {len(updates)} entities: {sorted(updates)}")
    return plan.model_copy(update={"params": params, "entities": tuple(entities)})


def box_from_entity(entity: EntitySpec) -> Box3D:
    return Box3D(bottom_center=entity.position, extents=entity.size, yaw_deg=entity.yaw_deg)
