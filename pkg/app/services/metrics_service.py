import json
import math
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import EmptySelection, UnknownEntity, UnknownRelation
from app.schemas.depth import DepthMap
from app.schemas.metrics import (
    Axis,
    ConsistencyReport,
    ConsistencySample,
    DetectionRecord,
    Direction,
    Relation,
    RelationComponent,
    RelationSpec,
)
from app.schemas.scene import ScenePlan
from app.services.camera_service import derive_camera, project_box_mask
from app.services.depth_service import render_depth
from app.services.scene_service import box_from_entity

logger = logging.getLogger(__name__)

_DEPTH_FRONT = RelationComponent(axis=Axis.DEPTH, direction=Direction.FRONT)
_DEPTH_BACK = RelationComponent(axis=Axis.DEPTH, direction=Direction.BACK)
_LEFT = RelationComponent(axis=Axis.HORIZONTAL, direction=Direction.LEFT)
_RIGHT = RelationComponent(axis=Axis.HORIZONTAL, direction=Direction.RIGHT)

RELATION_COMPONENTS: Dict[Relation, Tuple[RelationComponent, ...]] = {
    Relation.FRONT: (_DEPTH_FRONT,),
    Relation.BEHIND: (_DEPTH_BACK,),
    Relation.FRONT_LEFT: (_DEPTH_FRONT, _LEFT),
    Relation.FRONT_RIGHT: (_DEPTH_FRONT, _RIGHT),
    Relation.BACK_LEFT: (_DEPTH_BACK, _LEFT),
    Relation.BACK_RIGHT: (_DEPTH_BACK, _RIGHT),
}

_ALIASES = {"back": "behind", "in_front_of": "front", "in_front": "front"}


def parse_relation(relation: Union[Relation, str]) -> Relation:
    if isinstance(relation, Relation):
        return relation
    key = str(relation).strip().lower().replace("-", "_").replace(" ", "_")
    key = _ALIASES.get(key, key)
    try:
        return Relation(key)
    except ValueError:
        raise UnknownRelation(str(relation))


def decompose_relation(relation: Union[Relation, str]) -> List[RelationComponent]:
    """Split a relation into its depth component and, for diagonal relations, a horizontal one."""
    return list(RELATION_COMPONENTS[parse_relation(relation)])


def _signed_margin(subject: DetectionRecord, obj: DetectionRecord, component: RelationComponent) -> float:
    if component.direction == Direction.LEFT:
        return obj.center_x - subject.center_x
    if component.direction == Direction.RIGHT:
        return subject.center_x - obj.center_x
    if component.direction == Direction.FRONT:
        return obj.depth - subject.depth
    return subject.depth - obj.depth


def _soft_scale(subject: DetectionRecord, obj: DetectionRecord, axis: Axis) -> float:
    if axis == Axis.HORIZONTAL:
        scale = (subject.width + obj.width) / 2.0
    else:
        scale = (abs(subject.depth) + abs(obj.depth)) / 2.0
    return scale if scale > 0 else 1.0


def score_components(
    subject: DetectionRecord,
    obj: DetectionRecord,
    relation: Union[Relation, str],
    margin: float = 0.0,
    soft: bool = False,
) -> List[float]:
    scores = []
    for component in decompose_relation(relation):
        excess = _signed_margin(subject, obj, component) - margin
        if soft:
            x = excess / _soft_scale(subject, obj, component.axis)
            scores.append(1.0 / (1.0 + math.exp(-max(min(x, 500.0), -500.0))))
        else:
            scores.append(1.0 if excess > 0 else 0.0)
    return scores


def score_relation(
    subject: DetectionRecord,
    obj: DetectionRecord,
    spec: RelationSpec,
    margin: float = 0.0,
    soft: bool = False,
) -> float:
    """
    Mean of the per-component scores for ``spec.relation``.

    A horizontal component passes when the subject's box center lies on the
    required side of the object's by more than ``margin`` pixels; a depth
    component likewise compares depths (smaller is closer). Ties fail. With
    ``soft`` each component is a sigmoid of the normalized signed excess.
    """
    scores = score_components(subject, obj, spec.relation, margin, soft)
    return sum(scores) / len(scores)


def consistency_3d(d1: float, d2: float) -> float:
    """1 - |d1 - d2| / (|d1| + |d2|); two zero shifts agree perfectly."""
    denominator = abs(d1) + abs(d2)
    if denominator == 0:
        return 1.0
    return 1.0 - abs(d1 - d2) / denominator


def _best_detection(detections: Sequence[DetectionRecord], label: str) -> Optional[DetectionRecord]:
    matches = [d for d in detections if d.label == label]
    if not matches:
        return None
    return max(matches, key=lambda d: d.score)


def score_prompt(
    specs: Sequence[RelationSpec],
    detections: Sequence[DetectionRecord],
    margin: float = 0.0,
    soft: bool = False,
) -> float:
    """Mean relation score over ``specs``; a spec whose subject or object was not detected scores 0."""
    if not specs:
        return 0.0
    total = 0.0
    for spec in specs:
        subject = _best_detection(detections, spec.subject)
        obj = _best_detection(detections, spec.object)
        if subject is None or obj is None:
            logger.info(f"Missing detection for '{spec.subject}' or '{spec.object}'; relation scores 0")
            continue
        total += score_relation(subject, obj, spec, margin, soft)
    return total / len(specs)


def load_detections(path: Union[str, Path]) -> List[DetectionRecord]:
    """Detections file: a JSON list of records, or an object with a ``detections`` list."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("detections", [])
    return [DetectionRecord(**item) for item in data]


def _pixel_window(depth: DepthMap, bbox: Sequence[float]) -> Tuple[int, int, int, int]:
    x1, y1, x2, y2 = bbox
    col0 = min(max(int(math.floor(x1)), 0), depth.width - 1)
    row0 = min(max(int(math.floor(y1)), 0), depth.height - 1)
    col1 = min(max(int(math.ceil(x2)), col0 + 1), depth.width)
    row1 = min(max(int(math.ceil(y2)), row0 + 1), depth.height)
    return col0, row0, col1, row1


def depth_for_bbox(depth: DepthMap, bbox: Sequence[float], stat: str = "center") -> float:
    """
    Depth statistic of a box region: the pixel under the box center, or the mean
    of finite values inside the box. A center on background falls back to the mean.

    Raises:
        EmptySelection: if the box holds no finite depth.
    """
    col0, row0, col1, row1 = _pixel_window(depth, bbox)
    region = depth.values[row0:row1, col0:col1].astype(np.float64)
    if stat == "center":
        x1, y1, x2, y2 = bbox
        col = min(max(int(math.floor((x1 + x2) / 2.0)), 0), depth.width - 1)
        row = min(max(int(math.floor((y1 + y2) / 2.0)), 0), depth.height - 1)
        value = float(depth.values[row, col])
        if math.isfinite(value):
            return value
    elif stat != "mean":
        raise ValueError(f"unknown depth statistic '{stat}'")

    finite = region[np.isfinite(region)]
    if finite.size == 0:
        raise EmptySelection(f"box {tuple(bbox)} covers no finite depth")
    return float(finite.mean())


def synthetic_detections(
    plan: ScenePlan,
    image_width: int,
    image_height: int,
    stat: str = "mean",
    distance_factor: Optional[float] = None,
    vfov_deg: Optional[float] = None,
) -> List[DetectionRecord]:
    """
    Detections derived from the plan's own geometry: each entity's mask bounding
    box, with depth measured on a render of that entity alone.
    """
    camera = derive_camera(plan.params, image_width, image_height, distance_factor, vfov_deg)
    records = []
    for entity in plan.entities:
        box = box_from_entity(entity)
        mask = project_box_mask(camera, box)
        if mask.is_empty:
            logger.warning(f"Entity '{entity.entity_name}' is not visible; no detection emitted")
            continue
        bbox = mask.bbox()
        depth = render_depth(camera, [box])
        records.append(DetectionRecord(label=entity.entity_name, bbox=bbox, depth=depth_for_bbox(depth, bbox, stat)))
    return records


def run_consistency_experiment(
    plan: ScenePlan,
    subject: str,
    reference: str,
    unit: Optional[float] = None,
    shifts: int = 12,
    image_width: int = 256,
    image_height: int = 256,
    stat: str = "center",
    distance_factor: Optional[float] = None,
    vfov_deg: Optional[float] = None,
) -> ConsistencyReport:
    """
    Shift ``subject`` along the camera's optical axis by 1..``shifts`` multiples
    of ``unit`` and compare each intended shift d1 with the measured change d2 of
    the depth difference between the two entity centers on the rendered scene.
    """
    for name in (subject, reference):
        if plan.entity(name) is None:
            raise UnknownEntity(name)
    step = unit if unit is not None else 0.05 * plan.params.scene_size
    camera = derive_camera(plan.params, image_width, image_height, distance_factor, vfov_deg)
    forward = camera.basis[2]

    def measure(entities) -> float:
        boxes = {e.entity_name: box_from_entity(e) for e in entities}
        depth = render_depth(camera, list(boxes.values()))
        values = {}
        for name in (subject, reference):
            mask = project_box_mask(camera, boxes[name])
            if mask.is_empty:
                raise EmptySelection(f"entity '{name}' left the view")
            values[name] = depth_for_bbox(depth, mask.bbox(), stat)
        return values[subject] - values[reference]

    baseline = measure(plan.entities)
    samples = []
    for k in range(1, shifts + 1):
        d1 = k * step
        moved = []
        for entity in plan.entities:
            if entity.entity_name == subject:
                position = tuple(float(p) for p in np.asarray(entity.position) + d1 * forward)
                entity = entity.model_copy(update={"position": position})
            moved.append(entity)
        d2 = measure(moved) - baseline
        samples.append(ConsistencySample(d1=d1, d2=d2, score=consistency_3d(d1, d2)))

    report = ConsistencyReport(samples=samples, subject=subject, reference=reference)
    logger.info(f"Consistency experiment over {shifts} shifts: mean score {report.mean_score:.4f}")
    return report
