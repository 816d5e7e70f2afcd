import json
import logging
from itertools import permutations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ExhaustedCombinations
from app.schemas.metrics import BenchPrompt, CategoryTable, Relation, RelationSpec
from app.services.metrics_service import parse_relation

logger = logging.getLogger(__name__)

CATEGORY_TABLE_PATH = Path(__file__).resolve().parent.parent / "static" / "bench" / "object_categories.json"

RELATION_PHRASES: Dict[Relation, str] = {
    Relation.FRONT: "in front of",
    Relation.BEHIND: "behind",
    Relation.FRONT_LEFT: "to the front left of",
    Relation.FRONT_RIGHT: "to the front right of",
    Relation.BACK_LEFT: "to the back left of",
    Relation.BACK_RIGHT: "to the back right of",
}


def load_category_table(path: Optional[Union[str, Path]] = None) -> CategoryTable:
    with open(path or CATEGORY_TABLE_PATH, "r", encoding="utf-8") as fh:
        return CategoryTable(**json.load(fh))


def relation_clause(subject: str, relation: Relation, obj: str) -> str:
    return f"a {subject} {RELATION_PHRASES[relation]} a {obj}"


def basic_prompt(subject: str, relation: Union[Relation, str], obj: str, scene: str) -> BenchPrompt:
    """``a {object1} {relation} a {object2} {scene}`` with its ground-truth spec."""
    rel = parse_relation(relation)
    spec = RelationSpec(subject=subject, object=obj, relation=rel, scene=scene)
    return BenchPrompt(prompt=f"{relation_clause(subject, rel, obj)} {scene}", specs=[spec], scene=scene)


def combine_prompts(first: BenchPrompt, second: BenchPrompt) -> BenchPrompt:
    """Multi-relation prompt from two basic prompts sharing a scene."""
    clauses = [relation_clause(s.subject, s.relation, s.object) for s in (*first.specs, *second.specs)]
    return BenchPrompt(
        prompt=f"{', '.join(clauses)} {first.scene}",
        specs=[*first.specs, *second.specs],
        scene=first.scene,
        kind="multi",
    )


def object_combinations(table: CategoryTable) -> List[Tuple[str, str, str]]:
    """Every (scene, object1, object2) with two distinct objects valid in that scene."""
    combos = []
    for scene in table.scenes:
        for o1, o2 in permutations(table.objects_for_scene(scene), 2):
            combos.append((scene, o1, o2))
    return combos


def _objects(prompt: BenchPrompt) -> List[str]:
    return [name for spec in prompt.specs for name in (spec.subject, spec.object)]


def generate_bench_prompts(
    table: CategoryTable,
    relations: Sequence[Union[Relation, str]],
    count: int,
    seed: int = 0,
    multi_count: int = 0,
) -> List[BenchPrompt]:
    """
    Sample ``count`` distinct basic prompts per relation, then ``multi_count``
    multi-relation prompts pairing basic prompts of the same scene over four
    distinct objects.

    Raises:
        ExhaustedCombinations: when fewer distinct prompts exist than requested.
    """
    rng = np.random.default_rng(seed)
    combos = object_combinations(table)
    basic: List[BenchPrompt] = []
    for relation in relations:
        rel = parse_relation(relation)
        if count > len(combos):
            raise ExhaustedCombinations(count, len(combos), rel.value)
        if count <= 0:
            continue
        for index in rng.choice(len(combos), size=count, replace=False):
            scene, o1, o2 = combos[int(index)]
            basic.append(basic_prompt(o1, rel, o2, scene))

    prompts = list(basic)
    if multi_count > 0:
        pairs = [
            (i, j)
            for i in range(len(basic))
            for j in range(i + 1, len(basic))
            if basic[i].scene == basic[j].scene and len(set(_objects(basic[i]) + _objects(basic[j]))) == 4
        ]
        if multi_count > len(pairs):
            raise ExhaustedCombinations(multi_count, len(pairs), "multi")
        for index in rng.choice(len(pairs), size=multi_count, replace=False):
            i, j = pairs[int(index)]
            prompts.append(combine_prompts(basic[i], basic[j]))

    logger.info(f"Generated {len(basic)} basic and {len(prompts) - len(basic)} multi-relation prompts")
    return prompts


def prompts_to_jsonl(prompts: Sequence[BenchPrompt]) -> str:
    return "".join(json.dumps(p.model_dump(mode="json"), sort_keys=True) + "\n" for p in prompts)
