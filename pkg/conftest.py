"""Shared fixtures for the root-level test modules."""
import json
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(__file__))

from app.schemas.scene import EntitySpec, SceneParameters, ScenePlan
from app.services.scene_service import serialize_plan

DOG_PLAN = {
    "scene_parameters": {"scene_size": 10, "camera_pitch_angle": 20},
    "entity_layout": [
        {"entity_name": "dog", "size": [1, 0.5, 0.8], "position": [0, 0, 2]},
    ],
}

TWO_BOX_PLAN = {
    "scene_parameters": {"scene_size": 10, "camera_pitch_angle": 20},
    "entity_layout": [
        {"entity_name": "dog", "size": [2, 2, 2], "position": [-2, 0, 0]},
        {"entity_name": "cat", "size": [2, 2, 2], "position": [2.5, 0, 3]},
    ],
}


@pytest.fixture
def dog_plan() -> ScenePlan:
    return ScenePlan(
        global_prompt="a dog",
        params=SceneParameters(scene_size=10.0, camera_pitch_deg=20.0),
        entities=(EntitySpec(entity_name="dog", local_prompt="dog", size=(1.0, 0.5, 0.8), position=(0.0, 0.0, 2.0)),),
    )


@pytest.fixture
def two_box_plan() -> ScenePlan:
    return ScenePlan(
        params=SceneParameters(scene_size=10.0, camera_pitch_deg=20.0),
        entities=(
            EntitySpec(entity_name="dog", local_prompt="dog", size=(2.0, 2.0, 2.0), position=(-2.0, 0.0, 0.0)),
            EntitySpec(entity_name="cat", local_prompt="cat", size=(2.0, 2.0, 2.0), position=(2.5, 0.0, 3.0)),
        ),
    )


@pytest.fixture
def plan_file(tmp_path, two_box_plan):
    path = tmp_path / "plan.json"
    path.write_text(serialize_plan(two_box_plan), encoding="utf-8")
    return path


@pytest.fixture
def dog_script(tmp_path):
    """Planner script that moves the dog from z=2 to z=4 once, then stays aligned."""
    script = {
        "plan": DOG_PLAN,
        "refine": [
            {
                "isaligned": False,
                "rationale": "the dog should sit further back",
                "optimized_layout": {
                    "entity_layout": [{"entity_name": "dog", "size": [1, 0.5, 0.8], "position": [0, 0, 4]}],
                },
            },
            {"isaligned": True},
        ],
    }
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
