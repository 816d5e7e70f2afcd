import logging
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
from pydantic import BaseModel

from app.core.config import settings
from app.core.exceptions import InvalidPlan, PlannerError
from app.schemas.scene import ScenePlan
from app.services.planner_service import HttpPlanner, PlannerPort, ScriptedPlanner
from app.services.scene_service import parse_plan, validate_plan

logger = logging.getLogger(__name__)


class CliConfig(BaseModel):
    """Settings merged with per-invocation flags; echoed into every meta.json."""
    image_width: int
    image_height: int
    patch_size: int
    distance_factor: float
    vfov_deg: float
    near_plane: float
    seed: int
    output_dir: str
    planner_url: Optional[str] = None
    planner_key_set: bool = False
    planner_model: str

    class Config:
        frozen = True

    def to_meta(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def get_cli_config(**overrides: Any) -> CliConfig:
    """Resolve a CliConfig from settings; flags left at None keep the configured value."""
    values: Dict[str, Any] = {
        "image_width": settings.IMAGE_WIDTH,
        "image_height": settings.IMAGE_HEIGHT,
        "patch_size": settings.PATCH_SIZE,
        "distance_factor": settings.CAMERA_DISTANCE_FACTOR,
        "vfov_deg": settings.CAMERA_VFOV_DEG,
        "near_plane": settings.NEAR_PLANE,
        "seed": settings.DEFAULT_SEED,
        "output_dir": settings.OUTPUT_DIR,
        "planner_url": settings.PLANNER_URL,
        "planner_key_set": bool(settings.PLANNER_KEY),
        "planner_model": settings.PLANNER_MODEL,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return CliConfig(**values)


def image_options(func: Callable) -> Callable:
    """Shared image and camera flags; the wrapped command receives a resolved ``config``."""
    @click.option("--width", "image_width", type=int, default=None, help="Image width in pixels.")
    @click.option("--height", "image_height", type=int, default=None, help="Image height in pixels.")
    @click.option("--patch-size", type=int, default=None, help="Latent patch size in pixels.")
    @click.option("--distance-factor", type=float, default=None, help="Camera distance as a multiple of scene_size.")
    @click.option("--vfov", "vfov_deg", type=float, default=None, help="Vertical field of view in degrees.")
    @click.option("--seed", type=int, default=None, help="Random seed.")
    @wraps(func)
    def wrapper(*args, image_width, image_height, patch_size, distance_factor, vfov_deg, seed, **kwargs):
        config = get_cli_config(
            image_width=image_width,
            image_height=image_height,
            patch_size=patch_size,
            distance_factor=distance_factor,
            vfov_deg=vfov_deg,
            seed=seed,
        )
        return func(*args, config=config, **kwargs)
    return wrapper


def load_plan_file(path: str, strict: bool = True) -> ScenePlan:
    """Parse a plan file; with ``strict`` a plan with validation errors is rejected."""
    plan = parse_plan(Path(path).read_text(encoding="utf-8"))
    report = validate_plan(plan)
    for finding in report.warnings:
        logger.warning(f"{path}: {finding.message}")
    if strict and not report.usable:
        raise InvalidPlan("; ".join(f.message for f in report.errors))
    return plan


def get_planner(script: Optional[str], image_dir: Optional[Path] = None) -> PlannerPort:
    """Scripted planner when a script is given, else the configured HTTP endpoint writing images to ``image_dir``."""
    if script:
        return ScriptedPlanner.from_file(script)
    if not settings.planner_configured:
        raise PlannerError("No planner script given and PLANNER_URL is not set")
    return HttpPlanner(image_dir=image_dir)
