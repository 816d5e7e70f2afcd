import json
import logging
from pathlib import Path
from typing import List, Optional

import click

from app.api.dependencies import CliConfig, image_options, load_plan_file
from app.schemas.metrics import BenchPrompt, RelationSpec
from app.services.artifact_service import ArtifactWriter
from app.services.metrics_service import (
    consistency_3d,
    load_detections,
    parse_relation,
    run_consistency_experiment,
    score_prompt,
)

logger = logging.getLogger(__name__)

router = click.Group(name="score", help="Spatial relation scores and the 3D consistency metric.")


def _load_specs(path: str) -> List[RelationSpec]:
    """A bench prompt object, a list of relation specs, or the first line of a bench JSON-lines file."""
    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = json.loads(text.splitlines()[0])
    if isinstance(data, dict):
        return list(BenchPrompt(**data).specs)
    return [RelationSpec(**item) for item in data]


@router.command("relation")
@click.option("--detections", "detections_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON list of detection records.")
@click.option("--subject", required=True, help="Subject label.")
@click.option("--object", "object_label", required=True, help="Object label.")
@click.option("--relation", required=True,
              help="front, behind, front_left, front_right, back_left or back_right.")
@click.option("--margin", type=float, default=0.0, show_default=True, help="Strict margin (pixels / depth units).")
@click.option("--soft", is_flag=True, default=False, help="Sigmoid of the normalized margin instead of 0/1.")
def relation(detections_path: str, subject: str, object_label: str, relation: str, margin: float, soft: bool):
    """Print the relation score of one subject/object pair."""
    spec = RelationSpec(subject=subject, object=object_label, relation=parse_relation(relation))
    score = score_prompt([spec], load_detections(detections_path), margin, soft)
    click.echo(repr(score))


@router.command("prompt")
@click.option("--specs", "specs_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Bench prompt JSON or a list of relation specs.")
@click.option("--detections", "detections_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON list of detection records.")
@click.option("--margin", type=float, default=0.0, show_default=True, help="Strict margin.")
@click.option("--soft", is_flag=True, default=False, help="Soft component scores.")
def prompt(specs_path: str, detections_path: str, margin: float, soft: bool):
    """Print the mean score over every relation of a (multi-relation) prompt."""
    score = score_prompt(_load_specs(specs_path), load_detections(detections_path), margin, soft)
    click.echo(repr(score))


@router.command("consistency")
@click.option("--d1", type=float, required=True, help="Intended depth shift.")
@click.option("--d2", type=float, required=True, help="Measured depth shift.")
def consistency(d1: float, d2: float):
    """Print 1 - |d1 - d2| / (|d1| + |d2|)."""
    click.echo(repr(consistency_3d(d1, d2)))


@router.command("sweep")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scene plan with at least the two entities.")
@click.option("--subject", required=True, help="Entity shifted along the camera axis.")
@click.option("--reference", required=True, help="Entity kept in place.")
@click.option("--unit", type=float, default=None, help="Unit shift in meters (default 0.05 * scene_size).")
@click.option("--shifts", type=int, default=12, show_default=True, help="Number of shift multiples.")
@click.option("--stat", type=click.Choice(["center", "mean"]), default="center", show_default=True,
              help="Depth statistic per entity box.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@image_options
def sweep(plan_path: str, subject: str, reference: str, unit: Optional[float], shifts: int, stat: str,
          out_dir: str, config: CliConfig):
    """Run the 3D consistency experiment; writes consistency.json and prints the mean score."""
    plan = load_plan_file(plan_path)
    report = run_consistency_experiment(
        plan, subject, reference, unit, shifts, config.image_width, config.image_height, stat,
        distance_factor=config.distance_factor, vfov_deg=config.vfov_deg,
    )
    writer = ArtifactWriter(out_dir, "score sweep", config.to_meta(),
                            {"subject": subject, "reference": reference, "unit": unit, "shifts": shifts, "stat": stat})
    writer.add_input(plan_path)
    writer.write_json("consistency.json", {
        "mean_score": report.mean_score,
        "samples": [s.model_dump(mode="json") for s in report.samples],
    })
    writer.finalize()
    click.echo(repr(report.mean_score))
