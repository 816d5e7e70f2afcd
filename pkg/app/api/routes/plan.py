import json
import logging
from pathlib import Path
from typing import Optional

import click

from app.api.dependencies import get_cli_config
from app.core.exceptions import InvalidPlan, NoJsonFound
from app.services.artifact_service import ArtifactWriter, dump_json
from app.services.refinement_service import parse_planner_response
from app.services.scene_service import (
    PLAN_KEYS,
    apply_refinement,
    extract_keyed_object,
    find_json_object,
    parse_layout_fragment,
    parse_plan,
    serialize_plan,
    validate_plan,
)

logger = logging.getLogger(__name__)

router = click.Group(name="plan", help="Validate scene plans and apply planner revisions.")


@router.command("validate")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scene plan JSON (planner output, prose allowed).")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Directory for report.json and meta.json.")
def validate(plan_path: str, out_dir: Optional[str]):
    """Check plan invariants; prints the report and exits 1 on errors."""
    plan = parse_plan(Path(plan_path).read_text(encoding="utf-8"))
    report = validate_plan(plan)
    click.echo(dump_json(report.to_dict()), nl=False)

    if out_dir:
        writer = ArtifactWriter(out_dir, "plan validate", get_cli_config().to_meta())
        writer.add_input(plan_path)
        writer.write_json("report.json", report.to_dict())
        writer.write_text("plan.json", serialize_plan(plan))
        writer.finalize()

    if not report.usable:
        raise InvalidPlan(f"plan has {len(report.errors)} validation errors")


@router.command("apply")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Current scene plan.")
@click.option("--fragment", "fragment_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Planner refine response or a bare layout fragment.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
def apply(plan_path: str, fragment_path: str, out_dir: str):
    """Apply a layout revision to a plan and write the revised plan.json."""
    plan = parse_plan(Path(plan_path).read_text(encoding="utf-8"))
    text = Path(fragment_path).read_text(encoding="utf-8")

    try:
        find_json_object(text, required_key="isaligned")
        verdict = parse_planner_response(text)
        fragment = verdict.optimized_layout
        if fragment is None:
            logger.info("Verdict is aligned; plan is unchanged")
            revised = plan
        else:
            revised = apply_refinement(plan, fragment)
    except NoJsonFound:
        obj = extract_keyed_object(text, (*PLAN_KEYS, "optimized_layout"))
        revised = apply_refinement(plan, parse_layout_fragment(obj.get("optimized_layout", obj)))

    report = validate_plan(revised)
    writer = ArtifactWriter(out_dir, "plan apply", get_cli_config().to_meta())
    writer.add_input(plan_path)
    writer.add_input(fragment_path)
    writer.write_text("plan.json", serialize_plan(revised))
    writer.write_json("report.json", report.to_dict())
    writer.finalize()
    click.echo(json.dumps({"entities": revised.entity_names, "usable": report.usable}, sort_keys=True))

    if not report.usable:
        raise InvalidPlan("revised plan has validation errors")
