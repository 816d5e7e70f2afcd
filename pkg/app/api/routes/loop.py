import logging
from pathlib import Path
from typing import Optional

import click

from app.api.dependencies import get_cli_config, get_planner
from app.core.config import settings
from app.schemas.refinement import LoopConfig
from app.services.artifact_service import ArtifactWriter
from app.services.denoiser_service import ToyDenoiser
from app.services.refinement_service import run_refinement_loop, trace_to_jsonl
from app.services.scene_service import serialize_plan

logger = logging.getLogger(__name__)

router = click.Group(name="loop", help="Run the predict-evaluate-refine loop.")


def _parse_schedule(value: Optional[str]):
    if not value:
        return None
    try:
        return tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise click.BadParameter("expected comma-separated step indices", param_hint="--eval-steps")


@router.command("run")
@click.option("--prompt", required=True, help="Text prompt to plan and render.")
@click.option("--planner-script", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Scripted planner responses (JSON); the HTTP planner is used when omitted.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--steps", "num_steps", type=int, default=None, help="Number of denoising steps.")
@click.option("--eval-steps", default=None, help="Comma-separated steps that consult the planner (default: all).")
@click.option("--max-refinements", type=int, default=None, help="Maximum number of plan revisions.")
@click.option("--stability-window", type=int, default=None,
              help="Consecutive aligned verdicts that end evaluation.")
@click.option("--image-size", type=int, default=None, help="Square latent/image size for the loop.")
@click.option("--patch-size", type=int, default=None, help="Latent patch size in pixels.")
@click.option("--seed", type=int, default=None, help="Noise seed.")
def run(
    prompt: str,
    planner_script: Optional[str],
    out_dir: str,
    num_steps: Optional[int],
    eval_steps: Optional[str],
    max_refinements: Optional[int],
    stability_window: Optional[int],
    image_size: Optional[int],
    patch_size: Optional[int],
    seed: Optional[int],
):
    """Write trace.jsonl, plan_initial.json and plan_final.json."""
    size = image_size or settings.LOOP_IMAGE_SIZE
    config = get_cli_config(image_width=size, image_height=size, patch_size=patch_size, seed=seed)
    try:
        cfg = LoopConfig(
            num_steps=num_steps or settings.NUM_STEPS,
            eval_schedule=_parse_schedule(eval_steps),
            max_refinements=settings.MAX_REFINEMENTS if max_refinements is None else max_refinements,
            stability_window=stability_window or settings.STABILITY_WINDOW,
            seed=config.seed,
            image_width=size,
            image_height=size,
        )
    except ValueError as e:
        raise click.BadParameter(str(e))

    planner = get_planner(planner_script, image_dir=Path(out_dir) / "artifacts")
    writer = ArtifactWriter(out_dir, "loop run", config.to_meta(), cfg.model_dump(mode="json"))
    if planner_script:
        writer.add_input(planner_script)

    try:
        trace = run_refinement_loop(
            prompt,
            ToyDenoiser(),
            planner,
            cfg,
            condition_options={
                "patch_size": config.patch_size,
                "distance_factor": config.distance_factor,
                "vfov_deg": config.vfov_deg,
            },
        )
    finally:
        planner.close()

    for image_path in planner.written_images:
        writer.add_output(image_path)
    writer.write_text("trace.jsonl", trace_to_jsonl(trace))
    writer.write_text("plan_initial.json", serialize_plan(trace.initial_plan))
    writer.write_text("plan_final.json", serialize_plan(trace.final_plan))
    writer.finalize()
    click.echo(f"revisions={trace.revisions} verdicts={trace.verdicts} denoiser_calls={trace.denoiser_calls}")
