import json
import logging
from pathlib import Path
from typing import Optional

import click

from app.api.dependencies import CliConfig, get_cli_config, image_options, load_plan_file
from app.core.config import settings
from app.core.exceptions import MaskAuditFailed
from app.services.artifact_service import ArtifactWriter, dump_json
from app.services.attention_service import (
    audit_mask,
    build_attention_mask,
    encode_matrix_pbm,
    export_mask,
    layout_for_plan,
    load_mask,
    patchify_mask,
)
from app.services.camera_service import derive_camera, project_box_mask
from app.services.scene_service import box_from_entity

logger = logging.getLogger(__name__)

router = click.Group(name="mask", help="Build and audit condition-aware attention masks.")

MATRIX_PBM_LIMIT = 4096


@router.command("build")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scene plan JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--global-isolated", type=click.BOOL, default=None,
              help="Block the global prompt from local prompts and depth tokens (default true).")
@click.option("--depth-global", type=click.BOOL, default=None,
              help="Let depth tokens see the whole image; false restricts them to entity regions.")
@click.option("--tokens-global", type=int, default=None, help="Global prompt token count.")
@click.option("--tokens-local", type=int, default=None, help="Token count per local prompt.")
@click.option("--tokens-depth", type=int, default=None, help="Depth token count (default: image token count).")
@click.option("--min-coverage", type=float, default=None,
              help="Patch coverage fraction needed to mark a token (0 = any set pixel).")
@image_options
def build(
    plan_path: str,
    out_dir: str,
    global_isolated: Optional[bool],
    depth_global: Optional[bool],
    tokens_global: Optional[int],
    tokens_local: Optional[int],
    tokens_depth: Optional[int],
    min_coverage: Optional[float],
    config: CliConfig,
):
    """Write mask.json (and matrix.pbm for layouts of at most 4096 tokens)."""
    plan = load_plan_file(plan_path)
    camera = derive_camera(plan.params, config.image_width, config.image_height,
                           config.distance_factor, config.vfov_deg)
    layout = layout_for_plan(plan, config.image_width, config.image_height, config.patch_size,
                             tokens_global, tokens_local, tokens_depth)
    bitsets = [
        patchify_mask(project_box_mask(camera, box_from_entity(e)), config.patch_size, min_coverage)
        for e in plan.entities
    ]
    mask = build_attention_mask(layout, bitsets, depth_global=depth_global, global_isolated=global_isolated)

    parameters = {
        "global_isolated": mask.global_isolated,
        "depth_global": mask.depth_global,
        "min_coverage": settings.PATCHIFY_MIN_COVERAGE if min_coverage is None else min_coverage,
        "total_tokens": layout.total,
    }
    writer = ArtifactWriter(out_dir, "mask build", config.to_meta(), parameters)
    writer.add_input(plan_path)
    writer.write_json("mask.json", export_mask(mask))
    if layout.total <= MATRIX_PBM_LIMIT:
        writer.write_bytes("matrix.pbm", encode_matrix_pbm(mask))
    writer.finalize()
    click.echo(f"{out_dir}/mask.json")


@router.command("audit")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="mask.json written by 'mask build'.")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Directory for audit.json and meta.json.")
def audit(mask_path: str, out_dir: Optional[str]):
    """Re-derive every mask rule; prints the violations and exits 1 if there are any."""
    mask = load_mask(json.loads(Path(mask_path).read_text(encoding="utf-8")))
    report = audit_mask(mask)
    result = {
        "valid": report.is_valid,
        "violations": [v.model_dump(mode="json") for v in report.violations],
    }
    click.echo(dump_json(result), nl=False)

    if out_dir:
        writer = ArtifactWriter(out_dir, "mask audit", get_cli_config().to_meta())
        writer.add_input(mask_path)
        writer.write_json("audit.json", result)
        writer.finalize()

    if not report.is_valid:
        raise MaskAuditFailed(f"{len(report.violations)} mask cells violate the attention rules")
