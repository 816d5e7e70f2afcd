import logging
from typing import Optional

import click

from app.api.dependencies import CliConfig, image_options, load_plan_file
from app.services.artifact_service import ArtifactWriter
from app.services.camera_service import derive_camera, encode_mask_pbm, mask_to_dict, project_box_mask
from app.services.depth_service import default_depth_range, encode_depth, render_depth
from app.services.scene_service import box_from_entity

logger = logging.getLogger(__name__)

router = click.Group(name="render", help="Render depth maps and entity masks from a scene plan.")


@router.command("depth")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scene plan JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--near", type=float, default=None, help="Preview near distance (default 0.1 * scene_size).")
@click.option("--far", type=float, default=None, help="Preview far distance (default camera distance + scene_size).")
@image_options
def depth(plan_path: str, out_dir: str, near: Optional[float], far: Optional[float], config: CliConfig):
    """Write depth.dpf1 (raw float32) and depth.pgm (16-bit preview)."""
    plan = load_plan_file(plan_path)
    camera = derive_camera(plan.params, config.image_width, config.image_height,
                           config.distance_factor, config.vfov_deg)
    depth_map = render_depth(camera, [box_from_entity(e) for e in plan.entities])

    default_near, default_far = default_depth_range(camera, plan.params)
    near = default_near if near is None else near
    far = default_far if far is None else far
    raw, preview = encode_depth(depth_map, near, far)

    writer = ArtifactWriter(out_dir, "render depth", config.to_meta(), {"near": near, "far": far})
    writer.add_input(plan_path)
    writer.write_bytes("depth.dpf1", raw)
    writer.write_bytes("depth.pgm", preview)
    writer.finalize()
    click.echo(f"{out_dir}/depth.dpf1")


@router.command("masks")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scene plan JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@image_options
def masks(plan_path: str, out_dir: str, config: CliConfig):
    """Write one PBM per entity (mask_<j>.pbm) and masks.json with RLE bitsets."""
    plan = load_plan_file(plan_path)
    camera = derive_camera(plan.params, config.image_width, config.image_height,
                           config.distance_factor, config.vfov_deg)

    writer = ArtifactWriter(out_dir, "render masks", config.to_meta())
    writer.add_input(plan_path)
    entries = []
    for j, entity in enumerate(plan.entities, start=1):
        mask = project_box_mask(camera, box_from_entity(entity))
        if mask.behind_camera:
            logger.warning(f"Entity '{entity.entity_name}' is behind the camera")
        writer.write_bytes(f"mask_{j}.pbm", encode_mask_pbm(mask))
        entry = {"entity_name": entity.entity_name, "behind_camera": mask.behind_camera, "area": mask.area}
        entry.update(mask_to_dict(mask))
        entries.append(entry)
    writer.write_json("masks.json", {"entities": entries})
    writer.finalize()
    click.echo(f"{out_dir}/masks.json")
