import logging
from typing import Optional

import click

from app.api.dependencies import CliConfig, image_options, load_plan_file
from app.core.exceptions import UnknownEntity
from app.schemas.obb import CloudFrame, OrientedBox3D, PointCloud
from app.services.artifact_service import ArtifactWriter
from app.services.camera_service import derive_camera, project_box_mask
from app.services.depth_service import render_depth
from app.services.obb_service import (
    backproject_masked_depth,
    brute_force_obb_oracle,
    fit_min_volume_obb,
    obb_to_fragment,
    read_f32,
    read_xyz,
)
from app.services.scene_service import box_from_entity

logger = logging.getLogger(__name__)

router = click.Group(name="fit", help="Fit gravity-aligned minimum-volume boxes to point clouds.")


def _load_cloud(
    cloud_path: Optional[str],
    cloud_format: str,
    plan_path: Optional[str],
    entity: Optional[str],
    mode: str,
    config: CliConfig,
    writer: ArtifactWriter,
) -> PointCloud:
    frame = CloudFrame(mode)
    if cloud_path:
        writer.add_input(cloud_path)
        return read_f32(cloud_path, frame) if cloud_format == "f32" else read_xyz(cloud_path, frame)
    if not (plan_path and entity):
        raise click.UsageError("give either --cloud or both --plan and --entity")

    writer.add_input(plan_path)
    plan = load_plan_file(plan_path)
    spec = plan.entity(entity)
    if spec is None:
        raise UnknownEntity(entity)
    camera = derive_camera(plan.params, config.image_width, config.image_height,
                           config.distance_factor, config.vfov_deg)
    depth = render_depth(camera, [box_from_entity(e) for e in plan.entities])
    mask = project_box_mask(camera, box_from_entity(spec))
    return backproject_masked_depth(camera, depth, mask, frame)


def _box_record(name: str, box: OrientedBox3D, cloud: PointCloud) -> dict:
    return {
        "frame": cloud.frame.value,
        "points": len(cloud),
        "center": list(box.center),
        "half_extents": list(box.half_extents),
        "yaw_deg": box.yaw_deg,
        "volume": box.volume,
        "entity": obb_to_fragment(name, box),
    }


def cloud_options(func):
    func = click.option("--cloud", "cloud_path", default=None, type=click.Path(exists=True, dir_okay=False),
                        help="Point cloud file.")(func)
    func = click.option("--format", "cloud_format", type=click.Choice(["xyz", "f32"]), default="xyz",
                        show_default=True, help="Point cloud file format.")(func)
    func = click.option("--plan", "plan_path", default=None, type=click.Path(exists=True, dir_okay=False),
                        help="Scene plan to render and back-project instead of a cloud file.")(func)
    func = click.option("--entity", default=None, help="Entity whose mask selects the back-projected pixels.")(func)
    func = click.option("--mode", type=click.Choice(["metric", "pixel"]), default="metric", show_default=True,
                        help="Back-projection frame.")(func)
    func = click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
                        help="Output directory.")(func)
    return func


@router.command("obb")
@cloud_options
@click.option("--name", default=None, help="Entity name for the emitted fragment.")
@image_options
def obb(cloud_path, cloud_format, plan_path, entity, mode, out_dir, name, config: CliConfig):
    """Fit the minimum-volume box with rotating calipers; writes obb.json."""
    writer = ArtifactWriter(out_dir, "fit obb", config.to_meta(), {"mode": mode})
    cloud = _load_cloud(cloud_path, cloud_format, plan_path, entity, mode, config, writer)
    box = fit_min_volume_obb(cloud)
    writer.write_json("obb.json", _box_record(name or entity or "object", box, cloud))
    writer.finalize()
    click.echo(f"yaw={box.yaw_deg:.6f} volume={box.volume:.6f}")


@router.command("oracle")
@cloud_options
@click.option("--step", "step_deg", type=float, default=0.25, show_default=True,
              help="Yaw sweep step in degrees, in (0, 5].")
@click.option("--name", default=None, help="Entity name for the emitted fragment.")
@image_options
def oracle(cloud_path, cloud_format, plan_path, entity, mode, out_dir, step_deg, name, config: CliConfig):
    """Brute-force yaw sweep for comparison with 'fit obb'; writes oracle.json."""
    writer = ArtifactWriter(out_dir, "fit oracle", config.to_meta(), {"mode": mode, "step_deg": step_deg})
    cloud = _load_cloud(cloud_path, cloud_format, plan_path, entity, mode, config, writer)
    box = brute_force_obb_oracle(cloud, step_deg)
    writer.write_json("oracle.json", _box_record(name or entity or "object", box, cloud))
    writer.finalize()
    click.echo(f"yaw={box.yaw_deg:.6f} volume={box.volume:.6f}")
