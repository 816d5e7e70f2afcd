import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from app.core.exceptions import EmptySelection, InvalidStep, ShapeMismatch
from app.core.geometry import convex_hull_2d, rotate_about_y, yaw_rotation
from app.schemas.camera import CameraModel, EntityMask2D
from app.schemas.depth import DepthMap
from app.schemas.obb import CloudFrame, OrientedBox3D, PointCloud
from app.services.camera_service import unproject_pixels

logger = logging.getLogger(__name__)

_AREA_RTOL = 1e-12


def backproject_masked_depth(
    cam: CameraModel,
    depth: DepthMap,
    mask: EntityMask2D,
    mode: CloudFrame = CloudFrame.METRIC,
) -> PointCloud:
    """
    Turn the finite-depth pixels selected by ``mask`` into a point cloud.

    Metric mode unprojects each pixel center into world coordinates. Pixel mode
    keeps (pixel-center x, pixel-center y, depth) untransformed.

    Raises:
        ShapeMismatch: if camera, depth and mask dimensions disagree.
        EmptySelection: if no selected pixel carries a finite depth.
    """
    dims = {(cam.image_width, cam.image_height), (depth.width, depth.height), (mask.width, mask.height)}
    if len(dims) != 1:
        raise ShapeMismatch(f"camera, depth and mask dimensions differ: {sorted(dims)}")

    selected = mask.bits & np.isfinite(depth.values)
    rows, cols = np.nonzero(selected)
    if len(rows) == 0:
        raise EmptySelection()

    u = cols.astype(np.float64) + 0.5
    v = rows.astype(np.float64) + 0.5
    d = depth.values[rows, cols].astype(np.float64)
    if mode == CloudFrame.PIXEL:
        points = np.stack([u, v, d], axis=1)
    else:
        points = unproject_pixels(cam, u, v, d)
    logger.debug(f"Back-projected {len(points)} pixels in {mode.value} mode")
    return PointCloud(points=points, frame=mode)


def convex_hull_xz(cloud: PointCloud) -> np.ndarray:
    """Counter-clockwise hull of the cloud projected onto the XZ plane, as (M, 2) [x, z] rows."""
    return convex_hull_2d(cloud.points[:, [0, 2]])


def _canonical_yaw(yaw_deg: float) -> float:
    yaw = float(yaw_deg) % 90.0
    if yaw >= 90.0:
        yaw -= 90.0
    return yaw


def _box_at_yaw(points: np.ndarray, yaw_deg: float) -> OrientedBox3D:
    """Tightest box with the given yaw: extents measured in the box frame, Y extent from min/max y."""
    local = rotate_about_y(points, -yaw_deg)
    lo, hi = local.min(axis=0), local.max(axis=0)
    local_center = (lo + hi) / 2.0
    center = yaw_rotation(yaw_deg) @ local_center
    half = (hi - lo) / 2.0
    return OrientedBox3D(
        center=(float(center[0]), float(center[1]), float(center[2])),
        half_extents=(float(half[0]), float(half[1]), float(half[2])),
        yaw_deg=yaw_deg,
    )


def _xz_area(points_xz: np.ndarray, yaw_deg: float) -> float:
    theta = np.radians(yaw_deg)
    c, s = np.cos(theta), np.sin(theta)
    lx = c * points_xz[:, 0] - s * points_xz[:, 1]
    lz = s * points_xz[:, 0] + c * points_xz[:, 1]
    return float((lx.max() - lx.min()) * (lz.max() - lz.min()))


def fit_min_volume_obb(cloud: PointCloud) -> OrientedBox3D:
    """
    Gravity-aligned minimum-volume box.

    The minimum-area rectangle around the XZ hull has a side collinear with a
    hull edge, so every edge direction is tried; the Y extent is the cloud's
    [min y, max y] and does not depend on yaw. Ties go to the smaller yaw.
    """
    points = cloud.points
    hull = convex_hull_xz(cloud)
    if len(hull) < 2:
        return _box_at_yaw(points, 0.0)

    best_yaw, best_area = 0.0, np.inf
    n = len(hull)
    edges = 1 if n == 2 else n
    for i in range(edges):
        dx, dz = hull[(i + 1) % n] - hull[i]
        phi = np.degrees(np.arctan2(dz, dx))
        yaw = _canonical_yaw(-phi)
        area = _xz_area(hull, yaw)
        tol = _AREA_RTOL * max(best_area if np.isfinite(best_area) else 0.0, area)
        if area < best_area - tol or (abs(area - best_area) <= tol and yaw < best_yaw):
            best_yaw, best_area = yaw, area

    box = _box_at_yaw(points, best_yaw)
    logger.debug(f"Fitted box yaw={best_yaw:.6f} volume={box.volume:.6f} from {len(points)} points")
    return box


def brute_force_obb_oracle(cloud: PointCloud, step_deg: float) -> OrientedBox3D:
    """
    Sweep yaw over [0, 90) at ``step_deg`` and keep the smallest axis-aligned
    rectangle of the rotated cloud; the first (smallest) yaw wins ties.
    """
    if not 0.0 < step_deg <= 5.0:
        raise InvalidStep(f"step_deg must be in (0, 5], got {step_deg}")

    points = cloud.points
    yaws = np.arange(0.0, 90.0, step_deg)
    theta = np.radians(yaws)[:, None]
    x, z = points[:, 0][None, :], points[:, 2][None, :]
    lx = np.cos(theta) * x - np.sin(theta) * z
    lz = np.sin(theta) * x + np.cos(theta) * z
    areas = (lx.max(axis=1) - lx.min(axis=1)) * (lz.max(axis=1) - lz.min(axis=1))
    return _box_at_yaw(points, float(yaws[int(np.argmin(areas))]))


def obb_to_fragment(name: str, box: OrientedBox3D) -> Dict[str, Any]:
    """Scene-plan entity for a fitted box: bottom-center position and [X-length, Z-width, Y-height] size."""
    return {
        "entity_name": name,
        "size": [float(v) for v in box.size],
        "position": [float(v) for v in box.bottom_center],
        "yaw": float(box.yaw_deg),
    }


# Point-cloud files

def write_xyz(cloud: PointCloud, path: Union[str, Path]) -> None:
    lines = [" ".join(f"{value:.17g}" for value in point) for point in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_xyz(path: Union[str, Path], frame: CloudFrame = CloudFrame.METRIC) -> PointCloud:
    points = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if points.size == 0:
        points = points.reshape(0, 3)
    return PointCloud(points=points, frame=frame)


def write_f32(cloud: PointCloud, path: Union[str, Path]) -> None:
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


def read_f32(path: Union[str, Path], frame: CloudFrame = CloudFrame.METRIC) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 12:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of 12 bytes")
    points = np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)
    return PointCloud(points=points, frame=frame)
