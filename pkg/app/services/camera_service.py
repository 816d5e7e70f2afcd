import math
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import BehindCamera, NonPositiveDepth
from app.core.geometry import convex_hull_2d, points_in_convex_polygon, yaw_rotation
from app.schemas.camera import Box3D, CameraModel, EntityMask2D
from app.schemas.scene import SceneParameters

logger = logging.getLogger(__name__)

# Corner order: bottom face (y = 0) then top face (y = h), each counter-clockwise seen from above.
_UNIT_CORNERS = np.array([
    [-0.5, 0.0, -0.5],
    [0.5, 0.0, -0.5],
    [0.5, 0.0, 0.5],
    [-0.5, 0.0, 0.5],
    [-0.5, 1.0, -0.5],
    [0.5, 1.0, -0.5],
    [0.5, 1.0, 0.5],
    [-0.5, 1.0, 0.5],
])

BOX_EDGES: Tuple[Tuple[int, int], ...] = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def derive_camera(
    params: SceneParameters,
    image_width: int,
    image_height: int,
    distance_factor: Optional[float] = None,
    vfov_deg: Optional[float] = None,
    near: Optional[float] = None,
) -> CameraModel:
    """
    Place the camera on the -Z axis at horizontal distance D = factor * scene_size,
    at height D * tan(pitch), looking down the pitched axis through the origin.
    """
    factor = settings.CAMERA_DISTANCE_FACTOR if distance_factor is None else distance_factor
    fov = settings.CAMERA_VFOV_DEG if vfov_deg is None else vfov_deg
    near_plane = settings.NEAR_PLANE if near is None else near

    distance = factor * params.scene_size
    height = distance * math.tan(math.radians(params.camera_pitch_deg))
    return CameraModel(
        position=(0.0, height, -distance),
        pitch_deg=params.camera_pitch_deg,
        vfov_deg=fov,
        image_width=image_width,
        image_height=image_height,
        near=near_plane,
    )


def world_to_camera(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    """(N, 3) world points -> (N, 3) camera coordinates (right, up, forward)."""
    offset = np.asarray(points, dtype=np.float64) - np.asarray(cam.position)
    return offset @ cam.basis.T


def camera_to_pixels(cam: CameraModel, cam_points: np.ndarray) -> np.ndarray:
    """(N, 3) camera coordinates in front of the camera -> (N, 2) pixel coordinates (u right, v down)."""
    f = cam.focal_px
    cx, cy = cam.principal_point
    u = cx + f * cam_points[:, 0] / cam_points[:, 2]
    v = cy - f * cam_points[:, 1] / cam_points[:, 2]
    return np.stack([u, v], axis=1)


def project_point(cam: CameraModel, p: Sequence[float]) -> Tuple[float, float, float]:
    """
    Project a world point to (u, v, depth); depth is the camera-forward coordinate.

    Raises:
        BehindCamera: when the depth is at or behind the near plane.
    """
    cam_point = world_to_camera(cam, np.asarray(p, dtype=np.float64).reshape(1, 3))
    depth = float(cam_point[0, 2])
    if depth <= cam.near:
        raise BehindCamera(depth)
    u, v = camera_to_pixels(cam, cam_point)[0]
    return float(u), float(v), depth


def unproject_pixels(cam: CameraModel, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Vectorized inverse of the projection: returns (N, 3) world points."""
    f = cam.focal_px
    cx, cy = cam.principal_point
    depth = np.asarray(depth, dtype=np.float64)
    x_cam = (np.asarray(u, dtype=np.float64) - cx) * depth / f
    y_cam = (cy - np.asarray(v, dtype=np.float64)) * depth / f
    cam_points = np.stack([x_cam, y_cam, depth], axis=-1)
    return cam_points @ cam.basis + np.asarray(cam.position)


def unproject_pixel(cam: CameraModel, u: float, v: float, depth: float) -> Tuple[float, float, float]:
    if not depth > 0:
        raise NonPositiveDepth(depth)
    point = unproject_pixels(cam, np.array([u]), np.array([v]), np.array([depth]))[0]
    return float(point[0]), float(point[1]), float(point[2])


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) world corners of a box, bottom face first."""
    local = _UNIT_CORNERS * np.asarray(box.extents)[[0, 2, 1]]
    return local @ yaw_rotation(box.yaw_deg).T + np.asarray(box.bottom_center)


def clip_box_to_near(cam: CameraModel, box: Box3D) -> np.ndarray:
    """
    Camera-space vertices of the box clipped by the near plane: corners in front of
    it plus the points where box edges cross it. Empty when fully behind.
    """
    cam_corners = world_to_camera(cam, box_corners(box))
    depth = cam_corners[:, 2]
    in_front = depth > cam.near
    kept = [cam_corners[i] for i in range(8) if in_front[i]]
    for a, b in BOX_EDGES:
        if in_front[a] != in_front[b]:
            s = (cam.near - depth[a]) / (depth[b] - depth[a])
            point = cam_corners[a] + s * (cam_corners[b] - cam_corners[a])
            point[2] = cam.near
            kept.append(point)
    if not kept:
        return np.empty((0, 3))
    return np.array(kept)


def fill_convex_hull(width: int, height: int, points_px: np.ndarray) -> np.ndarray:
    """Set every pixel whose center lies inside or on the convex hull of ``points_px``."""
    bits = np.zeros((height, width), dtype=bool)
    if len(points_px) < 3:
        return bits
    hull = convex_hull_2d(points_px)
    if len(hull) < 3:
        return bits

    col0 = max(int(math.floor(hull[:, 0].min() - 0.5)), 0)
    col1 = min(int(math.ceil(hull[:, 0].max() - 0.5)), width - 1)
    row0 = max(int(math.floor(hull[:, 1].min() - 0.5)), 0)
    row1 = min(int(math.ceil(hull[:, 1].max() - 0.5)), height - 1)
    if col1 < col0 or row1 < row0:
        return bits

    xs = np.arange(col0, col1 + 1, dtype=np.float64)[None, :] + 0.5
    ys = np.arange(row0, row1 + 1, dtype=np.float64)[:, None] + 0.5
    bits[row0:row1 + 1, col0:col1 + 1] = points_in_convex_polygon(hull, xs, ys)
    return bits


def project_box_mask(cam: CameraModel, box: Box3D) -> EntityMask2D:
    """
    2D mask m_j of a box: filled convex hull of its near-clipped projected corners,
    clipped to the image. A box fully behind the near plane yields an empty mask
    with ``behind_camera`` set.
    """
    clipped = clip_box_to_near(cam, box)
    if len(clipped) == 0:
        logger.warning(f"Box at {box.bottom_center} lies fully behind the camera; mask is empty")
        bits = np.zeros((cam.image_height, cam.image_width), dtype=bool)
        return EntityMask2D(width=cam.image_width, height=cam.image_height, bits=bits, behind_camera=True)

    bits = fill_convex_hull(cam.image_width, cam.image_height, camera_to_pixels(cam, clipped))
    return EntityMask2D(width=cam.image_width, height=cam.image_height, bits=bits)


# Mask codecs

def encode_mask_pbm(mask: EntityMask2D) -> bytes:
    """Binary PBM (P4); set pixels are written as 1 (black)."""
    header = f"P4\n{mask.width} {mask.height}\n".encode("ascii")
    return header + np.packbits(mask.bits, axis=1).tobytes()


def encode_mask_rle(bits: np.ndarray) -> List[int]:
    """Run lengths over the row-major flattening, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(bits, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def decode_mask_rle(runs: Sequence[int], size: int) -> np.ndarray:
    flat = np.zeros(size, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != size:
        raise ValueError(f"run lengths cover {pos} cells, expected {size}")
    return flat


def mask_to_dict(mask: EntityMask2D) -> Dict:
    return {"width": mask.width, "height": mask.height, "rle": encode_mask_rle(mask.bits)}


def mask_from_dict(obj: Dict) -> EntityMask2D:
    width, height = int(obj["width"]), int(obj["height"])
    bits = decode_mask_rle(obj["rle"], width * height).reshape(height, width)
    return EntityMask2D(width=width, height=height, bits=bits)
