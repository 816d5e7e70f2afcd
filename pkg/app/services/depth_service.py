import math
import struct
import logging
from typing import Iterable, List, Tuple

import numpy as np

from app.core.exceptions import InvalidRange
from app.schemas.camera import Box3D, CameraModel
from app.schemas.depth import DepthMap
from app.schemas.scene import SceneParameters
from app.services.camera_service import box_corners, camera_to_pixels, world_to_camera

logger = logging.getLogger(__name__)

DPF_MAGIC = b"DPF1"
_DPF_HEADER = struct.Struct("<IIff")

# Two triangles per face, indices into box_corners() order.
BOX_TRIANGLES: Tuple[Tuple[int, int, int], ...] = (
    (0, 1, 2), (0, 2, 3),  # bottom
    (4, 6, 5), (4, 7, 6),  # top
    (0, 4, 5), (0, 5, 1),
    (1, 5, 6), (1, 6, 2),
    (2, 6, 7), (2, 7, 3),
    (3, 7, 4), (3, 4, 0),
)

_EDGE_EPS = 1e-9


def clip_polygon_near(polygon: List[np.ndarray], near: float) -> List[np.ndarray]:
    """Sutherland-Hodgman clip of a camera-space polygon against the plane z = near."""
    out: List[np.ndarray] = []
    n = len(polygon)
    for i in range(n):
        cur = polygon[i]
        nxt = polygon[(i + 1) % n]
        cur_in = cur[2] > near
        nxt_in = nxt[2] > near
        if cur_in:
            out.append(cur)
        if cur_in != nxt_in:
            s = (near - cur[2]) / (nxt[2] - cur[2])
            point = cur + s * (nxt - cur)
            point[2] = near
            out.append(point)
    return out


def _rasterize_triangle(cam: CameraModel, tri_cam: np.ndarray, zbuf: np.ndarray) -> None:
    """Write the perspective-correct depth of one in-front triangle into ``zbuf`` (keeping minima)."""
    px = camera_to_pixels(cam, tri_cam)
    inv_z = 1.0 / tri_cam[:, 2]
    (x0, y0), (x1, y1), (x2, y2) = px

    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if abs(area) < 1e-12:
        return

    height, width = zbuf.shape
    col0 = max(int(math.floor(px[:, 0].min() - 0.5)), 0)
    col1 = min(int(math.ceil(px[:, 0].max() - 0.5)), width - 1)
    row0 = max(int(math.floor(px[:, 1].min() - 0.5)), 0)
    row1 = min(int(math.ceil(px[:, 1].max() - 0.5)), height - 1)
    if col1 < col0 or row1 < row0:
        return

    xs = np.arange(col0, col1 + 1, dtype=np.float64)[None, :] + 0.5
    ys = np.arange(row0, row1 + 1, dtype=np.float64)[:, None] + 0.5

    # barycentric weights from edge functions, normalized so they sum to 1
    w0 = ((x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)) / area
    w1 = ((x0 - x2) * (ys - y2) - (y0 - y2) * (xs - x2)) / area
    w2 = 1.0 - w0 - w1
    inside = (w0 >= -_EDGE_EPS) & (w1 >= -_EDGE_EPS) & (w2 >= -_EDGE_EPS)
    if not inside.any():
        return

    with np.errstate(divide="ignore", invalid="ignore"):
        depth = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2])
    window = zbuf[row0:row1 + 1, col0:col1 + 1]
    np.minimum(window, np.where(inside, depth, np.inf), out=window)


def render_depth(cam: CameraModel, boxes: Iterable[Box3D]) -> DepthMap:
    """
    Z-buffer render of box surfaces into a DepthMap of camera-forward depth.

    Every face is split into two triangles, clipped against the near plane in
    camera space and rasterized at pixel centers with 1/z interpolated linearly in
    screen space. The buffer keeps the per-pixel minimum, so box order does not
    affect the result.
    """
    zbuf = np.full((cam.image_height, cam.image_width), np.inf, dtype=np.float64)
    count = 0
    for box in boxes:
        count += 1
        corners = world_to_camera(cam, box_corners(box))
        for a, b, c in BOX_TRIANGLES:
            polygon = clip_polygon_near([corners[a], corners[b], corners[c]], cam.near)
            for i in range(1, len(polygon) - 1):
                _rasterize_triangle(cam, np.array([polygon[0], polygon[i], polygon[i + 1]]), zbuf)

    covered = int(np.isfinite(zbuf).sum())
    logger.debug(f"Rendered {count} boxes at {cam.image_width}x{cam.image_height}, {covered} pixels covered")
    return DepthMap(width=cam.image_width, height=cam.image_height, values=zbuf.astype(np.float32))


def default_depth_range(cam: CameraModel, params: SceneParameters) -> Tuple[float, float]:
    """Preview range: near = 0.1 * scene_size, far = camera-to-origin distance + scene_size."""
    return 0.1 * params.scene_size, cam.distance_to_origin + params.scene_size


def _check_range(near: float, far: float) -> None:
    if not (near > 0 and far > 0 and near < far and math.isfinite(far)):
        raise InvalidRange(near, far)


def encode_depth_raw(depth: DepthMap, near: float, far: float) -> bytes:
    _check_range(near, far)
    finite = np.isfinite(depth.values)
    clashing = int(np.count_nonzero(depth.values[finite] >= np.float32(far)))
    if clashing:
        logger.warning(f"{clashing} finite depths are at or beyond far={far}; values equal to far decode as background")
    values = np.where(finite, depth.values, np.float32(far)).astype("<f4")
    return DPF_MAGIC + _DPF_HEADER.pack(depth.width, depth.height, near, far) + values.tobytes()


def depth_to_gray(depth: DepthMap, near: float, far: float) -> np.ndarray:
    """16-bit gray levels, nearer is brighter; the background maps to 0."""
    _check_range(near, far)
    d = depth.values.astype(np.float64)
    with np.errstate(invalid="ignore"):
        scaled = np.clip((far - d) / (far - near), 0.0, 1.0)
    scaled = np.nan_to_num(scaled, nan=0.0)
    return np.floor(65535.0 * scaled + 0.5).astype(np.uint16)


def encode_depth_pgm(depth: DepthMap, near: float, far: float) -> bytes:
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    return header + depth_to_gray(depth, near, far).astype(">u2").tobytes()


def encode_depth(depth: DepthMap, near: float, far: float) -> Tuple[bytes, bytes]:
    """
    Encode a depth map to (raw DPF1 bytes, 16-bit PGM preview bytes).

    Raises:
        InvalidRange: unless 0 < near < far.
    """
    return encode_depth_raw(depth, near, far), encode_depth_pgm(depth, near, far)


def decode_depth(raw: bytes) -> DepthMap:
    """Inverse of the raw path; stored values equal to ``far`` come back as the +inf background."""
    if raw[:4] != DPF_MAGIC:
        raise ValueError("not a DPF1 depth file")
    width, height, _near, far = _DPF_HEADER.unpack_from(raw, 4)
    offset = 4 + _DPF_HEADER.size
    expected = offset + 4 * width * height
    if len(raw) != expected:
        raise ValueError(f"DPF1 payload has {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(height, width).astype(np.float32)
    values = np.where(values == np.float32(far), np.float32(np.inf), values).astype(np.float32)
    return DepthMap(width=width, height=height, values=values)
