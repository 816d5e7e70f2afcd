from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, model_validator

Vec3 = Tuple[float, float, float]


class CloudFrame(str, Enum):
    METRIC = "metric"  # world coordinates in meters
    PIXEL = "pixel"    # (pixel-x, pixel-y, depth), untransformed


class PointCloud(BaseModel):
    points: np.ndarray  # (N, 3) float64
    frame: CloudFrame = CloudFrame.METRIC

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_points(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("points must be finite")
        return self

    def __len__(self) -> int:
        return len(self.points)


class OrientedBox3D(BaseModel):
    """Gravity-aligned box: world = center + R_y(yaw) @ local, local in [-half, +half]."""
    center: Vec3
    half_extents: Vec3
    yaw_deg: float

    class Config:
        frozen = True

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    @property
    def bottom_center(self) -> Vec3:
        x, y, z = self.center
        return (x, y - self.half_extents[1], z)

    @property
    def size(self) -> Vec3:
        """[X-length, Z-width, Y-height] in the box's own frame, matching scene-plan order."""
        hx, hy, hz = self.half_extents
        return (2.0 * hx, 2.0 * hz, 2.0 * hy)
