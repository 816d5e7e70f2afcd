import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, model_validator

Vec3 = Tuple[float, float, float]


class CameraModel(BaseModel):
    """Pitched pinhole camera with zero roll; the optical axis passes through the world origin."""
    position: Vec3
    pitch_deg: float
    vfov_deg: float
    image_width: int
    image_height: int
    near: float = 0.05

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_ranges(self):
        if not 10.0 < self.vfov_deg < 120.0:
            raise ValueError(f"vfov_deg must be in (10, 120), got {self.vfov_deg}")
        if self.image_width < 16 or self.image_height < 16:
            raise ValueError("image dimensions must be at least 16 pixels")
        return self

    @property
    def focal_px(self) -> float:
        return (self.image_height / 2.0) / math.tan(math.radians(self.vfov_deg) / 2.0)

    @property
    def principal_point(self) -> Tuple[float, float]:
        return self.image_width / 2.0, self.image_height / 2.0

    @property
    def basis(self) -> np.ndarray:
        """Rows are the camera right, up and forward axes in world coordinates."""
        theta = math.radians(self.pitch_deg)
        s, c = math.sin(theta), math.cos(theta)
        return np.array([
            [1.0, 0.0, 0.0],
            [0.0, c, s],
            [0.0, -s, c],
        ])

    @property
    def distance_to_origin(self) -> float:
        return float(np.linalg.norm(self.position))


class Box3D(BaseModel):
    """Box resting on its bottom face: extents are [X-length, Z-width, Y-height]."""
    bottom_center: Vec3
    extents: Vec3
    yaw_deg: float = 0.0

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_extents(self):
        if min(self.extents) <= 0:
            raise ValueError(f"box extents must be positive, got {self.extents}")
        return self

    @property
    def center(self) -> np.ndarray:
        x, y, z = self.bottom_center
        return np.array([x, y + self.extents[2] / 2.0, z])


class EntityMask2D(BaseModel):
    """Row-major binary mask, ``bits`` has shape (height, width)."""
    width: int
    height: int
    bits: np.ndarray
    behind_camera: bool = False

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_shape(self):
        if self.bits.shape != (self.height, self.width):
            raise ValueError(f"mask bits shape {self.bits.shape} does not match {self.height}x{self.width}")
        if self.bits.dtype != np.bool_:
            raise ValueError("mask bits must be boolean")
        return self

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def bbox(self) -> Tuple[float, float, float, float]:
        """Pixel-edge bounding box (x1, y1, x2, y2) of the set pixels."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        if len(rows) == 0:
            raise ValueError("empty mask has no bounding box")
        return float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1)
