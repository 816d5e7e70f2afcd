import numpy as np
from pydantic import BaseModel, model_validator


class DepthMap(BaseModel):
    """Camera-forward depth in meters, float32, shape (height, width); background is +inf."""
    width: int
    height: int
    values: np.ndarray

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_values(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError(f"depth shape {self.values.shape} does not match {self.height}x{self.width}")
        if self.values.dtype != np.float32:
            raise ValueError("depth values must be float32")
        return self

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(width=width, height=height, values=np.full((height, width), np.inf, dtype=np.float32))
