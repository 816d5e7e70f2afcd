import logging
from typing import Protocol

import numpy as np

from app.schemas.refinement import ConditionSet

logger = logging.getLogger(__name__)


class DenoiserPort(Protocol):
    def step(self, z_t: np.ndarray, t: float, conditions: ConditionSet) -> np.ndarray:
        """Velocity v_t for latent ``z_t`` at time ``t`` under ``conditions``."""
        ...


class ToyDenoiser:
    """
    Denoiser whose clean-image estimate is exactly the rendered layout preview.

    Returns v = (z_t - x*) / t so that z_t - t * v = x*; at t = 0 the velocity is
    zero. Useful for driving the loop end to end without a model.
    """

    def __init__(self):
        self.calls = 0

    def step(self, z_t: np.ndarray, t: float, conditions: ConditionSet) -> np.ndarray:
        self.calls += 1
        target = conditions.preview
        if target.shape != z_t.shape:
            raise ValueError(f"latent shape {z_t.shape} does not match condition preview {target.shape}")
        if t <= 0.0:
            return np.zeros_like(z_t)
        return (z_t - target) / t
