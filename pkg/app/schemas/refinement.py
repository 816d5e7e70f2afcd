import io
import base64
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, model_validator

from app.schemas.attention import AttentionMask
from app.schemas.camera import CameraModel, EntityMask2D
from app.schemas.depth import DepthMap
from app.schemas.scene import LayoutFragment, ScenePlan


class LoopConfig(BaseModel):
    num_steps: int = 20
    eval_schedule: Optional[Tuple[int, ...]] = None  # None -> every step until stable
    max_refinements: int = 5
    stability_window: int = 2
    seed: int = 0
    image_width: int = 128
    image_height: int = 128

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_config(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be >= 0")
        if self.stability_window < 1:
            raise ValueError("stability_window must be >= 1")
        if self.eval_schedule is not None:
            bad = [s for s in self.eval_schedule if not 0 <= s < self.num_steps]
            if bad:
                raise ValueError(f"eval_schedule steps {bad} outside [0, {self.num_steps})")
        return self

    def schedule(self) -> List[int]:
        if self.eval_schedule is None:
            return list(range(self.num_steps))
        return sorted(set(self.eval_schedule))

    def timesteps(self) -> List[float]:
        """t values from 1 down to 1/num_steps; the final update lands on t = 0."""
        return [1.0 - i / self.num_steps for i in range(self.num_steps)]


class PlannerVerdict(BaseModel):
    isaligned: bool
    optimized_layout: Optional[LayoutFragment] = None
    rationale: str = ""

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_layout(self):
        if self.isaligned and self.optimized_layout is not None:
            raise ValueError("an aligned verdict carries no layout")
        if not self.isaligned and self.optimized_layout is None:
            raise ValueError("a misaligned verdict must carry an optimized layout")
        return self


class TraceEvent(BaseModel):
    step: int
    t: float
    artifact_id: str
    isaligned: Optional[bool] = None
    rationale: Optional[str] = None
    revision: Optional[int] = None
    revised_layout: Optional[Dict[str, Any]] = None
    rerendered: bool = False

    class Config:
        frozen = True


class RefinementTrace(BaseModel):
    prompt: str
    seed: int
    num_steps: int
    initial_plan: ScenePlan
    final_plan: ScenePlan
    events: Tuple[TraceEvent, ...] = ()
    denoiser_calls: int = 0

    class Config:
        frozen = True

    @property
    def revisions(self) -> int:
        return sum(1 for e in self.events if e.revision is not None)

    @property
    def rerenders(self) -> int:
        return sum(1 for e in self.events if e.rerendered)

    @property
    def verdicts(self) -> int:
        return sum(1 for e in self.events if e.isaligned is not None)


class StepState(BaseModel):
    """Mutable bookkeeping of the loop's evaluation state machine."""
    aligned_streak: int = 0
    revisions: int = 0
    evaluating: bool = True
    events: List[TraceEvent] = Field(default_factory=list)


class ImageArtifact(BaseModel):
    """A predicted-clean image handed to the planner, identified by a content hash."""
    artifact_id: str
    pixels: np.ndarray  # (H, W) float, nominally in [0, 1]
    step: int = -1

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    def to_png(self) -> bytes:
        gray = np.clip(np.nan_to_num(self.pixels, nan=0.0), 0.0, 1.0)
        image = Image.fromarray(np.round(gray * 255.0).astype(np.uint8))
        buffer = io.BytesIO()
        image.save(buffer, format="PNG")
        return buffer.getvalue()

    def to_base64(self) -> str:
        return base64.b64encode(self.to_png()).decode("ascii")


class ConditionSet(BaseModel):
    """Everything rendered from one scene plan that guides a denoising step."""
    camera: CameraModel
    depth: DepthMap
    masks: Tuple[EntityMask2D, ...]
    attention: AttentionMask
    preview: np.ndarray  # depth preview scaled to [0, 1], nearer is brighter

    class Config:
        frozen = True
        arbitrary_types_allowed = True
