from pydantic import BaseModel, Field
from typing import List, Optional, Tuple
from enum import Enum

Vec3 = Tuple[float, float, float]


class SceneParameters(BaseModel):
    """Global scene scale and camera pitch (positive pitch looks downward)."""
    scene_size: float
    camera_pitch_deg: float

    class Config:
        frozen = True


class EntitySpec(BaseModel):
    """
    One planned entity.

    ``size`` is [X-length, Z-width, Y-height]; ``position`` is the bottom-center
    of the box, so the box spans Y in [y, y + height].
    """
    entity_name: str
    local_prompt: str
    size: Vec3
    position: Vec3
    yaw_deg: float = 0.0

    class Config:
        frozen = True


class ScenePlan(BaseModel):
    global_prompt: str = ""
    params: SceneParameters
    entities: Tuple[EntitySpec, ...]

    class Config:
        frozen = True

    @property
    def entity_names(self) -> List[str]:
        return [entity.entity_name for entity in self.entities]

    def entity(self, name: str) -> Optional[EntitySpec]:
        for entity in self.entities:
            if entity.entity_name == name:
                return entity
        return None


class LayoutFragment(BaseModel):
    """Revised layout proposed by the planner: a subset of entities, or the full layout."""
    params: Optional[SceneParameters] = None
    entities: Tuple[EntitySpec, ...] = ()

    class Config:
        frozen = True

    @property
    def is_empty(self) -> bool:
        return self.params is None and not self.entities


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class Finding(BaseModel):
    severity: Severity
    code: str
    message: str
    entity_name: Optional[str] = None

    class Config:
        frozen = True


class ValidationReport(BaseModel):
    errors: Tuple[Finding, ...] = ()
    warnings: Tuple[Finding, ...] = ()

    class Config:
        frozen = True

    @property
    def usable(self) -> bool:
        """A plan with zero errors is usable; warnings are planner guidance only."""
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "usable": self.usable,
            "errors": [f.model_dump(mode="json") for f in self.errors],
            "warnings": [f.model_dump(mode="json") for f in self.warnings],
        }


class FindingList(BaseModel):
    """Helper used while collecting findings before freezing them into a report."""
    items: List[Finding] = Field(default_factory=list)

    def error(self, code: str, message: str, entity_name: Optional[str] = None) -> None:
        self.items.append(Finding(severity=Severity.ERROR, code=code, message=message, entity_name=entity_name))

    def warning(self, code: str, message: str, entity_name: Optional[str] = None) -> None:
        self.items.append(Finding(severity=Severity.WARNING, code=code, message=message, entity_name=entity_name))

    def report(self) -> ValidationReport:
        return ValidationReport(
            errors=tuple(f for f in self.items if f.severity == Severity.ERROR),
            warnings=tuple(f for f in self.items if f.severity == Severity.WARNING),
        )
