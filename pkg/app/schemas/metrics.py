from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class Relation(str, Enum):
    FRONT = "front"
    BEHIND = "behind"
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"
    BACK_LEFT = "back_left"
    BACK_RIGHT = "back_right"


class Axis(str, Enum):
    HORIZONTAL = "horizontal"
    DEPTH = "depth"


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BACK = "back"


class RelationComponent(BaseModel):
    axis: Axis
    direction: Direction

    class Config:
        frozen = True

    def __str__(self) -> str:
        return f"{self.axis.value}:{self.direction.value}"


class DetectionRecord(BaseModel):
    label: str
    bbox: Tuple[float, float, float, float]  # x1, y1, x2, y2 in pixels
    depth: float  # smaller = closer to the camera
    score: float = 1.0

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_record(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"bbox must satisfy x1<x2 and y1<y2, got {self.bbox}")
        if self.depth != self.depth or self.depth in (float("inf"), float("-inf")):
            raise ValueError("depth must be finite")
        return self

    @property
    def center_x(self) -> float:
        return (self.bbox[0] + self.bbox[2]) / 2.0

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]


class RelationSpec(BaseModel):
    subject: str
    object: str
    relation: Relation
    scene: str = ""

    class Config:
        frozen = True


class BenchPrompt(BaseModel):
    prompt: str
    specs: List[RelationSpec]
    scene: str
    kind: str = "basic"  # basic | multi

    class Config:
        frozen = True


class ObjectCategory(BaseModel):
    name: str
    scenes: List[str]  # ["all"] -> valid in every scene
    objects: List[str]

    class Config:
        frozen = True

    @property
    def in_all_scenes(self) -> bool:
        return self.scenes == ["all"]


class CategoryTable(BaseModel):
    version: str
    categories: List[ObjectCategory]

    class Config:
        frozen = True

    @property
    def scenes(self) -> List[str]:
        ordered: List[str] = []
        for category in self.categories:
            if category.in_all_scenes:
                continue
            for scene in category.scenes:
                if scene not in ordered:
                    ordered.append(scene)
        return ordered

    def objects_for_scene(self, scene: str) -> List[str]:
        objects: List[str] = []
        for category in self.categories:
            if category.in_all_scenes or scene in category.scenes:
                objects.extend(o for o in category.objects if o not in objects)
        return objects


class ConsistencySample(BaseModel):
    d1: float
    d2: float
    score: float

    class Config:
        frozen = True


class ConsistencyReport(BaseModel):
    samples: List[ConsistencySample] = Field(default_factory=list)
    subject: Optional[str] = None
    reference: Optional[str] = None

    class Config:
        frozen = True

    @property
    def mean_score(self) -> float:
        if not self.samples:
            return 0.0
        return sum(s.score for s in self.samples) / len(self.samples)
