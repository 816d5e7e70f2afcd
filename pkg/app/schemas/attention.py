from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from app.core.exceptions import IndivisibleDims, LengthMismatch


class SegmentKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    DEPTH = "depth"
    IMAGE = "image"


class BlockRule(str, Enum):
    ALLOWED = "allowed"
    BLOCKED = "blocked"
    REGION = "region"  # gated per image token by a bitset


class Segment(BaseModel):
    name: str
    kind: SegmentKind
    start: int
    length: int
    entity_index: Optional[int] = None

    class Config:
        frozen = True

    @property
    def stop(self) -> int:
        return self.start + self.length


class TokenLayout(BaseModel):
    """Token sequence [P, P_1..P_k, C_D, X] with the image segment laid out row-major over patches."""
    n_global: int
    n_local: Tuple[int, ...]
    n_depth: int
    image_width: int
    image_height: int
    patch_size: int

    class Config:
        frozen = True

    @model_validator(mode="after")
    def _check_layout(self):
        if self.patch_size < 1:
            raise IndivisibleDims(f"patch size must be positive, got {self.patch_size}")
        if self.image_width % self.patch_size or self.image_height % self.patch_size:
            raise IndivisibleDims(
                f"image {self.image_width}x{self.image_height} is not divisible by patch size {self.patch_size}"
            )
        lengths = [self.n_global, self.n_depth, *self.n_local]
        if min(lengths) < 1:
            raise LengthMismatch(f"every segment length must be >= 1, got {lengths}")
        return self

    @property
    def k(self) -> int:
        return len(self.n_local)

    @property
    def grid_width(self) -> int:
        return self.image_width // self.patch_size

    @property
    def grid_height(self) -> int:
        return self.image_height // self.patch_size

    @property
    def n_image(self) -> int:
        return self.grid_width * self.grid_height

    @property
    def total(self) -> int:
        return self.n_global + sum(self.n_local) + self.n_depth + self.n_image

    def segments(self) -> List[Segment]:
        result = [Segment(name="P", kind=SegmentKind.GLOBAL, start=0, length=self.n_global)]
        offset = self.n_global
        for j, length in enumerate(self.n_local):
            result.append(Segment(name=f"P_{j + 1}", kind=SegmentKind.LOCAL, start=offset, length=length, entity_index=j))
            offset += length
        result.append(Segment(name="C_D", kind=SegmentKind.DEPTH, start=offset, length=self.n_depth))
        offset += self.n_depth
        result.append(Segment(name="X", kind=SegmentKind.IMAGE, start=offset, length=self.n_image))
        return result


class AttentionMask(BaseModel):
    """
    Block-structured binary attention mask.

    ``rules`` maps every ordered segment-name pair to a BlockRule. REGION blocks
    between a local prompt and the image are gated by that entity's bitset; a
    REGION block between the depth segment and the image is gated by the union of
    all entity bitsets. ``overrides`` pins individual cells (row, col, value) and
    exists so stored masks can carry edits that the audit must catch.
    """
    layout: TokenLayout
    entity_bitsets: np.ndarray
    rules: Dict[Tuple[str, str], BlockRule]
    global_isolated: bool = True
    depth_global: bool = True
    overrides: Tuple[Tuple[int, int, bool], ...] = ()

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_bitsets(self):
        expected = (self.layout.k, self.layout.n_image)
        if self.entity_bitsets.shape != expected or self.entity_bitsets.dtype != np.bool_:
            raise LengthMismatch(f"entity bitsets must be boolean with shape {expected}, got {self.entity_bitsets.shape}")
        return self

    def region_vector(self, segment: Segment) -> np.ndarray:
        if segment.kind == SegmentKind.LOCAL:
            return self.entity_bitsets[segment.entity_index]
        if self.layout.k == 0:
            return np.zeros(self.layout.n_image, dtype=bool)
        return self.entity_bitsets.any(axis=0)

    def block(self, query: Segment, key: Segment) -> np.ndarray:
        """Dense (query.length, key.length) block, overrides applied."""
        rule = self.rules[(query.name, key.name)]
        if rule == BlockRule.ALLOWED:
            out = np.ones((query.length, key.length), dtype=bool)
        elif rule == BlockRule.BLOCKED:
            out = np.zeros((query.length, key.length), dtype=bool)
        elif query.kind == SegmentKind.IMAGE:
            out = np.repeat(self.region_vector(key)[:, None], key.length, axis=1)
        else:
            out = np.repeat(self.region_vector(query)[None, :], query.length, axis=0)
        for row, col, value in self.overrides:
            if query.start <= row < query.stop and key.start <= col < key.stop:
                out[row - query.start, col - key.start] = value
        return out

    def to_dense(self) -> np.ndarray:
        """Materialize the full |S| x |S| matrix; intended for small layouts."""
        segments = self.layout.segments()
        dense = np.zeros((self.layout.total, self.layout.total), dtype=bool)
        for query in segments:
            for key in segments:
                dense[query.start:query.stop, key.start:key.stop] = self.block(query, key)
        return dense

    def with_overrides(self, cells: Dict[Tuple[int, int], bool]) -> "AttentionMask":
        pinned = dict(((r, c), v) for r, c, v in self.overrides)
        pinned.update(cells)
        return self.model_copy(update={"overrides": tuple((r, c, v) for (r, c), v in sorted(pinned.items()))})


class MaskViolation(BaseModel):
    row: int
    col: int
    query_segment: str
    key_segment: str
    rule: str
    expected: bool
    actual: bool

    class Config:
        frozen = True


class AuditReport(BaseModel):
    violations: Tuple[MaskViolation, ...] = ()

    class Config:
        frozen = True

    @property
    def is_valid(self) -> bool:
        return not self.violations
