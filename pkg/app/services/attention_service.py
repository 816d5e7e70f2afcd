import math
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import IndivisibleDims, LengthMismatch, ShapeMismatch
from app.schemas.attention import (
    AttentionMask,
    AuditReport,
    BlockRule,
    MaskViolation,
    Segment,
    SegmentKind,
    TokenLayout,
)
from app.schemas.camera import EntityMask2D
from app.schemas.scene import ScenePlan
from app.services.camera_service import decode_mask_rle, encode_mask_rle

logger = logging.getLogger(__name__)

_CONDITION_KINDS = (SegmentKind.LOCAL, SegmentKind.DEPTH)


def patchify_mask(mask: EntityMask2D, patch_size: int, min_coverage: Optional[float] = None) -> np.ndarray:
    """
    Collapse a pixel mask to one bit per image token, row-major over patches.

    With ``min_coverage`` 0 a token is set when its patch holds any set pixel;
    otherwise the set fraction of the patch must reach ``min_coverage``.
    """
    coverage = settings.PATCHIFY_MIN_COVERAGE if min_coverage is None else min_coverage
    if patch_size < 1 or mask.width % patch_size or mask.height % patch_size:
        raise IndivisibleDims(f"mask {mask.width}x{mask.height} is not divisible by patch size {patch_size}")

    grid_h, grid_w = mask.height // patch_size, mask.width // patch_size
    counts = mask.bits.reshape(grid_h, patch_size, grid_w, patch_size).sum(axis=(1, 3))
    if coverage <= 0:
        tokens = counts > 0
    else:
        tokens = counts / float(patch_size * patch_size) >= coverage
    return tokens.ravel()


def layout_for_plan(
    plan: ScenePlan,
    image_width: Optional[int] = None,
    image_height: Optional[int] = None,
    patch_size: Optional[int] = None,
    n_global: Optional[int] = None,
    n_local: Optional[int] = None,
    n_depth: Optional[int] = None,
) -> TokenLayout:
    """Token layout for a plan: one local segment per entity, depth defaulting to the image token count."""
    width = image_width or settings.IMAGE_WIDTH
    height = image_height or settings.IMAGE_HEIGHT
    patch = patch_size or settings.PATCH_SIZE
    if patch < 1 or width % patch or height % patch:
        raise IndivisibleDims(f"image {width}x{height} is not divisible by patch size {patch}")

    if n_depth is None:
        n_depth = settings.TOKENS_DEPTH or (width // patch) * (height // patch)
    local = n_local or settings.TOKENS_LOCAL
    return TokenLayout(
        n_global=n_global or settings.TOKENS_GLOBAL,
        n_local=tuple(local for _ in plan.entities),
        n_depth=n_depth,
        image_width=width,
        image_height=height,
        patch_size=patch,
    )


def _pair_rule(query: Segment, key: Segment, global_isolated: bool, depth_global: bool) -> BlockRule:
    if query.name == key.name:
        return BlockRule.ALLOWED
    kinds = {query.kind, key.kind}
    if query.kind in _CONDITION_KINDS and key.kind in _CONDITION_KINDS:
        return BlockRule.BLOCKED
    if SegmentKind.GLOBAL in kinds and kinds & set(_CONDITION_KINDS):
        return BlockRule.BLOCKED if global_isolated else BlockRule.ALLOWED
    if kinds == {SegmentKind.GLOBAL, SegmentKind.IMAGE}:
        return BlockRule.ALLOWED
    if kinds == {SegmentKind.DEPTH, SegmentKind.IMAGE}:
        return BlockRule.ALLOWED if depth_global else BlockRule.REGION
    return BlockRule.REGION


def build_attention_mask(
    layout: TokenLayout,
    entity_bitsets: Sequence[np.ndarray],
    depth_global: Optional[bool] = None,
    global_isolated: Optional[bool] = None,
) -> AttentionMask:
    """
    Build the condition-aware mask over [P, P_1..P_k, C_D, X].

    Every segment attends to itself. Local prompts and the depth segment are
    mutually isolated, and the global prompt is isolated from them unless
    ``global_isolated`` is off. The global prompt and the image see each other
    fully. Each local prompt and the image see each other only on that entity's
    patchified region. The depth segment sees the whole image, or only the union
    of entity regions when ``depth_global`` is off.
    """
    depth_global = settings.DEPTH_GLOBAL if depth_global is None else depth_global
    global_isolated = settings.GLOBAL_ISOLATED if global_isolated is None else global_isolated

    if len(entity_bitsets) != layout.k:
        raise LengthMismatch(f"expected {layout.k} entity bitsets, got {len(entity_bitsets)}")
    for j, bitset in enumerate(entity_bitsets):
        if np.asarray(bitset).shape != (layout.n_image,):
            raise LengthMismatch(
                f"entity {j + 1} bitset has shape {np.asarray(bitset).shape}, expected ({layout.n_image},)"
            )
    stacked = np.asarray(entity_bitsets, dtype=bool).reshape(layout.k, layout.n_image)

    segments = layout.segments()
    rules = {
        (q.name, k.name): _pair_rule(q, k, global_isolated, depth_global)
        for q in segments
        for k in segments
    }
    logger.debug(f"Built attention mask over {layout.total} tokens with {layout.k} entities")
    return AttentionMask(
        layout=layout,
        entity_bitsets=stacked,
        rules=rules,
        global_isolated=global_isolated,
        depth_global=depth_global,
    )


# Audit

def _expected_block(
    query: Segment, key: Segment, bitsets: np.ndarray, global_isolated: bool, depth_global: bool
) -> Tuple[str, np.ndarray]:
    """Cell-level expectation for one block, derived from the layout and bitsets alone."""
    shape = (query.length, key.length)
    if query is key or query.name == key.name:
        return "within_segment", np.ones(shape, dtype=bool)

    conditions = (SegmentKind.LOCAL, SegmentKind.DEPTH)
    if query.kind in conditions and key.kind in conditions:
        return "condition_isolation", np.zeros(shape, dtype=bool)
    if (query.kind == SegmentKind.GLOBAL and key.kind in conditions) or (
        key.kind == SegmentKind.GLOBAL and query.kind in conditions
    ):
        return "global_isolation", np.full(shape, not global_isolated, dtype=bool)
    if {query.kind, key.kind} == {SegmentKind.GLOBAL, SegmentKind.IMAGE}:
        return "global_image", np.ones(shape, dtype=bool)

    other = key if query.kind == SegmentKind.IMAGE else query
    if other.kind == SegmentKind.DEPTH:
        if depth_global:
            return "depth_image", np.ones(shape, dtype=bool)
        region = bitsets.any(axis=0) if len(bitsets) else np.zeros(bitsets.shape[1], dtype=bool)
        label = "depth_image"
    else:
        region = bitsets[other.entity_index]
        label = "entity_region"

    if query.kind == SegmentKind.IMAGE:
        return label, np.broadcast_to(region[:, None], shape)
    return label, np.broadcast_to(region[None, :], shape)


def audit_mask(mask: AttentionMask) -> AuditReport:
    """
    Re-derive every block from the layout and entity bitsets and report each
    cell where the mask disagrees.
    """
    violations: List[MaskViolation] = []
    segments = mask.layout.segments()
    for query in segments:
        for key in segments:
            rule, expected = _expected_block(
                query, key, mask.entity_bitsets, mask.global_isolated, mask.depth_global
            )
            actual = mask.block(query, key)
            for r, c in np.argwhere(actual != expected):
                violations.append(MaskViolation(
                    row=query.start + int(r),
                    col=key.start + int(c),
                    query_segment=query.name,
                    key_segment=key.name,
                    rule=rule,
                    expected=bool(expected[r, c]),
                    actual=bool(actual[r, c]),
                ))

    if violations:
        logger.warning(f"Attention mask audit found {len(violations)} violating cells")
    return AuditReport(violations=tuple(violations))


# Reference attention kernels

def _dense(mask: Union[AttentionMask, np.ndarray]) -> np.ndarray:
    if isinstance(mask, AttentionMask):
        return mask.to_dense()
    return np.asarray(mask, dtype=bool)


def _check_shapes(q: np.ndarray, k: np.ndarray, v: np.ndarray, allowed: np.ndarray) -> None:
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatch("Q, K and V must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"Q and K head dims differ: {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"K and V token counts differ: {k.shape[0]} vs {v.shape[0]}")
    if allowed.shape != (q.shape[0], k.shape[0]):
        raise ShapeMismatch(f"mask shape {allowed.shape} does not match ({q.shape[0]}, {k.shape[0]})")
    if not allowed.any(axis=1).all():
        raise ShapeMismatch("every query row needs at least one allowed key")


def masked_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: Union[AttentionMask, np.ndarray]
) -> np.ndarray:
    """Softmax(Q K^T / sqrt(d_k) + log M) V with log 0 = -inf; blocked keys get exactly zero weight."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    allowed = _dense(mask)
    _check_shapes(q, k, v, allowed)

    scores = q @ k.T / math.sqrt(q.shape[1])
    scores = np.where(allowed, scores, -np.inf)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ v


def subset_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: Union[AttentionMask, np.ndarray]
) -> np.ndarray:
    """Per-query softmax attention over only the allowed keys; the oracle for masked_attention."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    allowed = _dense(mask)
    _check_shapes(q, k, v, allowed)

    scale = math.sqrt(q.shape[1])
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float64)
    for i in range(q.shape[0]):
        keys = np.flatnonzero(allowed[i])
        scores = k[keys] @ q[i] / scale
        scores -= scores.max()
        weights = np.exp(scores)
        out[i] = (weights / weights.sum()) @ v[keys]
    return out


# Export

def export_mask(mask: AttentionMask) -> Dict[str, Any]:
    """JSON form: segments, non-allowed segment pairs, RLE entity bitsets and pinned cells."""
    layout = mask.layout
    segments = layout.segments()
    blocked, region = [], []
    for q in segments:
        for k in segments:
            rule = mask.rules[(q.name, k.name)]
            if rule == BlockRule.BLOCKED:
                blocked.append([q.name, k.name])
            elif rule == BlockRule.REGION:
                region.append([q.name, k.name])
    return {
        "segments": [{"name": s.name, "length": s.length} for s in segments],
        "image_width": layout.image_width,
        "image_height": layout.image_height,
        "patch_size": layout.patch_size,
        "global_isolated": mask.global_isolated,
        "depth_global": mask.depth_global,
        "blocked_pairs": blocked,
        "region_pairs": region,
        "entity_bitsets": [encode_mask_rle(b) for b in mask.entity_bitsets],
        "overrides": [[r, c, bool(value)] for r, c, value in mask.overrides],
    }


def load_mask(obj: Dict[str, Any]) -> AttentionMask:
    """Rebuild an AttentionMask from its JSON form; pairs not listed are allowed."""
    lengths = {s["name"]: int(s["length"]) for s in obj["segments"]}
    local_names = sorted((n for n in lengths if n.startswith("P_")), key=lambda n: int(n[2:]))
    layout = TokenLayout(
        n_global=lengths["P"],
        n_local=tuple(lengths[n] for n in local_names),
        n_depth=lengths["C_D"],
        image_width=int(obj["image_width"]),
        image_height=int(obj["image_height"]),
        patch_size=int(obj["patch_size"]),
    )
    names = [s.name for s in layout.segments()]
    rules = {(q, k): BlockRule.ALLOWED for q in names for k in names}
    for q, k in obj.get("blocked_pairs", []):
        rules[(q, k)] = BlockRule.BLOCKED
    for q, k in obj.get("region_pairs", []):
        rules[(q, k)] = BlockRule.REGION

    runs = obj.get("entity_bitsets", [])
    if len(runs) != layout.k:
        raise LengthMismatch(f"expected {layout.k} entity bitsets, got {len(runs)}")
    bitsets = np.array([decode_mask_rle(r, layout.n_image) for r in runs], dtype=bool).reshape(
        layout.k, layout.n_image
    )
    return AttentionMask(
        layout=layout,
        entity_bitsets=bitsets,
        rules=rules,
        global_isolated=bool(obj.get("global_isolated", True)),
        depth_global=bool(obj.get("depth_global", True)),
        overrides=tuple((int(r), int(c), bool(v)) for r, c, v in obj.get("overrides", [])),
    )


def encode_matrix_pbm(mask: AttentionMask) -> bytes:
    """Materialized mask as a P4 bitmap, allowed cells black."""
    dense = mask.to_dense()
    header = f"P4\n{dense.shape[1]} {dense.shape[0]}\n".encode("ascii")
    return header + np.packbits(dense, axis=1).tobytes()
