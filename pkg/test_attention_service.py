"""Condition-aware attention mask construction, audit and reference attention."""
import numpy as np
import pytest

from app.core.exceptions import IndivisibleDims, LengthMismatch, ShapeMismatch
from app.schemas.attention import TokenLayout
from app.schemas.camera import EntityMask2D
from app.services.attention_service import (
    audit_mask,
    build_attention_mask,
    export_mask,
    layout_for_plan,
    load_mask,
    masked_attention,
    patchify_mask,
    subset_attention,
)


def _layout(n_local=(1,), n_global=1, n_depth=1, width=2, height=2, patch=1) -> TokenLayout:
    return TokenLayout(
        n_global=n_global,
        n_local=tuple(n_local),
        n_depth=n_depth,
        image_width=width,
        image_height=height,
        patch_size=patch,
    )


def _random_mask(rng):
    k = int(rng.integers(0, 9))
    grid = int(rng.integers(1, 17))
    layout = _layout(
        n_local=tuple(int(n) for n in rng.integers(1, 4, size=k)),
        n_global=int(rng.integers(1, 4)),
        n_depth=int(rng.integers(1, 4)),
        width=grid,
        height=grid,
    )
    bitsets = [rng.random(layout.n_image) < 0.3 for _ in range(k)]
    return build_attention_mask(
        layout,
        bitsets,
        depth_global=bool(rng.integers(0, 2)),
        global_isolated=bool(rng.integers(0, 2)),
    )


def test_patchify_examples():
    zeros = EntityMask2D(width=4, height=4, bits=np.zeros((4, 4), dtype=bool))
    assert not patchify_mask(zeros, 2).any()

    quadrant = np.zeros((4, 4), dtype=bool)
    quadrant[:2, :2] = True
    tokens = patchify_mask(EntityMask2D(width=4, height=4, bits=quadrant), 2)
    assert tokens.tolist() == [True, False, False, False]

    ones = EntityMask2D(width=4, height=4, bits=np.ones((4, 4), dtype=bool))
    assert patchify_mask(ones, 2).all()


def test_patchify_coverage_threshold():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = True
    bits[2:4, 2:4] = True
    mask = EntityMask2D(width=4, height=4, bits=bits)
    assert patchify_mask(mask, 2, min_coverage=0.0).tolist() == [True, False, False, True]
    assert patchify_mask(mask, 2, min_coverage=0.5).tolist() == [False, False, False, True]


def test_patchify_rejects_indivisible_size():
    with pytest.raises(IndivisibleDims):
        patchify_mask(EntityMask2D(width=6, height=4, bits=np.zeros((4, 6), dtype=bool)), 4)


def test_single_entity_mask_cell_by_cell():
    layout = _layout(width=4, height=1)
    mask = build_attention_mask(layout, [np.array([1, 1, 0, 0], dtype=bool)], depth_global=True, global_isolated=True)
    expected = np.array([
        # P  P1 CD  X0 X1 X2 X3
        [1, 0, 0, 1, 1, 1, 1],  # P
        [0, 1, 0, 1, 1, 0, 0],  # P_1
        [0, 0, 1, 1, 1, 1, 1],  # C_D
        [1, 1, 1, 1, 1, 1, 1],  # X0
        [1, 1, 1, 1, 1, 1, 1],  # X1
        [1, 0, 1, 1, 1, 1, 1],  # X2
        [1, 0, 1, 1, 1, 1, 1],  # X3
    ], dtype=bool)
    assert np.array_equal(mask.to_dense(), expected)


def test_global_prompt_not_isolated():
    mask = build_attention_mask(_layout(width=4, height=1), [np.array([1, 0, 0, 0], dtype=bool)], global_isolated=False)
    dense = mask.to_dense()
    assert dense[0, 1] and dense[1, 0] and dense[0, 2] and dense[2, 0]
    assert not dense[1, 2]


def test_depth_tokens_restricted_to_entity_regions():
    layout = _layout(n_local=(1, 1), width=4, height=1)
    bitsets = [np.array([1, 0, 0, 0], dtype=bool), np.array([0, 0, 1, 0], dtype=bool)]
    dense = build_attention_mask(layout, bitsets, depth_global=False).to_dense()
    depth_row = layout.segments()[3].start
    image = slice(layout.segments()[4].start, layout.total)
    assert dense[depth_row, image].tolist() == [True, False, True, False]
    assert dense[image, depth_row].tolist() == [True, False, True, False]


def test_diagonal_is_always_allowed(rng):
    for _ in range(50):
        assert np.diagonal(_random_mask(rng).to_dense()).all()


def test_disjoint_entities_share_no_image_token():
    layout = _layout(n_local=(2, 3), width=4, height=4)
    first = np.zeros(16, dtype=bool)
    first[:6] = True
    second = np.zeros(16, dtype=bool)
    second[10:] = True
    dense = build_attention_mask(layout, [first, second]).to_dense()
    p1, p2, image = layout.segments()[1], layout.segments()[2], layout.segments()[-1]
    seen_by_first = dense[p1.start:p1.stop, image.start:image.stop].any(axis=0)
    seen_by_second = dense[p2.start:p2.stop, image.start:image.stop].any(axis=0)
    assert not (seen_by_first & seen_by_second).any()


def test_built_masks_pass_audit(rng):
    for _ in range(500):
        assert audit_mask(_random_mask(rng)).is_valid


def _random_layout(rng, k: int) -> TokenLayout:
    grid = int(rng.integers(1, 13))
    return _layout(
        n_local=tuple(int(n) for n in rng.integers(1, 4, size=k)),
        n_global=int(rng.integers(1, 4)),
        n_depth=int(rng.integers(1, 4)),
        width=grid,
        height=grid,
    )


def test_enlarging_an_entity_region_never_removes_allowed_cells(rng):
    for _ in range(200):
        k = int(rng.integers(1, 6))
        layout = _random_layout(rng, k)
        bitsets = [rng.random(layout.n_image) < 0.3 for _ in range(k)]
        options = {"depth_global": bool(rng.integers(0, 2)), "global_isolated": bool(rng.integers(0, 2))}
        before = build_attention_mask(layout, bitsets, **options).to_dense()

        grown = list(bitsets)
        j = int(rng.integers(0, k))
        grown[j] = bitsets[j] | (rng.random(layout.n_image) < 0.3)
        after = build_attention_mask(layout, grown, **options).to_dense()
        assert not (before & ~after).any()


def test_local_prompt_and_image_cells_are_symmetric(rng):
    for _ in range(200):
        k = int(rng.integers(1, 6))
        layout = _random_layout(rng, k)
        bitsets = [rng.random(layout.n_image) < 0.4 for _ in range(k)]
        dense = build_attention_mask(layout, bitsets, depth_global=bool(rng.integers(0, 2))).to_dense()
        segments = layout.segments()
        image = segments[-1]
        for local, bits in zip(segments[1:1 + k], bitsets):
            prompt_to_image = dense[local.start:local.stop, image.start:image.stop]
            image_to_prompt = dense[image.start:image.stop, local.start:local.stop]
            assert np.array_equal(prompt_to_image, image_to_prompt.T)
            assert np.array_equal(prompt_to_image.any(axis=0), bits)


def test_audit_reports_flipped_condition_cell():
    mask = build_attention_mask(_layout(width=4, height=1), [np.array([1, 1, 0, 0], dtype=bool)])
    report = audit_mask(mask.with_overrides({(1, 2): True}))
    assert len(report.violations) == 1
    violation = report.violations[0]
    assert (violation.row, violation.col) == (1, 2)
    assert violation.rule == "condition_isolation"
    assert violation.actual and not violation.expected


def test_audit_reports_local_prompt_outside_region():
    mask = build_attention_mask(_layout(width=4, height=1), [np.array([1, 1, 0, 0], dtype=bool)])
    report = audit_mask(mask.with_overrides({(1, 5): True}))
    assert [(v.row, v.col, v.rule) for v in report.violations] == [(1, 5, "entity_region")]


def test_bitset_count_must_match_layout():
    with pytest.raises(LengthMismatch):
        build_attention_mask(_layout(n_local=(1, 1)), [np.ones(4, dtype=bool)])
    with pytest.raises(LengthMismatch):
        build_attention_mask(_layout(), [np.ones(3, dtype=bool)])


def test_layout_for_plan(two_box_plan):
    layout = layout_for_plan(two_box_plan, 64, 32, 16, n_global=4, n_local=2)
    assert [s.name for s in layout.segments()] == ["P", "P_1", "P_2", "C_D", "X"]
    assert layout.n_image == 8
    assert layout.n_depth == 8
    assert layout.total == 4 + 2 + 2 + 8 + 8
    with pytest.raises(IndivisibleDims):
        layout_for_plan(two_box_plan, 64, 40, 16)


def test_export_and_load_keep_mask_and_edits():
    layout = _layout(n_local=(2, 1), width=4, height=2)
    bitsets = [np.array([1, 1, 0, 0, 1, 0, 0, 0], dtype=bool), np.array([0, 0, 1, 1, 0, 0, 1, 1], dtype=bool)]
    mask = build_attention_mask(layout, bitsets, depth_global=False, global_isolated=True)
    loaded = load_mask(export_mask(mask))
    assert np.array_equal(loaded.to_dense(), mask.to_dense())
    assert audit_mask(loaded).is_valid

    edited = load_mask(export_mask(mask.with_overrides({(0, 1): True})))
    assert not audit_mask(edited).is_valid


def test_all_ones_mask_equals_plain_attention(rng):
    q, k, v = rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
    scores = q @ k.T / 2.0
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    plain = (weights / weights.sum(axis=1, keepdims=True)) @ v
    out = masked_attention(q, k, v, np.ones((6, 6), dtype=bool))
    assert np.abs(out - plain).max() < 1e-12


def test_identity_mask_returns_values(rng):
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    out = masked_attention(q, k, v, np.eye(5, dtype=bool))
    assert np.array_equal(out, v)


def test_masked_attention_matches_subset_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(2, 65))
        d = int(rng.integers(1, 9))
        allowed = rng.random((n, n)) < 0.4
        np.fill_diagonal(allowed, True)
        q, k, v = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, 3))
        out = masked_attention(q, k, v, allowed)
        oracle = subset_attention(q, k, v, allowed)
        assert np.abs(out - oracle).max() <= 1e-9 * max(1.0, float(np.abs(oracle).max()))


def test_blocked_keys_get_no_weight_at_any_scale(rng):
    mask = build_attention_mask(_layout(width=4, height=1), [np.array([1, 1, 0, 0], dtype=bool)])
    dense = mask.to_dense()
    q, k = 1e3 * rng.normal(size=(7, 4)), 1e3 * rng.normal(size=(7, 4))
    v = rng.normal(size=(7, 2))
    out = masked_attention(q, k, v, mask)

    changed = v.copy()
    changed[~dense[1]] = 1e6
    assert np.array_equal(masked_attention(q, k, changed, mask)[1], out[1])


def test_masked_attention_shape_errors(rng):
    q = rng.normal(size=(3, 2))
    with pytest.raises(ShapeMismatch):
        masked_attention(q, q, q, np.ones((2, 2), dtype=bool))
    with pytest.raises(ShapeMismatch):
        masked_attention(q, q, q, np.zeros((3, 3), dtype=bool))
