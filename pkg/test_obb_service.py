"""Back-projection and gravity-aligned minimum-volume box fitting."""
import numpy as np
import pytest

from app.core.exceptions import EmptySelection, InvalidStep, ShapeMismatch
from app.core.geometry import rotate_about_y
from app.schemas.camera import Box3D, EntityMask2D
from app.schemas.depth import DepthMap
from app.schemas.obb import CloudFrame, PointCloud
from app.schemas.scene import SceneParameters
from app.services.camera_service import derive_camera, project_box_mask
from app.services.depth_service import render_depth
from app.services.obb_service import (
    backproject_masked_depth,
    brute_force_obb_oracle,
    convex_hull_xz,
    fit_min_volume_obb,
    obb_to_fragment,
    read_f32,
    read_xyz,
    write_f32,
    write_xyz,
)

UNIT_CUBE = np.array([(x, y, z) for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])


def _cloud(points) -> PointCloud:
    return PointCloud(points=np.asarray(points, dtype=np.float64))


def _yaw_distance(a: float, b: float) -> float:
    diff = (a - b) % 90.0
    return min(diff, 90.0 - diff)


def _local(points: np.ndarray, box: Box3D) -> np.ndarray:
    return rotate_about_y(points - np.asarray(box.bottom_center), -box.yaw_deg)


def _render_single(box: Box3D, pitch: float, size: int):
    cam = derive_camera(SceneParameters(scene_size=10.0, camera_pitch_deg=pitch), size, size)
    depth = render_depth(cam, [box])
    mask = project_box_mask(cam, box)
    return cam, depth, mask


def test_backproject_disjoint_mask_raises():
    cam = derive_camera(SceneParameters(scene_size=10.0, camera_pitch_deg=20.0), 32, 32)
    depth = DepthMap.empty(32, 32)
    mask = EntityMask2D(width=32, height=32, bits=np.ones((32, 32), dtype=bool))
    with pytest.raises(EmptySelection):
        backproject_masked_depth(cam, depth, mask)


def test_backproject_dimension_mismatch():
    cam = derive_camera(SceneParameters(scene_size=10.0, camera_pitch_deg=20.0), 32, 32)
    mask = EntityMask2D(width=16, height=16, bits=np.ones((16, 16), dtype=bool))
    with pytest.raises(ShapeMismatch):
        backproject_masked_depth(cam, DepthMap.empty(32, 32), mask)


def test_backproject_pixel_mode_keeps_depths():
    cam = derive_camera(SceneParameters(scene_size=10.0, camera_pitch_deg=20.0), 16, 16)
    values = np.arange(256, dtype=np.float32).reshape(16, 16) + 1.0
    bits = np.zeros((16, 16), dtype=bool)
    bits[4:6, 7:9] = True
    cloud = backproject_masked_depth(
        cam, DepthMap(width=16, height=16, values=values), EntityMask2D(width=16, height=16, bits=bits),
        CloudFrame.PIXEL,
    )
    assert len(cloud) == 4
    assert cloud.frame == CloudFrame.PIXEL
    for u, v, d in cloud.points:
        row, col = int(v - 0.5), int(u - 0.5)
        assert d == values[row, col]


def test_backprojected_points_lie_on_source_box():
    box = Box3D(bottom_center=(0.5, 0.0, 1.0), extents=(3.0, 2.0, 1.5), yaw_deg=25.0)
    cam, depth, mask = _render_single(box, 35.0, 128)
    cloud = backproject_masked_depth(cam, depth, mask)
    local = _local(cloud.points, box)
    l, w, h = box.extents
    assert np.all(np.abs(local[:, 0]) <= l / 2 + 1e-3)
    assert np.all(np.abs(local[:, 2]) <= w / 2 + 1e-3)
    assert np.all((local[:, 1] >= -1e-3) & (local[:, 1] <= h + 1e-3))


def test_hull_of_triangle_is_ccw():
    cloud = _cloud([[0, 0, 0], [4, 1, 0], [0, 2, 3]])
    hull = convex_hull_xz(cloud)
    assert len(hull) == 3
    assert {tuple(p) for p in hull} == {(0.0, 0.0), (4.0, 0.0), (0.0, 3.0)}
    x, z = hull[:, 0], hull[:, 1]
    signed_area = 0.5 * np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z)
    assert signed_area > 0


def test_hull_ignores_interior_points(rng):
    inside = rng.uniform(-1.0, 1.0, size=(1000, 3))
    corners = np.array([[-1, 0, -1], [1, 0, -1], [1, 0, 1], [-1, 0, 1]], dtype=np.float64)
    hull = convex_hull_xz(_cloud(np.vstack([inside, corners])))
    assert {tuple(p) for p in hull} == {(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)}


def test_hull_of_identical_points():
    hull = convex_hull_xz(_cloud([[2.0, 1.0, 3.0]] * 5))
    assert hull.shape == (1, 2)


def test_unit_cube_fit():
    box = fit_min_volume_obb(_cloud(UNIT_CUBE))
    assert box.center == pytest.approx((0.5, 0.5, 0.5))
    assert box.half_extents == pytest.approx((0.5, 0.5, 0.5))
    assert box.yaw_deg == pytest.approx(0.0, abs=1e-9)
    assert box.volume == pytest.approx(1.0, abs=1e-12)


def test_rotated_cube_recovers_yaw():
    box = fit_min_volume_obb(_cloud(rotate_about_y(UNIT_CUBE, 30.0)))
    assert box.yaw_deg == pytest.approx(30.0, abs=1e-6)
    assert box.volume == pytest.approx(1.0, abs=1e-9)


def test_fit_never_worse_than_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(4, 501))
        points = rng.normal(size=(n, 3)) * rng.uniform(0.5, 4.0, size=3)
        cloud = _cloud(points)
        assert fit_min_volume_obb(cloud).volume <= brute_force_obb_oracle(cloud, 0.25).volume * (1 + 1e-9)


def test_fitted_box_contains_every_point(rng):
    for _ in range(100):
        n = int(rng.integers(1, 301))
        points = rng.normal(size=(n, 3)) * rng.uniform(0.5, 4.0, size=3) + rng.uniform(-5.0, 5.0, size=3)
        box = fit_min_volume_obb(_cloud(points))
        local = rotate_about_y(points - np.asarray(box.center), -box.yaw_deg)
        assert np.all(np.abs(local) <= np.asarray(box.half_extents) + 1e-9)


def test_fit_yaw_is_rotation_equivariant(rng):
    points = rng.normal(size=(200, 3)) * np.array([3.0, 1.0, 1.0])
    base = fit_min_volume_obb(_cloud(points))
    for angle in rng.uniform(0.0, 360.0, size=50):
        rotated = fit_min_volume_obb(_cloud(rotate_about_y(points, angle)))
        assert _yaw_distance(rotated.yaw_deg, base.yaw_deg + angle) < 1e-6
        assert rotated.volume == pytest.approx(base.volume, rel=1e-9)


def test_oracle_axis_aligned_square():
    square = np.array([[x, y, z] for x in (0.0, 2.0) for y in (0.0, 1.0) for z in (0.0, 2.0)])
    box = brute_force_obb_oracle(_cloud(square), 0.5)
    assert _yaw_distance(box.yaw_deg, 0.0) < 1e-9
    assert box.volume == pytest.approx(4.0, abs=1e-12)


def test_oracle_rotated_square():
    square = np.array([[x, y, z] for x in (-1.0, 1.0) for y in (0.0, 1.0) for z in (-1.0, 1.0)])
    box = brute_force_obb_oracle(_cloud(rotate_about_y(square, 45.0)), 0.5)
    assert abs(box.yaw_deg - 45.0) <= 0.25


def test_single_point_gives_zero_volume_box():
    for fit in (fit_min_volume_obb, lambda c: brute_force_obb_oracle(c, 1.0)):
        box = fit(_cloud([[1.0, 2.0, 3.0]]))
        assert box.volume == 0.0
        assert box.center == pytest.approx((1.0, 2.0, 3.0))


def test_oracle_rejects_bad_step():
    for step in (0.0, -1.0, 6.0):
        with pytest.raises(InvalidStep):
            brute_force_obb_oracle(_cloud(UNIT_CUBE), step)


def test_fragment_uses_bottom_center_and_plan_size_order():
    points = np.array([[x, y, z] for x in (0.0, 4.0) for y in (1.0, 2.0) for z in (0.0, 2.0)])
    fragment = obb_to_fragment("table", fit_min_volume_obb(_cloud(points)))
    assert fragment["entity_name"] == "table"
    assert fragment["size"] == pytest.approx([4.0, 2.0, 1.0])
    assert fragment["position"] == pytest.approx([2.0, 1.0, 1.0])


def test_cloud_files(tmp_path, rng):
    cloud = _cloud(rng.normal(size=(20, 3)))
    write_xyz(cloud, tmp_path / "c.xyz")
    assert np.array_equal(read_xyz(tmp_path / "c.xyz").points, cloud.points)
    write_f32(cloud, tmp_path / "c.f32")
    np.testing.assert_allclose(read_f32(tmp_path / "c.f32").points, cloud.points, rtol=1e-6)


def _vertical_pixel_span(cam, box: Box3D) -> float:
    """Largest vertical distance between neighbouring pixel rows on the box's side faces."""
    bx, _, bz = box.bottom_center
    centre = np.hypot(bx - cam.position[0], bz - cam.position[2])
    half_diagonal = np.hypot(*box.extents[:2]) / 2
    height = cam.position[1]
    reaches = (centre - half_diagonal, centre + half_diagonal)
    return max((r * r + height * height) / (r * cam.focal_px) for r in reaches)


def test_pipeline_recovers_box(rng):
    """
    50 single-box scenes at 256x256: footprint and XZ bottom-center come back
    within 5 % and 2 % of scene_size. Height is sampled by pixel rows on the
    side faces, so it may fall short by one row span.
    """
    for _ in range(50):
        box = Box3D(
            bottom_center=(float(rng.uniform(-1.0, 1.0)), 0.0, float(rng.uniform(-1.0, 1.0))),
            extents=(float(rng.uniform(1.5, 4.0)), float(rng.uniform(1.5, 4.0)), float(rng.uniform(0.8, 1.5))),
            yaw_deg=float(rng.uniform(0.0, 90.0)),
        )
        cam, depth, mask = _render_single(box, float(rng.uniform(20.0, 60.0)), 256)
        assert box.extents[2] < cam.position[1]
        fitted = fit_min_volume_obb(backproject_masked_depth(cam, depth, mask))

        size = fitted.size
        np.testing.assert_allclose(sorted(size[:2]), sorted(box.extents[:2]), rtol=0.05)
        row_span = _vertical_pixel_span(cam, box)
        assert box.extents[2] - 0.05 * box.extents[2] - row_span <= size[2] <= box.extents[2] + 1e-3
        centre = np.asarray(fitted.bottom_center)
        assert np.abs(centre[[0, 2]] - np.asarray(box.bottom_center)[[0, 2]]).max() < 0.02 * 10.0
        assert -1e-3 <= centre[1] <= row_span + 1e-3


def test_pipeline_fit_stays_inside_source(rng):
    for _ in range(20):
        box = Box3D(
            bottom_center=(float(rng.uniform(-3.0, 3.0)), 0.0, float(rng.uniform(-3.0, 3.0))),
            extents=tuple(float(v) for v in rng.uniform(1.0, 4.0, size=3)),
            yaw_deg=float(rng.uniform(0.0, 90.0)),
        )
        cam, depth, mask = _render_single(box, float(rng.uniform(10.0, 60.0)), 256)
        cloud = backproject_masked_depth(cam, depth, mask)
        local = _local(cloud.points, box)
        l, w, h = box.extents
        assert np.all(np.abs(local[:, 0]) <= l / 2 + 1e-3)
        assert np.all(np.abs(local[:, 2]) <= w / 2 + 1e-3)
        assert np.all((local[:, 1] >= -1e-3) & (local[:, 1] <= h + 1e-3))
        inflated = (l + 2e-3) * (w + 2e-3) * (h + 2e-3)
        assert fit_min_volume_obb(cloud).volume <= inflated
