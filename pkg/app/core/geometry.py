import math
from typing import List, Tuple

import numpy as np


def yaw_rotation(yaw_deg: float) -> np.ndarray:
    """Rotation matrix about +Y (right-handed): local (1,0,0) maps to (cos, 0, -sin)."""
    theta = math.radians(yaw_deg)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([
        [c, 0.0, s],
        [0.0, 1.0, 0.0],
        [-s, 0.0, c],
    ])


def rotate_about_y(points: np.ndarray, yaw_deg: float) -> np.ndarray:
    """Rotate an (N, 3) array of points about the +Y axis through the origin."""
    return np.asarray(points, dtype=np.float64) @ yaw_rotation(yaw_deg).T


def _cross(o: Tuple[float, float], a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """
    Counter-clockwise convex hull of 2D points (monotone chain).

    Collinear input yields the two extreme points; identical input yields a
    single point. Orientation tests treat |cross| <= 1e-12 * diag^2 as collinear,
    where diag is the diagonal of the input bounding box.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    span = pts.max(axis=0) - pts.min(axis=0)
    tol = 1e-12 * float(span[0] ** 2 + span[1] ** 2)

    ordered: List[Tuple[float, float]] = [(float(x), float(y)) for x, y in pts]

    lower: List[Tuple[float, float]] = []
    for p in ordered:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= tol:
            lower.pop()
        lower.append(p)

    upper: List[Tuple[float, float]] = []
    for p in reversed(ordered):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= tol:
            upper.pop()
        upper.append(p)

    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        # all points collapsed onto a segment shorter than the tolerance
        hull = [ordered[0], ordered[-1]]
    return np.array(hull, dtype=np.float64)


def points_in_convex_polygon(polygon: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Boolean grid: True where (xs, ys) lies inside or on a CCW convex polygon."""
    inside = np.ones(np.broadcast(xs, ys).shape, dtype=bool)
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0.0
    return inside
