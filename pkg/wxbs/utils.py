"""Miscellaneous Routines."""

from typing import Iterable, Iterator, Tuple, TypeVar

import numpy as np

Point = Tuple[float, float]
Rect = Tuple[float, float, float, float]

_T = TypeVar("_T")


def rotation(angle: float) -> np.ndarray:
    """2x2 rotation matrix `[[cos, -sin], [sin, cos]]` (radians)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, so that `skew(a) @ b == np.cross(a, b)`."""
    (x, y, z) = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def to_homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.hstack([pts, np.ones((len(pts), 1))])


def apply_homography(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Applies a 3x3 projective (or affine) matrix to Nx2 points.

    Points mapped to infinity come back as `inf`, not as an error.
    """
    hpts = to_homogeneous(pts) @ np.asarray(m, dtype=float).T
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hpts[:, :2] / hpts[:, 2:3]
    out[~np.isfinite(out)] = np.inf
    return out


def hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    centroid = pts.mean(axis=0)
    mean_dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2) / mean_dist if mean_dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def get_bound(pts: Iterable[Point]) -> Rect:
    """Compute a minimal rectangle that covers all the points.

    Raises:
      ValueError on empty input (as there is no bounding box).
    """
    xs, ys = zip(*pts)
    x0 = min(xs)
    y0 = min(ys)
    x1 = max(xs)
    y1 = max(ys)
    return x0, y0, x1, y1


def rect_area(r: Rect) -> float:
    (x0, y0, x1, y1) = r
    return max(0.0, x1 - x0) * max(0.0, y1 - y0)


def choplist(n: int, seq: Iterable[_T]) -> Iterator[Tuple[_T, ...]]:
    """Groups every n elements of the list."""
    r = []
    for x in seq:
        r.append(x)
        if len(r) == n:
            yield tuple(r)
            r = []
