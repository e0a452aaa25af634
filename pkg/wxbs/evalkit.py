"""
Evaluation metrics for two-view matching.
"""

import logging
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from wxbs.estimator import TwoViewModel, model_distance, normalize_model
from wxbs.exceptions import (
    CheiralityError,
    DegenerateConfiguration,
    InsufficientData,
)
from wxbs.utils import apply_homography, get_bound, rect_area, skew, to_homogeneous

log = logging.getLogger(__name__)

CORRECT_RADIUS = 3.0
STRICT_RADIUS = 1.0
SOLVED_MIN_CORRECT = 10
MEDIAN_EPIPOLAR_MAX = 6.0
RANK_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class GtCorrespondenceSet:
    """Ground-truth point pairs with an optional model.

    Attributes:
      u, v: (N, 2) points in image 1 and image 2.
      model: ground-truth homography or fundamental matrix, if known.
      category: tag used to aggregate results.
    """

    u: np.ndarray
    v: np.ndarray
    model: Optional[TwoViewModel] = None
    category: str = ""
    name: str = ""

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float).reshape(-1, 2)
        v = np.asarray(self.v, dtype=float).reshape(-1, 2)
        if len(u) != len(v):
            raise ValueError("Ground-truth point lists differ in length")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def __len__(self) -> int:
        return len(self.u)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera from EXIF-style data: focal length `f`, focal plane
    extents `FR_x`, `FR_y` in the units of `f`, and sensor size `m` x `n`
    pixels.  The focal length in pixels is `m f / FR_x` (resp. `n f / FR_y`)."""

    f: float
    FR_x: float
    FR_y: float
    m: float
    n: float

    def __post_init__(self) -> None:
        if min(self.f, self.FR_x, self.FR_y, self.m, self.n) <= 0:
            raise ValueError("Camera intrinsics must all be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.m * self.f / self.FR_x, 0.0, self.m / 2.0],
                [0.0, self.n * self.f / self.FR_y, self.n / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )


def recall_from_errors(errors: Sequence[float], thetas: Sequence[float]) -> np.ndarray:
    """Fraction of errors strictly below each threshold."""
    errors = np.asarray(errors, dtype=float)
    if len(errors) == 0:
        raise InsufficientData("No ground-truth correspondences")
    thetas = np.asarray(thetas, dtype=float)
    return np.array([np.count_nonzero(errors < t) / len(errors) for t in thetas])


def gt_errors(gt: GtCorrespondenceSet, model: TwoViewModel) -> np.ndarray:
    """Per-pair error of a model: symmetric epipolar distance for F,
    symmetric reprojection error for H (pixels)."""
    return model_distance(model, gt.u, gt.v)


def recall_curve(
    gt: GtCorrespondenceSet, model: TwoViewModel, thetas: Sequence[float]
) -> np.ndarray:
    """Share of ground-truth pairs the model explains within each threshold."""
    if len(gt) == 0:
        raise InsufficientData("Empty ground-truth correspondence set")
    return recall_from_errors(gt_errors(gt, model), thetas)


def category_recall(
    curves: Dict[str, Sequence[np.ndarray]],
) -> Dict[str, np.ndarray]:
    """Mean recall curve per category."""
    return {
        cat: np.mean(np.stack(list(c)), axis=0)
        for cat, c in sorted(curves.items())
        if c
    }


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of a rotation matrix, degrees."""
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def pose_error(
    R_est: np.ndarray, t_est: np.ndarray, R_gt: np.ndarray, t_gt: np.ndarray
) -> float:
    """Maximum of the rotation error and the translation direction error, degrees."""
    t_est = np.asarray(t_est, dtype=float).ravel()
    t_gt = np.asarray(t_gt, dtype=float).ravel()
    ne = np.linalg.norm(t_est)
    ng = np.linalg.norm(t_gt)
    if not (ne > 0 and ng > 0):
        raise DegenerateConfiguration("Translation vectors must be nonzero")
    err_r = rotation_angle(np.asarray(R_est).T @ np.asarray(R_gt))
    c = np.clip(np.dot(t_est, t_gt) / (ne * ng), -1.0, 1.0)
    err_t = float(np.degrees(np.arccos(c)))
    return max(err_r, err_t)


def maa(errors: Iterable[float], max_thr: float = 10.0, step: float = 1.0) -> float:
    """Mean accuracy over thresholds step, 2 step, ..., max_thr (inclusive).

    Failed estimates should be passed as `inf`.
    """
    errors = np.asarray(list(errors), dtype=float)
    if len(errors) == 0:
        raise InsufficientData("No pose errors to average")
    n = int(round(max_thr / step))
    if n < 1 or abs(n * step - max_thr) > 1e-9 * max(1.0, max_thr):
        raise ValueError(f"step {step} must divide max_thr {max_thr}")
    errors = np.where(np.isnan(errors), np.inf, errors)
    thresholds = step * np.arange(1, n + 1)
    return float(np.mean([np.mean(errors <= t) for t in thresholds]))


def _triangulate_depths(
    P1: np.ndarray, P2: np.ndarray, x1: np.ndarray, x2: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Depths of linearly triangulated points in both cameras."""
    d1 = []
    d2 = []
    for a, b in zip(x1, x2):
        A = np.stack(
            [
                a[0] * P1[2] - P1[0],
                a[1] * P1[2] - P1[1],
                b[0] * P2[2] - P2[0],
                b[1] * P2[2] - P2[1],
            ]
        )
        X = np.linalg.svd(A)[2][-1]
        if X[3] < 0:
            X = -X
        # Points at infinity count as behind both cameras
        finite = X[3] > 1e-12
        d1.append((P1 @ X)[2] if finite else 0.0)
        d2.append((P2 @ X)[2] if finite else 0.0)
    return np.array(d1), np.array(d2)


def pose_from_fundamental(
    F: np.ndarray,
    K1: np.ndarray,
    K2: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Relative pose (R, t) of camera 2 from a fundamental matrix.

    The camera 2 projection is `K2 [R | t]`; `t` has unit length.  Of the
    four decompositions of E = K2^T F K1 the one placing most
    correspondences in front of both cameras wins.

    Raises:
      DegenerateConfiguration: F is not of rank 2.
      CheiralityError: no candidate has a point in front of both cameras.
    """
    F = np.asarray(F, dtype=float)
    s = np.linalg.svd(F, compute_uv=False)
    if not s[0] > 0 or s[2] / s[0] > RANK_TOL or s[1] / s[0] < RANK_TOL:
        raise DegenerateConfiguration("Fundamental matrix must have rank 2")
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(u) == 0:
        raise InsufficientData("Need at least one correspondence for cheirality")
    E = K2.T @ F @ K1
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    x1 = apply_homography(np.linalg.inv(K1), u)
    x2 = apply_homography(np.linalg.inv(K2), v)
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    best = None
    best_count = 0
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            P2 = np.hstack([R, t[:, None]])
            d1, d2 = _triangulate_depths(P1, P2, x1, x2)
            count = int(np.count_nonzero((d1 > 0) & (d2 > 0)))
            if count > best_count:
                best, best_count = (R, t / np.linalg.norm(t)), count
    if best is None:
        raise CheiralityError("No pose candidate puts points in front of both cameras")
    return best


def turntable_gt_F(K: CameraIntrinsics, phi: float, r: float = 1.0) -> np.ndarray:
    """Fundamental matrix between two turntable views `phi` degrees apart.

    Camera 2 is camera 1 rotated by `phi` about the vertical axis of an
    object at distance `r`.
    """
    if abs(phi) % 360 == 0:
        raise DegenerateConfiguration("Zero turntable angle gives no baseline")
    a = np.radians(phi)
    c, s = np.cos(a), np.sin(a)
    R = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    t = r * np.array([s, 0.0, 1.0 - c])
    Km = K.matrix()
    F = np.linalg.inv(Km).T @ R @ Km.T @ skew(Km @ R.T @ t)
    return normalize_model(F)


def covisibility(
    kpts1: np.ndarray,
    kpts2: np.ndarray,
    dims1: Tuple[float, float],
    dims2: Tuple[float, float],
) -> float:
    """Minimum over both images of shared-keypoint bounding box area over
    image area.  `dims` are (width, height)."""
    kpts1 = np.asarray(kpts1, dtype=float).reshape(-1, 2)
    kpts2 = np.asarray(kpts2, dtype=float).reshape(-1, 2)
    if len(kpts1) == 0 or len(kpts2) == 0:
        return 0.0
    r1 = rect_area(get_bound(map(tuple, kpts1))) / (dims1[0] * dims1[1])
    r2 = rect_area(get_bound(map(tuple, kpts2))) / (dims2[0] * dims2[1])
    return float(min(r1, r2, 1.0))


class Repeatability(NamedTuple):
    repeatability: float
    matching_score: float
    correspondences: int
    correct_matches: int


PointMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DepthReprojection:
    """Maps pixels of image 1 into image 2 through a depth map.

    Attributes:
      depth: (H, W) depth (camera-1 Z coordinate) per pixel of image 1,
        zero or non-finite where unknown.
      K1, K2: intrinsic matrices.
      R, t: pose of camera 2 relative to camera 1, `X2 = R X1 + t`.

    Points with unknown depth, outside the depth map, or behind camera 2
    map to `inf`, which makes them unprojectable.
    """

    depth: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        if np.ndim(self.depth) != 2:
            raise ValueError("depth must be a 2-D array")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        height, width = np.shape(self.depth)
        out = np.full(pts.shape, np.inf)
        with np.errstate(invalid="ignore"):
            cols = np.round(pts[:, 0])
            rows = np.round(pts[:, 1])
            ok = (cols >= 0) & (rows >= 0) & (cols < width) & (rows < height)
        z = np.zeros(len(pts))
        z[ok] = np.asarray(self.depth, dtype=float)[
            rows[ok].astype(int), cols[ok].astype(int)
        ]
        ok &= np.isfinite(z) & (z > 0)
        if not ok.any():
            return out
        rays = to_homogeneous(pts[ok]) @ np.linalg.inv(self.K1).T
        X2 = (rays * z[ok, None]) @ np.asarray(self.R, dtype=float).T
        X2 += np.asarray(self.t, dtype=float)
        front = X2[:, 2] > 0
        x = X2[front] @ np.asarray(self.K2, dtype=float).T
        idx = np.flatnonzero(ok)[front]
        out[idx] = x[:, :2] / x[:, 2:3]
        return out

    def inverse(self, depth2: np.ndarray) -> "DepthReprojection":
        """The mapping from image 2 back to image 1, given image 2's depth."""
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float)
        return DepthReprojection(depth2, self.K2, self.K1, R.T, -R.T @ t)


def _as_point_map(gt_map: Union[np.ndarray, PointMap]) -> PointMap:
    if callable(gt_map):
        return gt_map
    H = np.asarray(gt_map, dtype=float)
    if H.shape != (3, 3):
        raise ValueError("gt_map must be a 3x3 homography or a point mapping")
    return lambda pts: apply_homography(H, pts)


def repeatability_and_ms(
    pts1: np.ndarray,
    pts2: np.ndarray,
    gt_map: Union[np.ndarray, PointMap],
    dims2: Tuple[float, float],
    pixel_thr: float = 3.0,
    matches: Sequence[Tuple[int, int]] = (),
    dims1: Optional[Tuple[float, float]] = None,
    inverse_map: Union[np.ndarray, PointMap, None] = None,
) -> Repeatability:
    """Repeatability and matching score under a ground-truth mapping.

    `gt_map` is either a 3x3 homography or a callable taking (N, 2)
    points of image 1 to image 2 (such as `DepthReprojection`), with
    `inf` for points that do not project.  Keypoints of image 1
    projecting inside image 2 (and vice versa, when `dims1` is given)
    are paired one-to-one, greedily by distance, when closer than
    `pixel_thr`.  Both scores are normalized by the smaller projectable
    count; the matching score counts the pairs that are also descriptor
    matches.

    Raises:
      ValueError: if `dims1` is given with a callable `gt_map` but no
        `inverse_map`.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    forward = _as_point_map(gt_map)
    proj = np.asarray(forward(pts1), dtype=float).reshape(-1, 2)
    vis1 = _inside(proj, dims2)
    vis2 = np.ones(len(pts2), dtype=bool)
    if dims1 is not None:
        if inverse_map is None:
            if callable(gt_map):
                raise ValueError("dims1 needs inverse_map for a callable gt_map")
            inverse_map = np.linalg.inv(np.asarray(gt_map, dtype=float))
        backward = _as_point_map(inverse_map)
        vis2 = _inside(np.asarray(backward(pts2), dtype=float).reshape(-1, 2), dims1)
    i1 = np.flatnonzero(vis1)
    i2 = np.flatnonzero(vis2)
    denom = min(len(i1), len(i2))
    if denom == 0:
        return Repeatability(0.0, 0.0, 0, 0)
    d = np.linalg.norm(proj[i1][:, None, :] - pts2[i2][None, :, :], axis=2)
    cand = np.argwhere(d < pixel_thr)
    order = np.lexsort((cand[:, 1], cand[:, 0], d[cand[:, 0], cand[:, 1]]))
    used1 = set()
    used2 = set()
    pairs = []
    for a, b in cand[order]:
        if a in used1 or b in used2:
            continue
        used1.add(a)
        used2.add(b)
        pairs.append((int(i1[a]), int(i2[b])))
    matched = set((int(a), int(b)) for a, b in matches)
    correct = sum(1 for p in pairs if p in matched)
    return Repeatability(len(pairs) / denom, correct / denom, len(pairs), correct)


def _inside(pts: np.ndarray, dims: Tuple[float, float]) -> np.ndarray:
    return (
        np.isfinite(pts).all(axis=1)
        & (pts[:, 0] >= 0)
        & (pts[:, 1] >= 0)
        & (pts[:, 0] <= dims[0] - 1)
        & (pts[:, 1] <= dims[1] - 1)
    )


@dataclass(frozen=True)
class PairVerdict:
    """Decision record for one matched pair.

    Attributes:
      correct: output correspondences within `radius` of the ground truth.
      solved: at least 10 correct correspondences.
      median_error: median ground-truth error of the output correspondences.
      median_ok: median error at most 6 pixels.
    """

    correct: int
    solved: bool
    median_error: float
    median_ok: bool
    radius: float = CORRECT_RADIUS


def pair_verdicts(
    u: np.ndarray,
    v: np.ndarray,
    gt: Union[TwoViewModel, GtCorrespondenceSet],
    radius: float = CORRECT_RADIUS,
) -> PairVerdict:
    """Judge output correspondences `(u, v)` against a ground-truth model."""
    model = gt.model if isinstance(gt, GtCorrespondenceSet) else gt
    if model is None:
        raise InsufficientData("Verdicts need a ground-truth model")
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(u) == 0:
        return PairVerdict(0, False, float("inf"), False, radius)
    err = model_distance(model, u, v)
    correct = int(np.count_nonzero(err < radius))
    med = float(np.median(err))
    return PairVerdict(
        correct, correct >= SOLVED_MIN_CORRECT, med, med <= MEDIAN_EPIPOLAR_MAX, radius
    )


def summarize_recall(
    gts: Sequence[GtCorrespondenceSet],
    models: Sequence[Optional[TwoViewModel]],
    thetas: Sequence[float],
) -> Tuple[List[np.ndarray], Dict[str, np.ndarray]]:
    """Per-pair and per-category recall curves; a missing model has zero recall."""
    curves = []
    by_cat: Dict[str, List[np.ndarray]] = {}
    for gt, model in zip(gts, models):
        if model is None:
            curve = np.zeros(len(thetas))
        else:
            curve = recall_curve(gt, model, thetas)
        curves.append(curve)
        by_cat.setdefault(gt.category, []).append(curve)
    return curves, category_recall(by_cat)
