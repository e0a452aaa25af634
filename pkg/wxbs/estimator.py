"""
Two-view geometry: minimal solvers, residuals, LO-RANSAC with dominant
plane handling, and the local affine frame check.

Correspondences are passed as two aligned (N, 2) arrays `u` (image 1)
and `v` (image 2).  Fundamental matrices satisfy `v^T F u = 0`,
homographies `v ~ H u`.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Sequence, Tuple, Union

import numpy as np

from wxbs.core import LocalAffineFrame
from wxbs.exceptions import (
    DegenerateConfiguration,
    InsufficientData,
    ModelKindError,
    NoModelFound,
)
from wxbs.utils import apply_homography, hartley_normalization, skew, to_homogeneous

log = logging.getLogger(__name__)

ModelKind = Literal["homography", "fundamental"]
ModelRequest = Literal["homography", "fundamental", "auto"]
ResidualKind = Literal["symmetric_epipolar", "sampson", "symmetric_transfer"]
MINIMAL_SAMPLE = {"homography": 4, "fundamental": 7}
LO_SAMPLE = {"homography": 4, "fundamental": 8}
LO_FACTORS = (2.0, 1.5, 1.0)
COLLINEAR_EPS = 1e-9
PARALLAX_ITERS = 100


@dataclass(eq=False)
class TwoViewModel:
    """An estimated model with its inliers.

    Attributes:
      kind: "homography" or "fundamental".
      M: 3x3 matrix with unit Frobenius norm, largest entry positive.
      inliers: indices of inlier correspondences.
      score: inlier count, or the truncated quality score.
    """

    kind: str
    M: np.ndarray
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    score: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in MINIMAL_SAMPLE:
            raise ModelKindError(f"Unknown model kind: {self.kind!r}")
        self.M = np.asarray(self.M, dtype=float).reshape(3, 3)
        self.inliers = np.asarray(self.inliers, dtype=np.int64).reshape(-1)

    @property
    def num_inliers(self) -> int:
        return len(self.inliers)


@dataclass(frozen=True)
class RansacParams:
    """LO-RANSAC settings.

    Attributes:
      inlier_threshold: eta, pixels.
      confidence: probability of drawing an all-inlier sample.
      max_iter: hard cap on hypotheses (Gamma).
      lo_enabled: re-fit on inliers when a new best model is found.
      seed: random generator seed.
      plane_fraction: share of F-inliers on a homography that triggers
                      plane-and-parallax sampling.
      homography_fraction: share above which "auto" returns the homography.
      truncated_score: score by truncated quadratic cost instead of counting.
    """

    inlier_threshold: float = 2.0
    confidence: float = 0.999
    max_iter: int = 10000
    lo_enabled: bool = True
    seed: int = 0
    plane_fraction: float = 0.6
    homography_fraction: float = 0.9
    truncated_score: bool = False

    def __post_init__(self) -> None:
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.plane_fraction <= self.homography_fraction <= 1:
            raise ValueError("Need 0 < plane_fraction <= homography_fraction <= 1")


def normalize_model(M: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm with the largest-magnitude entry positive."""
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M)
    if not norm > 0 or not np.isfinite(norm):
        raise DegenerateConfiguration("Cannot normalize a zero model")
    M = M / norm
    if M.flat[np.argmax(np.abs(M))] < 0:
        M = -M
    return M


def _check_pairs(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(u) != len(v):
        raise ValueError(f"Point sets differ in size: {len(u)} != {len(v)}")
    return u, v


def _has_collinear_triple(pts: np.ndarray) -> bool:
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        a = pts[j] - pts[i]
        b = pts[k] - pts[i]
        if abs(a[0] * b[1] - a[1] * b[0]) < COLLINEAR_EPS:
            return True
    return False


def homography_dlt(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Normalized DLT, exact on noise-free minimal samples.

    Raises:
      InsufficientData: fewer than 4 pairs.
      DegenerateConfiguration: collinear minimal sample or singular result.
    """
    u, v = _check_pairs(u, v)
    n = len(u)
    if n < 4:
        raise InsufficientData(f"Homography needs at least 4 pairs, got {n}")
    T1 = hartley_normalization(u)
    T2 = hartley_normalization(v)
    un = apply_homography(T1, u)
    vn = apply_homography(T2, v)
    if n == 4 and (_has_collinear_triple(un) or _has_collinear_triple(vn)):
        raise DegenerateConfiguration("Collinear points in a minimal homography sample")
    x, y = un[:, 0], un[:, 1]
    xp, yp = vn[:, 0], vn[:, 1]
    zero = np.zeros(n)
    one = np.ones(n)
    rows = np.empty((2 * n, 9))
    rows[0::2] = np.stack([zero, zero, zero, -x, -y, -one, yp * x, yp * y, yp], axis=1)
    rows[1::2] = np.stack([x, y, one, zero, zero, zero, -xp * x, -xp * y, -xp], axis=1)
    _, _, Vt = np.linalg.svd(rows)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T2) @ Hn @ T1
    H = normalize_model(H)
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateConfiguration("Singular homography")
    return H


def _epipolar_rows(un: np.ndarray, vn: np.ndarray) -> np.ndarray:
    x, y = un[:, 0], un[:, 1]
    xp, yp = vn[:, 0], vn[:, 1]
    return np.stack(
        [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, np.ones(len(x))], axis=1
    )


def _rank2(F: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(F)
    s[2] = 0.0
    return U @ np.diag(s) @ Vt


def _finish_fundamental(Fn: np.ndarray, T1: np.ndarray, T2: np.ndarray) -> np.ndarray:
    F = T2.T @ _rank2(Fn) @ T1
    return normalize_model(_rank2(F))


def fundamental_solve(
    u: np.ndarray, v: np.ndarray, algo: Literal["7pt", "8pt"] = "8pt"
) -> List[np.ndarray]:
    """Fundamental matrices from 7 (one to three solutions) or at least 8
    pairs (one solution).  Rank 2 is enforced on every result.

    Returns an empty list when the sample is degenerate.
    """
    u, v = _check_pairs(u, v)
    n = len(u)
    if algo == "7pt":
        if n != 7:
            raise InsufficientData(f"The 7-point solver needs exactly 7 pairs, got {n}")
    elif algo == "8pt":
        if n < 8:
            raise InsufficientData(f"The 8-point solver needs 8 or more pairs, got {n}")
    else:
        raise ValueError(f"Unknown fundamental solver: {algo!r}")
    T1 = hartley_normalization(u)
    T2 = hartley_normalization(v)
    rows = _epipolar_rows(apply_homography(T1, u), apply_homography(T2, v))
    _, s, Vt = np.linalg.svd(rows)
    if algo == "8pt":
        try:
            return [_finish_fundamental(Vt[-1].reshape(3, 3), T1, T2)]
        except DegenerateConfiguration:
            return []
    F1 = Vt[-1].reshape(3, 3)
    F2 = Vt[-2].reshape(3, 3)
    # det(a F1 + (1 - a) F2) is a cubic in a, recover it by interpolation
    alphas = np.array([-1.0, 0.0, 1.0, 2.0])
    dets = [np.linalg.det(a * F1 + (1 - a) * F2) for a in alphas]
    coeffs = np.polyfit(alphas, dets, 3)
    if np.max(np.abs(coeffs)) < 1e-10:
        # Every combination is singular (points on a plane or no motion)
        try:
            return [_finish_fundamental(F1, T1, T2)]
        except DegenerateConfiguration:
            return []
    out = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-8 * (1 + abs(root.real)):
            continue
        a = root.real
        try:
            out.append(_finish_fundamental(a * F1 + (1 - a) * F2, T1, T2))
        except DegenerateConfiguration:
            continue
    return out


def _model_of(
    model: Union[TwoViewModel, Tuple[str, np.ndarray]],
) -> Tuple[str, np.ndarray]:
    if isinstance(model, TwoViewModel):
        return model.kind, model.M
    kind, M = model
    if kind not in MINIMAL_SAMPLE:
        raise ModelKindError(f"Unknown model kind: {kind!r}")
    return kind, np.asarray(M, dtype=float)


def symmetric_epipolar(F: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(v^T F u)^2 (1 / |(F u)_12|^2 + 1 / |(F^T v)_12|^2), pixels squared."""
    uh = to_homogeneous(u)
    vh = to_homogeneous(v)
    l2 = uh @ F.T
    l1 = vh @ F
    c = np.sum(vh * l2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        n2 = l2[:, 0] ** 2 + l2[:, 1] ** 2
        n1 = l1[:, 0] ** 2 + l1[:, 1] ** 2
        out = c * c * (1.0 / n2 + 1.0 / n1)
    return np.where(np.isnan(out), np.inf, out)


def sampson(F: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    uh = to_homogeneous(u)
    vh = to_homogeneous(v)
    l2 = uh @ F.T
    l1 = vh @ F
    c = np.sum(vh * l2, axis=1)
    den = l2[:, 0] ** 2 + l2[:, 1] ** 2 + l1[:, 0] ** 2 + l1[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = c * c / den
    return np.where(np.isnan(out), np.inf, out)


def symmetric_transfer(H: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(|v - H u| + |u - H^-1 v|) / 2, pixels."""
    fwd = np.linalg.norm(v - apply_homography(H, u), axis=1)
    bwd = np.linalg.norm(u - apply_homography(np.linalg.inv(H), v), axis=1)
    out = (fwd + bwd) / 2.0
    return np.where(np.isnan(out), np.inf, out)


def residual(
    model: Union[TwoViewModel, Tuple[str, np.ndarray]],
    u: np.ndarray,
    v: np.ndarray,
    kind: Union[ResidualKind, str],
) -> np.ndarray:
    """Residuals of correspondences under a model.

    Raises:
      ModelKindError: epipolar residuals of a homography or transfer
                      errors of a fundamental matrix.
    """
    mkind, M = _model_of(model)
    u, v = _check_pairs(u, v)
    if kind in ("symmetric_epipolar", "sampson"):
        if mkind != "fundamental":
            raise ModelKindError(f"{kind} residual needs a fundamental matrix")
        if kind == "sampson":
            return sampson(M, u, v)
        return symmetric_epipolar(M, u, v)
    elif kind == "symmetric_transfer":
        if mkind != "homography":
            raise ModelKindError("symmetric_transfer residual needs a homography")
        return symmetric_transfer(M, u, v)
    raise ModelKindError(f"Unknown residual kind: {kind!r}")


def model_distance(
    model: Union[TwoViewModel, Tuple[str, np.ndarray]], u: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Pixel distance used for inlier decisions: symmetric transfer error
    for homographies, RMS point-to-epipolar-line distance for fundamental
    matrices."""
    kind, M = _model_of(model)
    u, v = _check_pairs(u, v)
    if kind == "homography":
        return symmetric_transfer(M, u, v)
    return np.sqrt(symmetric_epipolar(M, u, v) / 2.0)


def _score(d: np.ndarray, eta: float, truncated: bool) -> float:
    if truncated:
        return float(np.sum(np.maximum(0.0, 1.0 - (d / eta) ** 2)))
    return float(np.count_nonzero(d <= eta))


def adaptive_iterations(
    inlier_ratio: float, sample_size: int, confidence: float
) -> int:
    """Hypotheses needed to draw one all-inlier sample with `confidence`."""
    good = inlier_ratio**sample_size
    if good >= 1 - 1e-12:
        return 1
    if good <= 0:
        return np.iinfo(np.int32).max
    return int(math.ceil(math.log(1 - confidence) / math.log(1 - good)))


def _minimal_solver(kind: str) -> Callable[[np.ndarray, np.ndarray], List[np.ndarray]]:
    if kind == "homography":
        return lambda a, b: [homography_dlt(a, b)]
    return lambda a, b: fundamental_solve(a, b, "7pt")


def _ls_solver(kind: str) -> Callable[[np.ndarray, np.ndarray], List[np.ndarray]]:
    if kind == "homography":
        return lambda a, b: [homography_dlt(a, b)]
    return lambda a, b: fundamental_solve(a, b, "8pt")


class _Best:
    """Best hypothesis so far; only a strictly better score replaces it."""

    def __init__(self) -> None:
        self.M: Union[np.ndarray, None] = None
        self.score = -np.inf
        self.count = 0

    def offer(self, M: np.ndarray, d: np.ndarray, p: RansacParams) -> bool:
        """Keep `M` if its residuals `d` score better."""
        eta = p.inlier_threshold
        score = _score(d, eta, p.truncated_score)
        if score > self.score:
            self.M, self.score = M, score
            self.count = int(np.count_nonzero(d <= eta))
            return True
        return False


def _local_optimize(
    kind: str, M: np.ndarray, u: np.ndarray, v: np.ndarray, p: RansacParams, best: _Best
) -> None:
    """Least-squares re-fits on inliers at shrinking thresholds."""
    eta = p.inlier_threshold
    solver = _ls_solver(kind)
    for factor in LO_FACTORS:
        d = model_distance((kind, M), u, v)
        inl = d <= factor * eta
        if np.count_nonzero(inl) < LO_SAMPLE[kind]:
            return
        try:
            fits = solver(u[inl], v[inl])
        except DegenerateConfiguration:
            return
        if not fits:
            return
        M = fits[0]
        d = model_distance((kind, M), u, v)
        best.offer(M, d, p)


def _ransac(
    kind: str,
    u: np.ndarray,
    v: np.ndarray,
    p: RansacParams,
    rng: np.random.Generator,
) -> _Best:
    n = len(u)
    m = MINIMAL_SAMPLE[kind]
    if n < m:
        raise InsufficientData(f"{kind} needs at least {m} correspondences, got {n}")
    solver = _minimal_solver(kind)
    best = _Best()
    needed = p.max_iter
    it = 0
    while it < min(needed, p.max_iter):
        it += 1
        sample = rng.choice(n, m, replace=False)
        try:
            hyps = solver(u[sample], v[sample])
        except DegenerateConfiguration:
            continue
        for M in hyps:
            d = model_distance((kind, M), u, v)
            if best.offer(M, d, p):
                if p.lo_enabled:
                    _local_optimize(kind, M, u, v, p, best)
                needed = adaptive_iterations(best.count / n, m, p.confidence)
    log.debug("%s RANSAC: %d iterations, %d inliers of %d", kind, it, best.count, n)
    return best


def _to_model(kind: str, M: np.ndarray, u: np.ndarray, v: np.ndarray, p: RansacParams):
    d = model_distance((kind, M), u, v)
    inliers = np.flatnonzero(d <= p.inlier_threshold)
    if len(inliers) <= MINIMAL_SAMPLE[kind]:
        raise NoModelFound(
            f"Best {kind} has {len(inliers)} inliers, not more than the minimal sample"
        )
    score = _score(d, p.inlier_threshold, p.truncated_score)
    return TwoViewModel(kind, M, inliers, score)


def _plane_and_parallax(
    H: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    off: np.ndarray,
    p: RansacParams,
    rng: np.random.Generator,
    best: _Best,
) -> None:
    """F = [e']x H hypotheses from the plane homography and two off-plane
    correspondences."""
    if len(off) < 2:
        return
    Hu = to_homogeneous(u[off]) @ H.T
    lines = np.cross(Hu, to_homogeneous(v[off]))
    for _ in range(PARALLAX_ITERS):
        i, j = rng.choice(len(off), 2, replace=False)
        e = np.cross(lines[i], lines[j])
        if not np.linalg.norm(e) > 1e-12:
            continue
        try:
            F = normalize_model(skew(e) @ H)
        except DegenerateConfiguration:
            continue
        d = model_distance(("fundamental", F), u, v)
        if best.offer(F, d, p):
            if p.lo_enabled:
                _local_optimize("fundamental", F, u, v, p, best)


def loransac(
    u: np.ndarray,
    v: np.ndarray,
    model: Union[ModelRequest, str] = "auto",
    p: RansacParams = RansacParams(),
) -> TwoViewModel:
    """Robustly estimate a homography or fundamental matrix.

    Deterministic for a given seed.  For fundamental matrices the inliers
    of the best model are tested for a dominant plane; when at least
    `plane_fraction` of them lie on a homography, extra hypotheses are
    drawn from that plane plus off-plane points.  In "auto" mode the
    homography is returned when it explains `homography_fraction` of the
    fundamental matrix inliers.

    Raises:
      InsufficientData: fewer correspondences than the minimal sample.
      NoModelFound: no model with more inliers than the minimal sample.
    """
    u, v = _check_pairs(u, v)
    if model not in ("homography", "fundamental", "auto"):
        raise ModelKindError(f"Unknown model request: {model!r}")
    rng = np.random.default_rng(p.seed)
    n = len(u)
    if model == "homography" or (model == "auto" and n < MINIMAL_SAMPLE["fundamental"]):
        best = _ransac("homography", u, v, p, rng)
        if best.M is None:
            raise NoModelFound("No homography hypothesis")
        return _to_model("homography", best.M, u, v, p)
    best = _ransac("fundamental", u, v, p, rng)
    if best.M is None:
        raise NoModelFound("No fundamental matrix hypothesis")
    d = model_distance(("fundamental", best.M), u, v)
    f_inl = np.flatnonzero(d <= p.inlier_threshold)
    plane = None
    if len(f_inl) > MINIMAL_SAMPLE["homography"]:
        sub = _ransac("homography", u[f_inl], v[f_inl], p, rng)
        if sub.M is not None:
            plane = sub.M
            frac = sub.count / len(f_inl)
            log.debug(
                "Dominant plane holds %.0f%% of %d F-inliers", 100 * frac, len(f_inl)
            )
            if model == "auto" and frac >= p.homography_fraction:
                try:
                    return _to_model("homography", plane, u, v, p)
                except NoModelFound:
                    pass
            if frac >= p.plane_fraction:
                on_plane = model_distance(("homography", plane), u[f_inl], v[f_inl])
                off = f_inl[on_plane > p.inlier_threshold]
                _plane_and_parallax(plane, u, v, off, p, rng, best)
    return _to_model("fundamental", best.M, u, v, p)


def laf_check_arrays(
    model: Union[TwoViewModel, Tuple[str, np.ndarray]],
    c1: np.ndarray,
    A1: np.ndarray,
    c2: np.ndarray,
    A2: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Mask of frame pairs whose centers and extreme ellipse points all
    satisfy the model within `threshold` pixels.

    The extreme points are the images of the right singular vectors of the
    first frame's matrix, mapped through both frames.
    """
    c1 = np.asarray(c1, dtype=float).reshape(-1, 2)
    c2 = np.asarray(c2, dtype=float).reshape(-1, 2)
    A1 = np.asarray(A1, dtype=float).reshape(-1, 2, 2)
    A2 = np.asarray(A2, dtype=float).reshape(-1, 2, 2)
    if len(c1) == 0:
        return np.zeros(0, dtype=bool)
    keep = model_distance(model, c1, c2) <= threshold
    _, _, Vt = np.linalg.svd(A1)
    for k in range(2):
        vk = Vt[:, k, :]
        p1 = c1 + np.einsum("nij,nj->ni", A1, vk)
        p2 = c2 + np.einsum("nij,nj->ni", A2, vk)
        keep &= model_distance(model, p1, p2) <= threshold
    return keep


def laf_check(
    model: Union[TwoViewModel, Tuple[str, np.ndarray]],
    lafs1: Sequence[LocalAffineFrame],
    lafs2: Sequence[LocalAffineFrame],
    threshold: float,
) -> List[int]:
    """Indices of the frame pairs passing the check."""
    if len(lafs1) != len(lafs2):
        raise ValueError("Frame lists differ in length")
    if not lafs1:
        return []
    mask = laf_check_arrays(
        model,
        np.array([f.center for f in lafs1]),
        np.array([f.A for f in lafs1]),
        np.array([f.center for f in lafs2]),
        np.array([f.A for f in lafs2]),
        threshold,
    )
    return [int(i) for i in np.flatnonzero(mask)]
