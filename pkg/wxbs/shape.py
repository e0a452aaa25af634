"""
Affine shape adaptation and dominant orientation of local features.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Sequence, Union

import numpy as np
from scipy import ndimage

from wxbs.core import Image, LocalAffineFrame, Patch, extract_patches
from wxbs.utils import rotation

log = logging.getLogger(__name__)

ORIENTATION_BINS = 36
PEAK_RATIO = 0.8
MAX_ORIENTATIONS = 4
ORIENT_SIDE = 19
ORIENT_MAG = 3 * np.sqrt(3)


@dataclass(frozen=True)
class BaumbergParams:
    """Shape adaptation settings.

    Attributes:
      max_iter: iterations before giving up.
      convergence_eps: accepted 1 - lambda_min / lambda_max of the
                       second-moment matrix.
      max_elongation: reject shapes with a larger axis ratio.
      side: side of the patch the second-moment matrix is computed on.
      mag: measurement region radius in units of the frame scale.
    """

    max_iter: int = 16
    convergence_eps: float = 0.05
    max_elongation: float = 6.0
    side: int = 19
    mag: float = 3.0

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.max_elongation > 1:
            raise ValueError("max_elongation must be > 1")
        if self.side < 5:
            raise ValueError("side must be >= 5")


class AdaptationStatus(Enum):
    CONVERGED = "converged"
    TOO_ELONGATED = "too-elongated"
    AT_BORDER = "at-border"
    NOT_CONVERGED = "not-converged"


class AdaptationResult(NamedTuple):
    """Outcome of `baumberg_adapt`.

    `laf` and `shape` are None unless the status is CONVERGED.  `shape` is
    the lower-triangular unit-determinant shape A' and `laf.A` equals
    `sigma * shape` for the frame's scale `sigma`.
    """

    laf: Union[LocalAffineFrame, None]
    shape: Union[np.ndarray, None]
    status: AdaptationStatus
    iterations: int

    @property
    def accepted(self) -> bool:
        return self.status is AdaptationStatus.CONVERGED


def _gaussian_window(side: int, sigma: float) -> np.ndarray:
    r = np.arange(side) - (side - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return np.outer(g, g)


def second_moment(data: np.ndarray) -> np.ndarray:
    """Gaussian-weighted second-moment matrix of patch gradients, in (u, v)."""
    side = data.shape[0]
    smooth = ndimage.gaussian_filter(data, 1.0, mode="nearest")
    gv, gu = np.gradient(smooth)
    w = _gaussian_window(side, side / 6.0)
    muu = np.sum(w * gu * gu)
    muv = np.sum(w * gu * gv)
    mvv = np.sum(w * gv * gv)
    return np.array([[muu, muv], [muv, mvv]])


def _inverse_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return V @ np.diag(1.0 / np.sqrt(w)) @ V.T


def baumberg_adapt(
    img: Image, laf: LocalAffineFrame, p: BaumbergParams = BaumbergParams()
) -> AdaptationResult:
    """Iteratively estimate the affine shape of a feature.

    The measurement region is repeatedly warped by the inverse square root
    of the gradient second-moment matrix until that matrix is isotropic.
    The frame's scale `sqrt(det A)` is kept fixed and its orientation is
    reset (the output shape is lower triangular).
    """
    sigma = float(np.sqrt(np.linalg.det(laf.A)))
    U = laf.A / sigma
    h, w = img.data.shape
    for it in range(1, p.max_iter + 1):
        radius = p.mag * sigma * np.linalg.svd(U, compute_uv=False)[0]
        if (
            laf.x - radius < 0
            or laf.y - radius < 0
            or laf.x + radius > w - 1
            or laf.y + radius > h - 1
        ):
            return AdaptationResult(None, None, AdaptationStatus.AT_BORDER, it)
        data = extract_patches(img, laf.center, sigma * U, p.side, p.mag)[0]
        M = second_moment(data)
        lam = np.linalg.eigvalsh(M)
        if not lam[1] > 1e-12:
            return AdaptationResult(None, None, AdaptationStatus.NOT_CONVERGED, it)
        if lam[0] / lam[1] < 1e-12:
            return AdaptationResult(None, None, AdaptationStatus.TOO_ELONGATED, it)
        if 1.0 - lam[0] / lam[1] <= p.convergence_eps:
            shape = np.linalg.cholesky(U @ U.T)
            shape /= np.sqrt(np.linalg.det(shape))
            shape[0, 1] = 0.0
            adapted = LocalAffineFrame(
                laf.x, laf.y, sigma * shape, laf.response, laf.view_id, laf.detector
            )
            return AdaptationResult(adapted, shape, AdaptationStatus.CONVERGED, it)
        U = U @ _inverse_sqrt(M / np.sqrt(np.linalg.det(M)))
        U /= np.sqrt(np.linalg.det(U))
        s = np.linalg.svd(U, compute_uv=False)
        if s[0] / s[1] > p.max_elongation:
            return AdaptationResult(None, None, AdaptationStatus.TOO_ELONGATED, it)
    return AdaptationResult(None, None, AdaptationStatus.NOT_CONVERGED, p.max_iter)


def adapt_lafs(
    img: Image,
    lafs: Sequence[LocalAffineFrame],
    params: BaumbergParams = BaumbergParams(),
) -> List[LocalAffineFrame]:
    """Run `baumberg_adapt` on every frame, keeping the accepted ones."""
    out = []
    reasons: Counter = Counter()
    for laf in lafs:
        res = baumberg_adapt(img, laf, params)
        reasons[res.status] += 1
        if res.laf is not None:
            out.append(res.laf)
    if reasons:
        log.debug(
            "Shape adaptation: %s",
            ", ".join(f"{s.value}={n}" for s, n in sorted(reasons.items(), key=str)),
        )
    return out


def _orientation_histogram(data: np.ndarray) -> np.ndarray:
    side = data.shape[0]
    gy, gx = np.gradient(data)
    mag = np.hypot(gx, gy) * _gaussian_window(side, side / 6.0)
    theta = np.arctan2(gy, gx) % (2 * np.pi)
    idx = np.round(theta * ORIENTATION_BINS / (2 * np.pi)).astype(int)
    idx %= ORIENTATION_BINS
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=ORIENTATION_BINS)
    kernel = np.full(3, 1.0 / 3.0)
    for _ in range(2):
        hist = ndimage.convolve1d(hist, kernel, mode="wrap")
    return hist


def dominant_orientation(p: Patch) -> List[float]:
    """Dominant gradient orientations of a patch, in radians in [0, 2 pi).

    Peaks of a smoothed 36-bin histogram reaching 80% of the highest one are
    returned strongest first (at most 4).  A patch without gradients gets
    the single orientation 0.
    """
    if p.side < 9:
        raise ValueError(f"Orientation needs a patch side >= 9, got {p.side}")
    hist = _orientation_histogram(p.data)
    top = hist.max()
    if not top > 1e-12:
        return [0.0]
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    peaks = np.flatnonzero((hist > left) & (hist >= right) & (hist >= PEAK_RATIO * top))
    peaks = sorted(peaks, key=lambda i: (-hist[i], i))[:MAX_ORIENTATIONS]
    angles = []
    for i in peaks:
        den = left[i] - 2 * hist[i] + right[i]
        off = 0.5 * (left[i] - right[i]) / den if den != 0 else 0.0
        a = float(((i + off) * 2 * np.pi / ORIENTATION_BINS) % (2 * np.pi))
        if a >= 2 * np.pi:
            a = 0.0
        angles.append(a)
    if not angles:
        # Flat plateau, no strict maximum
        angles.append(float(np.argmax(hist) * 2 * np.pi / ORIENTATION_BINS))
    return angles


def orient_lafs(
    img: Image,
    lafs: Sequence[LocalAffineFrame],
    side: int = ORIENT_SIDE,
    mag: float = ORIENT_MAG,
) -> List[LocalAffineFrame]:
    """Assign dominant orientations, one output frame per orientation."""
    if not lafs:
        return []
    centers = np.array([f.center for f in lafs])
    A = np.array([f.A for f in lafs])
    patches = extract_patches(img, centers, A, side, mag)
    out = []
    for laf, data in zip(lafs, patches):
        for angle in dominant_orientation(Patch(data)):
            out.append(
                LocalAffineFrame(
                    laf.x,
                    laf.y,
                    laf.A @ rotation(angle),
                    laf.response,
                    laf.view_id,
                    laf.detector,
                )
            )
    return out
