"""
Gaussian scale space and similarity-covariant blob detectors.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, NamedTuple, Optional, Sequence, TypeVar, Union

import numpy as np
from scipy import ndimage

from wxbs.core import Image, LocalAffineFrame
from wxbs.exceptions import ImageTooSmall

log = logging.getLogger(__name__)

DetectorKind = Literal["hessian", "dog"]
MIN_SIZE = 16
# Responses below this are floating-point noise on flat regions
RESPONSE_FLOOR = 1e-8
REFINE_ATTEMPTS = 3


@dataclass(frozen=True)
class DetectorParams:
    """Detector settings.

    Attributes:
      threshold: response magnitude a feature needs to be kept outright.
      r_min: minimum number of features to output (adaptive threshold).
      levels_per_octave: scale levels per octave.
      sigma_base: blur of the first level of each octave (octave pixels).
      edge_like_allowed: skip the curvature-ratio rejection of edges.
      edge_threshold: curvature ratio above which a feature is an edge.
      max_features: keep at most this many strongest features.
    """

    threshold: float = 0.0
    r_min: int = 0
    levels_per_octave: int = 3
    sigma_base: float = 1.6
    edge_like_allowed: bool = False
    edge_threshold: float = 10.0
    max_features: Optional[int] = None

    def __post_init__(self) -> None:
        if self.r_min < 0:
            raise ValueError(f"r_min must be >= 0, got {self.r_min}")
        if self.levels_per_octave < 3:
            raise ValueError("levels_per_octave must be >= 3")
        if self.sigma_base <= 0:
            raise ValueError("sigma_base must be positive")
        if self.max_features is not None and self.max_features < 0:
            raise ValueError("max_features must be >= 0")


class ScaleLevel(NamedTuple):
    """One blurred level.

    Attributes:
      image: blurred raster at the octave resolution.
      sigma: absolute blur in original-image pixels.
      step: downsampling factor of the octave.
    """

    image: np.ndarray
    sigma: float
    step: int


@dataclass
class ScaleSpace:
    octaves: List[List[ScaleLevel]]
    levels_per_octave: int
    sigma_base: float


def build_scale_space(img: Image, params: DetectorParams) -> ScaleSpace:
    """Build a Gaussian pyramid.

    Each octave holds `levels_per_octave + 3` levels with sigmas
    `sigma_base * 2**(i / S)`; the next octave starts from level `S`
    subsampled by two.  Octaves are added while the smaller image side is
    at least 16 pixels.
    """
    if min(img.data.shape) < MIN_SIZE:
        raise ImageTooSmall(
            f"Image {img.width}x{img.height} is smaller than {MIN_SIZE} px"
        )
    S = params.levels_per_octave
    k = 2.0 ** (1.0 / S)
    sigma0 = params.sigma_base
    octaves: List[List[ScaleLevel]] = []
    base = ndimage.gaussian_filter(img.data, sigma0, mode="nearest")
    step = 1
    while True:
        levels = [ScaleLevel(base, sigma0 * step, step)]
        prev = base
        for i in range(1, S + 3):
            inc = sigma0 * np.sqrt(k ** (2 * i) - k ** (2 * (i - 1)))
            prev = ndimage.gaussian_filter(prev, inc, mode="nearest")
            levels.append(ScaleLevel(prev, sigma0 * k**i * step, step))
        octaves.append(levels)
        nxt = levels[S].image[::2, ::2]
        if min(nxt.shape) < MIN_SIZE:
            break
        base = nxt
        step *= 2
    log.debug("Built scale space with %d octaves", len(octaves))
    return ScaleSpace(octaves, S, sigma0)


def hessian_components(L: np.ndarray):
    """Second derivatives (Lxx, Lyy, Lxy) by central differences, zero on the border."""
    Lxx = np.zeros_like(L)
    Lyy = np.zeros_like(L)
    Lxy = np.zeros_like(L)
    Lxx[:, 1:-1] = L[:, 2:] - 2 * L[:, 1:-1] + L[:, :-2]
    Lyy[1:-1, :] = L[2:, :] - 2 * L[1:-1, :] + L[:-2, :]
    Lxy[1:-1, 1:-1] = (L[2:, 2:] - L[2:, :-2] - L[:-2, 2:] + L[:-2, :-2]) / 4.0
    return Lxx, Lyy, Lxy


def _octave_responses(levels: Sequence[ScaleLevel], kind: DetectorKind, ss: ScaleSpace):
    """Stack of responses for one octave plus the level index -> sigma offset."""
    S = ss.levels_per_octave
    k = 2.0 ** (1.0 / S)
    if kind == "dog":
        resp = np.stack(
            [levels[i + 1].image - levels[i].image for i in range(S + 2)]
        )
        return resp, 0.5
    elif kind == "hessian":
        stack = []
        for i in range(S + 2):
            sigma = ss.sigma_base * k**i
            Lxx, Lyy, Lxy = hessian_components(levels[i].image)
            stack.append(sigma**4 * (Lxx * Lyy - Lxy * Lxy))
        return np.stack(stack), 0.0
    raise ValueError(f"Unknown detector kind: {kind!r}")


def _derivatives(resp: np.ndarray, s: np.ndarray, y: np.ndarray, x: np.ndarray):
    """Gradient (dx, dy, ds) and 3x3 Hessian of the response at integer positions."""
    c = resp[s, y, x]
    dx = (resp[s, y, x + 1] - resp[s, y, x - 1]) / 2.0
    dy = (resp[s, y + 1, x] - resp[s, y - 1, x]) / 2.0
    ds = (resp[s + 1, y, x] - resp[s - 1, y, x]) / 2.0
    dxx = resp[s, y, x + 1] - 2 * c + resp[s, y, x - 1]
    dyy = resp[s, y + 1, x] - 2 * c + resp[s, y - 1, x]
    dss = resp[s + 1, y, x] - 2 * c + resp[s - 1, y, x]
    dxy = (
        resp[s, y + 1, x + 1]
        - resp[s, y + 1, x - 1]
        - resp[s, y - 1, x + 1]
        + resp[s, y - 1, x - 1]
    ) / 4.0
    dxs = (
        resp[s + 1, y, x + 1]
        - resp[s + 1, y, x - 1]
        - resp[s - 1, y, x + 1]
        + resp[s - 1, y, x - 1]
    ) / 4.0
    dys = (
        resp[s + 1, y + 1, x]
        - resp[s + 1, y - 1, x]
        - resp[s - 1, y + 1, x]
        + resp[s - 1, y - 1, x]
    ) / 4.0
    g = np.stack([dx, dy, ds], axis=1)
    H = np.stack(
        [
            np.stack([dxx, dxy, dxs], axis=1),
            np.stack([dxy, dyy, dys], axis=1),
            np.stack([dxs, dys, dss], axis=1),
        ],
        axis=1,
    )
    return c, g, H


def _refine(resp: np.ndarray, s: np.ndarray, y: np.ndarray, x: np.ndarray, s_max: int):
    """Quadratic sub-pixel / sub-scale refinement of candidate extrema.

    Returns the surviving integer positions, their offsets (dx, dy, ds),
    interpolated values and the 2D spatial Hessians.
    """
    n_s, h, w = resp.shape
    done_pos = []
    done_off = []
    done_val = []
    done_H = []
    for attempt in range(REFINE_ATTEMPTS):
        if len(s) == 0:
            break
        c, g, H = _derivatives(resp, s, y, x)
        det = np.linalg.det(H)
        ok = np.abs(det) > 1e-20
        s, y, x, c, g, H = s[ok], y[ok], x[ok], c[ok], g[ok], H[ok]
        if len(s) == 0:
            break
        off = -np.linalg.solve(H, g[:, :, None])[:, :, 0]
        settled = np.all(np.abs(off) <= 0.5, axis=1)
        done_pos.append(np.stack([s[settled], y[settled], x[settled]], axis=1))
        done_off.append(off[settled])
        done_val.append(c[settled] + 0.5 * np.sum(g[settled] * off[settled], axis=1))
        done_H.append(H[settled][:, :2, :2])
        # Move the others to the neighbouring sample and try again
        mv = ~settled
        step = np.clip(np.round(off[mv]), -1, 1).astype(int)
        x = x[mv] + step[:, 0]
        y = y[mv] + step[:, 1]
        s = s[mv] + step[:, 2]
        inside = (
            (s >= 1) & (s <= s_max) & (y >= 1) & (y <= h - 2) & (x >= 1) & (x <= w - 2)
        )
        s, y, x = s[inside], y[inside], x[inside]
    if len(s):
        log.debug("Discarding %d diverging extrema", len(s))
    if not done_pos:
        empty = np.zeros((0, 3))
        return empty.astype(int), empty, np.zeros(0), np.zeros((0, 2, 2))
    pos = np.concatenate(done_pos)
    # Several candidates may converge onto the same sample
    _, first = np.unique(pos, axis=0, return_index=True)
    first.sort()
    return (
        pos[first],
        np.concatenate(done_off)[first],
        np.concatenate(done_val)[first],
        np.concatenate(done_H)[first],
    )


_F = TypeVar("_F")


def adaptive_threshold(
    features: Sequence[_F], threshold: float, r_min: int
) -> List[_F]:
    """Keep features above `threshold`, or the `r_min` strongest if
    there are not enough of those.

    `features` must be sorted by decreasing response; elements are either
    numbers or objects with a `response` attribute.
    """
    strong = 0
    for f in features:
        if abs(getattr(f, "response", f)) >= threshold:  # type: ignore[arg-type]
            strong += 1
        else:
            break
    if strong >= r_min:
        return list(features[:strong])
    return list(features[:r_min])


def detect(
    ss: ScaleSpace,
    kind: Union[DetectorKind, str],
    params: DetectorParams,
    view_id: int = 0,
) -> List[LocalAffineFrame]:
    """Detect blobs as 3x3x3 extrema of the Hessian determinant or of the
    difference of Gaussians.

    Returns frames with `A = sigma * I` sorted by (response desc, y, x)
    after adaptive thresholding.
    """
    S = ss.levels_per_octave
    k = 2.0 ** (1.0 / S)
    edge_r = params.edge_threshold
    edge_limit = (edge_r + 1) ** 2 / edge_r
    found = []
    for levels in ss.octaves:
        resp, sigma_offset = _octave_responses(
            levels, kind, ss  # type: ignore[arg-type]
        )
        step = levels[0].step
        n_s, h, w = resp.shape
        if h < 3 or w < 3:
            continue
        is_ext = (ndimage.maximum_filter(resp, size=3, mode="nearest") == resp) & (
            resp > RESPONSE_FLOOR
        )
        if kind == "dog":
            is_ext |= (ndimage.minimum_filter(resp, size=3, mode="nearest") == resp) & (
                resp < -RESPONSE_FLOOR
            )
        # Only interior scales (1..S) and pixels with a full neighbourhood
        is_ext[0] = False
        is_ext[S + 1 :] = False
        is_ext[:, 0, :] = is_ext[:, -1, :] = False
        is_ext[:, :, 0] = is_ext[:, :, -1] = False
        s, y, x = np.nonzero(is_ext)
        pos, off, val, H2 = _refine(resp, s, y, x, S)
        if len(pos) == 0:
            continue
        if not params.edge_like_allowed:
            tr = H2[:, 0, 0] + H2[:, 1, 1]
            det = H2[:, 0, 0] * H2[:, 1, 1] - H2[:, 0, 1] ** 2
            keep = (det > 0) & (tr * tr < edge_limit * det)
            pos, off, val = pos[keep], off[keep], val[keep]
        xs = (pos[:, 2] + off[:, 0]) * step
        ys = (pos[:, 1] + off[:, 1]) * step
        sigmas = ss.sigma_base * k ** (pos[:, 0] + off[:, 2] + sigma_offset) * step
        for xi, yi, si, vi in zip(xs, ys, sigmas, np.abs(val)):
            found.append((float(vi), float(yi), float(xi), float(si)))
    found.sort(key=lambda f: (-f[0], f[1], f[2]))
    kept = adaptive_threshold(
        [f[0] for f in found], params.threshold, params.r_min
    )
    if params.max_features is not None:
        kept = kept[: params.max_features]
    lafs = [
        LocalAffineFrame(xi, yi, si * np.eye(2), vi, view_id, kind)
        for vi, yi, xi, si in found[: len(kept)]
    ]
    log.debug("Detected %d %s features (%d candidates)", len(lafs), kind, len(found))
    return lafs
