"""
Affine view synthesis.

A synthesized view is the original image scaled by `S`, rotated by the
longitude `phi` (canvas expanded to hold the whole image), blurred
against aliasing and shrunk horizontally by the tilt `t`.  `A_view` is
the 3x3 matrix taking original pixel coordinates to view coordinates.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Literal, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from wxbs.core import FeatureSet, Image, LocalAffineFrame
from wxbs.exceptions import DegenerateConfiguration, ImageTooSmall
from wxbs.pyramid import MIN_SIZE, DetectorParams
from wxbs.utils import rotation

log = logging.getLogger(__name__)

DetectorName = Literal["hessian", "dog", "hessaff"]
PHI_EPS = 1e-9


@dataclass(frozen=True)
class SynthViewSpec:
    """One view: scale `S` (<= 1), tilt `t` (>= 1), longitude `phi` in
    degrees within [0, 180)."""

    S: float = 1.0
    t: float = 1.0
    phi: float = 0.0
    sigma_base: float = 0.8

    def __post_init__(self) -> None:
        if not 0 < self.S <= 1:
            raise ValueError(f"View scale must be in (0, 1], got {self.S}")
        if self.t < 1:
            raise ValueError(f"Tilt must be >= 1, got {self.t}")
        if not 0 <= self.phi < 180:
            raise ValueError(f"Longitude must be in [0, 180), got {self.phi}")
        if self.sigma_base <= 0:
            raise ValueError("sigma_base must be positive")

    @property
    def is_identity(self) -> bool:
        return self.S == 1 and self.t == 1 and self.phi == 0

    @property
    def linear(self) -> np.ndarray:
        """S * diag(1/t, 1) * R(phi)"""
        return self.S * np.diag([1.0 / self.t, 1.0]) @ rotation(np.deg2rad(self.phi))

    def A_view(self, width: int, height: int) -> np.ndarray:
        """View matrix for an image of the given size (canvas offset included)."""
        if self.is_identity:
            return np.eye(3)
        M = self.S * rotation(np.deg2rad(self.phi))
        offset, _ = _canvas(M, width, height)
        first = np.eye(3)
        first[:2, :2] = M
        first[:2, 2] = offset
        return np.diag([1.0 / self.t, 1.0, 1.0]) @ first


@dataclass(frozen=True)
class StepConfig:
    """One step of the matching ladder.

    Attributes:
      step_id: number of the step in the ladder.
      detector: "hessian", "dog" or "hessaff" (Hessian + shape adaptation).
      descriptor: descriptor kind.
      scales: view scales {S}.
      tilts: view tilts {t}.
      delta_phi_base: longitude sampling in degrees, divided by the tilt.
      tilt_only: allow a tilt set without 1.
      sigma_base: anti-aliasing blur in pixels.
      detector_params: detector thresholds for this step.
    """

    step_id: int = 1
    detector: DetectorName = "hessian"
    descriptor: str = "rootsift"
    scales: Tuple[float, ...] = (1.0,)
    tilts: Tuple[float, ...] = (1.0,)
    delta_phi_base: float = 360.0
    tilt_only: bool = False
    sigma_base: float = 0.8
    detector_params: DetectorParams = field(default_factory=DetectorParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "tilts", tuple(float(t) for t in self.tilts))
        if self.detector not in ("hessian", "dog", "hessaff"):
            raise ValueError(f"Unknown detector: {self.detector!r}")
        if not self.scales or not self.tilts:
            raise ValueError("Scale and tilt sets must be non-empty")
        if 1.0 not in self.tilts and not self.tilt_only:
            raise ValueError("Tilt set must contain 1 unless tilt_only is set")
        if not 0 < self.delta_phi_base <= 360:
            raise ValueError(
                f"delta_phi_base must be in (0, 360], got {self.delta_phi_base}"
            )

    @property
    def pool(self) -> str:
        """Features of steps sharing a pool are matched together."""
        return f"{self.detector}/{self.descriptor}"


def _canvas(
    M: np.ndarray, width: int, height: int
) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Offset and (width, height) of the canvas holding the image mapped by M."""
    corners = np.array(
        [[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], dtype=float
    )
    mapped = corners @ M.T
    lo = mapped.min(axis=0)
    hi = mapped.max(axis=0)
    # Snap to avoid losing a column to rounding
    size = np.floor(hi - lo + 1e-9).astype(int) + 1
    return -lo, (int(size[0]), int(size[1]))


def _warp(data: np.ndarray, M: np.ndarray, offset: np.ndarray, size: Tuple[int, int]):
    """Resample so that output(M p + offset) = input(p), bilinear, border replicated."""
    Minv = np.linalg.inv(M)
    # scipy works in (row, col)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    matrix = swap @ Minv @ swap
    off = swap @ (-Minv @ offset)
    return ndimage.affine_transform(
        data,
        matrix,
        offset=off,
        output_shape=(size[1], size[0]),
        order=1,
        mode="nearest",
    )


def synth_view(img: Image, spec: SynthViewSpec) -> Tuple[Image, np.ndarray]:
    """Synthesize an affine view of an image.

    Returns:
      (view, A_view) with `A_view` mapping original to view coordinates.
    Raises:
      ImageTooSmall: if the view would be smaller than 16 pixels.
    """
    if spec.is_identity:
        return img, np.eye(3)
    data = img.data
    height, width = data.shape
    if spec.S < 1:
        data = ndimage.gaussian_filter(
            data, spec.sigma_base * (1.0 / spec.S - 1.0), mode="nearest"
        )
    M = spec.S * rotation(np.deg2rad(spec.phi))
    offset, size = _canvas(M, width, height)
    if min(size) < MIN_SIZE:
        raise ImageTooSmall(f"View {spec} of a {width}x{height} image is too small")
    if spec.S != 1 or spec.phi != 0:
        data = _warp(data, M, offset, size)
    if spec.t > 1:
        data = ndimage.gaussian_filter(
            data, (spec.sigma_base, spec.t * spec.sigma_base), mode="nearest"
        )
        tilt = np.diag([1.0 / spec.t, 1.0])
        new_w = int(np.floor((size[0] - 1) / spec.t + 1e-9)) + 1
        if new_w < MIN_SIZE:
            raise ImageTooSmall(
                f"View {spec} of a {width}x{height} image is too small"
            )
        data = _warp(data, tilt, np.zeros(2), (new_w, size[1]))
    log.debug("Synthesized view %s: %dx%d", spec, data.shape[1], data.shape[0])
    return Image(data), spec.A_view(width, height)


def tilt_phis(t: float, delta_phi_base: float) -> List[float]:
    """Longitudes sampled for a tilt: multiples of delta_phi_base / t below 180."""
    if t == 1:
        return [0.0]
    dphi = delta_phi_base / t
    phis = []
    k = 0
    while k * dphi < 180 - PHI_EPS:
        phis.append(k * dphi)
        k += 1
    return phis


def gen_views(cfg: StepConfig) -> List[SynthViewSpec]:
    """All views of a step, ordered by (S, t, phi) as listed in the config."""
    seen = set()
    views = []
    for S in cfg.scales:
        for t in cfg.tilts:
            for phi in tilt_phis(t, cfg.delta_phi_base):
                key = (S, t, phi)
                if key in seen:
                    continue
                seen.add(key)
                views.append(SynthViewSpec(S, t, phi, cfg.sigma_base))
    return views


def backproject_lafs(
    lafs: Sequence[LocalAffineFrame], A_view: np.ndarray, view_id: int = 0
) -> List[LocalAffineFrame]:
    """Map frames detected in a view back to original-image coordinates."""
    Ainv = _invert_view(A_view)
    out = []
    for laf in lafs:
        x, y, _ = Ainv @ np.array([laf.x, laf.y, 1.0])
        out.append(
            LocalAffineFrame(
                float(x),
                float(y),
                Ainv[:2, :2] @ laf.A,
                laf.response,
                view_id,
                laf.detector,
            )
        )
    return out


def backproject_features(
    feats: FeatureSet, A_view: np.ndarray, view_id: int = 0
) -> FeatureSet:
    """`backproject_lafs` on a whole feature set."""
    Ainv = _invert_view(A_view)
    centers = feats.centers @ Ainv[:2, :2].T + Ainv[:2, 2]
    return FeatureSet(
        centers,
        np.einsum("ij,njk->nik", Ainv[:2, :2], feats.A),
        feats.response,
        np.full(len(feats), view_id),
        feats.pool,
        feats.descriptors,
        list(feats.detector),
    )


def _invert_view(A_view: np.ndarray) -> np.ndarray:
    A_view = np.asarray(A_view, dtype=float).reshape(3, 3)
    if abs(np.linalg.det(A_view[:2, :2])) < 1e-12:
        raise DegenerateConfiguration("Singular view matrix")
    return np.linalg.inv(A_view)


def default_steps() -> List[StepConfig]:
    """The default seven-step ladder, escalating from plain matching to
    dense tilt synthesis."""
    strong = DetectorParams(threshold=1e-3, r_min=100, max_features=2000)
    hess = DetectorParams(threshold=1e-4, r_min=100, max_features=1000)
    dog = DetectorParams(threshold=1e-2, r_min=100, max_features=2000)
    dog_tilt = DetectorParams(threshold=1e-2, r_min=100, max_features=1000)
    return [
        StepConfig(1, "hessian", "rootsift", detector_params=strong),
        StepConfig(2, "hessian", "rootsift", tilts=(1, 5, 9), detector_params=hess),
        StepConfig(3, "dog", "rootsift", scales=(1, 0.25, 0.125), detector_params=dog),
        StepConfig(4, "dog", "rootsift", tilts=(1, 3, 6, 9), detector_params=dog_tilt),
        StepConfig(
            5,
            "hessaff",
            "rootsift",
            tilts=(1, 2, 4, 6, 8),
            detector_params=DetectorParams(
                threshold=1e-4, r_min=100, max_features=1000
            ),
        ),
        StepConfig(
            6,
            "hessaff",
            "rootsift",
            tilts=(1, 2, 4, 6, 8),
            delta_phi_base=120,
            detector_params=DetectorParams(threshold=1e-4, r_min=100, max_features=500),
        ),
        StepConfig(
            7,
            "hessaff",
            "rootsift",
            tilts=(1, 2, 4, 6, 8, 10),
            delta_phi_base=60,
            detector_params=DetectorParams(threshold=1e-4, r_min=100, max_features=400),
        ),
    ]


LADDERS = ("1-7", "2-7", "3-7", "2,4,7", "5,1-7")


def parse_ladder(ladder: str) -> List[int]:
    """Step ids of a ladder such as "5,1-7", first occurrence kept."""
    ids: List[int] = []
    for item in ladder.split(","):
        item = item.strip()
        if not item:
            raise ValueError(f"Empty item in ladder {ladder!r}")
        if "-" in item:
            lo, _, hi = item.partition("-")
            try:
                first, last = int(lo), int(hi)
            except ValueError:
                raise ValueError(f"Bad range {item!r} in ladder {ladder!r}") from None
            if last < first:
                raise ValueError(f"Empty range {item!r} in ladder {ladder!r}")
            rng: Iterable[int] = range(first, last + 1)
        else:
            try:
                rng = [int(item)]
            except ValueError:
                raise ValueError(f"Bad step {item!r} in ladder {ladder!r}") from None
        for i in rng:
            if i not in ids:
                ids.append(i)
    return ids


def select_steps(
    steps: Sequence[StepConfig], ladder: Union[str, None] = None
) -> List[StepConfig]:
    """Order and subset steps by a ladder expression (all steps if None)."""
    if ladder is None:
        return list(steps)
    by_id = {s.step_id: s for s in steps}
    out = []
    for i in parse_ladder(ladder):
        if i not in by_id:
            raise ValueError(f"Ladder {ladder!r} names unknown step {i}")
        out.append(by_id[i])
    return out
