"""
Basic types and affine-frame algebra shared by the whole matcher.

Coordinates follow the image convention: `x` runs along columns, `y`
along rows (downwards), and pixel centers sit on integer coordinates.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Literal, NamedTuple, Sequence, Union

import numpy as np
from scipy import ndimage

from wxbs.exceptions import DegenerateConfiguration, ImageError
from wxbs.utils import rotation

log = logging.getLogger(__name__)

NormalizationMode = Literal["zero-mean-unit-std", "mean0.5-var0.2"]
STD_EPS = 1e-8
MAX_CONDITION = 1e6


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale raster with intensities in [0, 1].

    Attributes:
      data: 2D float array of shape (height, width), read-only.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ImageError(f"Image must be a non-empty 2D raster, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ImageError("Image contains non-finite intensities")
        np.clip(data, 0.0, 1.0, out=data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


class AffineDecomposition(NamedTuple):
    """A = lam * R(psi) * diag(t, 1) * R(phi)"""

    lam: float
    psi: float
    t: float
    phi: float


@dataclass(frozen=True, eq=False)
class LocalAffineFrame:
    """A keypoint with its measurement ellipse.

    Attributes:
      x, y: center in original-image pixel coordinates.
      A: 2x2 matrix mapping the unit circle onto the measurement
         ellipse (pixels).
      response: detector response magnitude.
      view_id: index of the synthesized view the frame was found in.
      detector: detector tag ("hessian", "dog", "hessaff").
    """

    x: float
    y: float
    A: np.ndarray
    response: float = 0.0
    view_id: int = 0
    detector: str = ""

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float).reshape(2, 2)
        if not np.linalg.det(A) > 0:
            raise DegenerateConfiguration(f"LAF matrix must have det > 0: {A!r}")
        if not np.isfinite(self.response):
            raise DegenerateConfiguration("LAF response must be finite")
        object.__setattr__(self, "A", A)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class Patch:
    """Square sampled patch."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] == 0:
            raise ImageError(f"Patch must be square and non-empty, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def side(self) -> int:
        return self.data.shape[0]


@dataclass
class FeatureSet:
    """Local features of one image stored as parallel arrays.

    Attributes:
      centers: (N, 2) centers in original-image coordinates.
      A: (N, 2, 2) affine shapes.
      response: (N,) detector responses.
      view_id: (N,) originating view indices.
      pool: (N,) pool keys; features are only ever matched within a pool.
      descriptors: (N, D) descriptor vectors.
    """

    centers: np.ndarray
    A: np.ndarray
    response: np.ndarray
    view_id: np.ndarray
    pool: np.ndarray
    descriptors: np.ndarray
    detector: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.centers)
        self.centers = np.asarray(self.centers, dtype=float).reshape(n, 2)
        self.A = np.asarray(self.A, dtype=float).reshape(n, 2, 2)
        self.response = np.asarray(self.response, dtype=float).reshape(n)
        self.view_id = np.asarray(self.view_id, dtype=np.int64).reshape(n)
        self.pool = np.asarray(self.pool, dtype=object).reshape(n)
        descriptors = np.asarray(self.descriptors, dtype=float)
        if descriptors.ndim != 2:
            descriptors = descriptors.reshape(n, -1) if n else descriptors.reshape(0, 0)
        self.descriptors = descriptors
        if not self.detector:
            self.detector = [""] * n
        if len(self.detector) != n:
            raise ValueError("detector tags do not match feature count")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @classmethod
    def empty(cls, dim: int = 0) -> "FeatureSet":
        return cls(
            np.zeros((0, 2)),
            np.zeros((0, 2, 2)),
            np.zeros(0),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=object),
            np.zeros((0, dim)),
        )

    @classmethod
    def from_lafs(
        cls,
        lafs: Sequence[LocalAffineFrame],
        descriptors: Union[np.ndarray, None] = None,
        pool: str = "",
    ) -> "FeatureSet":
        n = len(lafs)
        if descriptors is None:
            descriptors = np.zeros((n, 0))
        return cls(
            np.array([(f.x, f.y) for f in lafs]).reshape(n, 2),
            np.array([f.A for f in lafs]).reshape(n, 2, 2),
            np.array([f.response for f in lafs]),
            np.array([f.view_id for f in lafs]),
            np.array([pool] * n, dtype=object),
            descriptors,
            [f.detector for f in lafs],
        )

    @property
    def lafs(self) -> List[LocalAffineFrame]:
        return [
            LocalAffineFrame(c[0], c[1], a, r, int(v), d)
            for c, a, r, v, d in zip(
                self.centers, self.A, self.response, self.view_id, self.detector
            )
        ]

    def select(self, idx: Union[np.ndarray, Sequence[int]]) -> "FeatureSet":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        elif idx.size == 0:
            idx = idx.astype(np.int64)
        return FeatureSet(
            self.centers[idx],
            self.A[idx],
            self.response[idx],
            self.view_id[idx],
            self.pool[idx],
            self.descriptors[idx],
            [self.detector[i] for i in idx],
        )

    @classmethod
    def concat(cls, sets: Iterable["FeatureSet"]) -> "FeatureSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        dims = {s.dim for s in sets}
        if len(dims) > 1:
            # Pools of different descriptor kinds: pad to the widest, the
            # padding never matters because pools are matched separately.
            width = max(dims)
            descs = [
                np.pad(s.descriptors, ((0, 0), (0, width - s.dim))) for s in sets
            ]
        else:
            descs = [s.descriptors for s in sets]
        return cls(
            np.concatenate([s.centers for s in sets]),
            np.concatenate([s.A for s in sets]),
            np.concatenate([s.response for s in sets]),
            np.concatenate([s.view_id for s in sets]),
            np.concatenate([s.pool for s in sets]),
            np.concatenate(descs),
            [d for s in sets for d in s.detector],
        )


def to_grayscale(rgb: Union[np.ndarray, Sequence[np.ndarray]]) -> Image:
    """Convert a 3-channel raster to grayscale by channel averaging.

    Args:
      rgb: either an (H, W, 3) array or a sequence of three (H, W) channels,
           intensities in [0, 1].
    """
    if isinstance(rgb, np.ndarray) and rgb.ndim == 3:
        if rgb.shape[2] != 3:
            raise ImageError(f"Expected 3 channels, got {rgb.shape[2]}")
        channels = [rgb[:, :, i] for i in range(3)]
    else:
        channels = [np.asarray(c, dtype=float) for c in rgb]
        if len(channels) != 3:
            raise ImageError(f"Expected 3 channels, got {len(channels)}")
        shapes = {c.shape for c in channels}
        if len(shapes) != 1:
            raise ImageError(f"Channel dimensions differ: {sorted(shapes)}")
    r, g, b = (np.asarray(c, dtype=float) for c in channels)
    return Image((r + g + b) / 3.0)


def decompose_affine(A: np.ndarray) -> AffineDecomposition:
    """Decompose A = lam * R(psi) * diag(t, 1) * R(phi).

    `lam` is the smaller singular value and `t` the singular value ratio
    (so det A = lam^2 t), `phi` is in [0, pi) and `psi` in [0, 2 pi).

    Raises:
      DegenerateConfiguration: det(A) <= 0 or non-finite entries.
    """
    A = np.asarray(A, dtype=float).reshape(2, 2)
    if not np.all(np.isfinite(A)) or not np.linalg.det(A) > 0:
        raise DegenerateConfiguration(f"Cannot decompose {A!r}: need det > 0")
    U, s, Vt = np.linalg.svd(A)
    if np.linalg.det(U) < 0:
        # Both factors are reflections, flip one singular pair in each.
        U[:, 0] = -U[:, 0]
        Vt[0, :] = -Vt[0, :]
    lam = s[1]
    t = s[0] / s[1]
    if t - 1.0 <= 1e-12:
        # Isotropic: the tilt axis is arbitrary, put everything in psi.
        M = U @ Vt
        return AffineDecomposition(
            lam, float(np.arctan2(M[1, 0], M[0, 0]) % (2 * np.pi)), 1.0, 0.0
        )
    phi = float(np.arctan2(Vt[1, 0], Vt[0, 0]))
    psi = float(np.arctan2(U[1, 0], U[0, 0]))
    # R(phi + pi) = -R(phi) and -I commutes with the tilt
    if phi < 0:
        phi += np.pi
        psi += np.pi
    elif phi >= np.pi:
        phi -= np.pi
        psi += np.pi
    return AffineDecomposition(float(lam), psi % (2 * np.pi), float(t), phi)


def compose_affine(d: AffineDecomposition) -> np.ndarray:
    """Returns lam * R(psi) * diag(t, 1) * R(phi)."""
    return d.lam * rotation(d.psi) @ np.diag([d.t, 1.0]) @ rotation(d.phi)


def residual_shape(A_prime: np.ndarray) -> np.ndarray:
    """Residual A'' = A' - I of a lower-triangular, unit-determinant shape."""
    A_prime = np.asarray(A_prime, dtype=float).reshape(2, 2)
    if abs(A_prime[0, 1]) > 1e-12:
        raise DegenerateConfiguration("Affine shape must be lower triangular")
    if abs(np.linalg.det(A_prime) - 1.0) > 1e-6:
        raise DegenerateConfiguration(
            f"Affine shape must have unit determinant, got {np.linalg.det(A_prime)}"
        )
    return A_prime - np.eye(2)


def residual_shape_inverse(residual: np.ndarray) -> np.ndarray:
    return np.asarray(residual, dtype=float).reshape(2, 2) + np.eye(2)


def patch_grid(side: int) -> np.ndarray:
    """Patch pixel offsets from the patch center, shape (side*side, 2) as (u, v)."""
    r = np.arange(side) - (side - 1) / 2.0
    uu, vv = np.meshgrid(r, r)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def extract_patches(
    img: Image,
    centers: np.ndarray,
    A: np.ndarray,
    side: int,
    mag: float,
) -> np.ndarray:
    """Sample square patches for many frames at once.

    Patch pixel `u` (offset from the patch center) is read from
    `center + (2 * mag / side) * A @ u` with bilinear interpolation and
    border replication, so the patch edge covers `mag` units of `A`.

    Returns:
      Array of shape (N, side, side).
    """
    if side < 3:
        raise ValueError(f"Patch side must be at least 3, got {side}")
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    A = np.asarray(A, dtype=float).reshape(-1, 2, 2)
    if len(centers) == 0:
        return np.zeros((0, side, side))
    cond = np.linalg.cond(A)
    if np.any(~np.isfinite(cond)) or np.any(cond > MAX_CONDITION):
        raise DegenerateConfiguration("Degenerate affine frame (ill-conditioned A)")
    grid = patch_grid(side) * (2.0 * mag / side)
    # (N, side*side, 2): x, y sample positions
    pos = centers[:, None, :] + np.einsum("nij,kj->nki", A, grid)
    coords = np.stack([pos[..., 1].ravel(), pos[..., 0].ravel()])
    vals = ndimage.map_coordinates(img.data, coords, order=1, mode="nearest")
    return vals.reshape(len(centers), side, side)


def extract_patch(
    img: Image, laf: LocalAffineFrame, side: int, mag: float
) -> Patch:
    """Sample one patch for a local affine frame, see `extract_patches`."""
    return Patch(extract_patches(img, laf.center, laf.A, side, mag)[0])


def normalize_patch_array(
    data: np.ndarray, mode: NormalizationMode = "zero-mean-unit-std"
) -> np.ndarray:
    """Photometric normalization over the last two axes."""
    mean = data.mean(axis=(-2, -1), keepdims=True)
    std = data.std(axis=(-2, -1), keepdims=True)
    z = np.where(std > STD_EPS, (data - mean) / np.maximum(std, STD_EPS), 0.0)
    if mode == "zero-mean-unit-std":
        return z
    elif mode == "mean0.5-var0.2":
        return 0.5 + np.sqrt(0.2) * z
    raise ValueError(f"Unknown normalization mode: {mode!r}")


def photometric_normalize(
    p: Patch, mode: NormalizationMode = "zero-mean-unit-std"
) -> Patch:
    """Normalize patch statistics.

    Modes:
      zero-mean-unit-std: subtract the mean, divide by the standard deviation.
      mean0.5-var0.2: shift and scale to mean 0.5 and variance 0.2.
    """
    return Patch(normalize_patch_array(p.data, mode))
