"""
Patch descriptors: SIFT, RootSIFT, contrast-reversal-insensitive
half-SIFT and raw normalized pixels.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Sequence, Tuple, Union

import numpy as np

from wxbs.core import Image, LocalAffineFrame, Patch, extract_patches

log = logging.getLogger(__name__)

DescriptorKind = Literal["sift", "rootsift", "halfsift", "pixels"]
DESCRIPTOR_KINDS: Tuple[str, ...] = ("sift", "rootsift", "halfsift", "pixels")
SPATIAL_BINS = 4
CLIP = 0.2
ZERO_EPS = 1e-12
# Patch side each descriptor is computed on when sampled from a frame
PATCH_SIDES: Dict[str, int] = {"sift": 32, "rootsift": 32, "halfsift": 32, "pixels": 41}
PATCH_MAG = 3 * np.sqrt(3)


@dataclass(frozen=True, eq=False)
class Descriptor:
    """A descriptor vector.

    Attributes:
      values: 1D float array.
      kind: descriptor kind.
      normalized: True if `values` has unit L2 norm.
      zero_guard: True if the input had no signal and `values` is all zeros.
    """

    values: np.ndarray
    kind: str
    normalized: bool = True
    zero_guard: bool = False

    @property
    def dim(self) -> int:
        return len(self.values)


def descriptor_dim(kind: str, side: int = PATCH_SIDES["pixels"]) -> int:
    if kind in ("sift", "rootsift"):
        return SPATIAL_BINS * SPATIAL_BINS * 8
    elif kind == "halfsift":
        return SPATIAL_BINS * SPATIAL_BINS * 4
    elif kind == "pixels":
        return side * side
    raise ValueError(f"Unknown descriptor kind: {kind!r}")


def _l2_normalize(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    ok = norm[:, 0] > ZERO_EPS
    return np.where(norm > ZERO_EPS, v / np.maximum(norm, ZERO_EPS), 0.0), ok


def _gradient_histograms(patches: np.ndarray, n_ori: int, period: float) -> np.ndarray:
    """Trilinearly binned 4x4 spatial x `n_ori` orientation histograms."""
    n, side, _ = patches.shape
    gy, gx = np.gradient(patches, axis=(1, 2))
    r = np.arange(side) - (side - 1) / 2.0
    g = np.exp(-(r**2) / (2 * (side / 2.0) ** 2))
    mag = np.hypot(gx, gy) * np.outer(g, g)
    theta = np.arctan2(gy, gx) % period
    # Continuous bin coordinates, bin centers at integer values
    b = (np.arange(side) + 0.5) * SPATIAL_BINS / side - 0.5
    rows, cols = np.meshgrid(b, b, indexing="ij")
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr = rows - r0
    fc = cols - c0
    o = theta * n_ori / period
    o0 = np.floor(o).astype(int)
    fo = o - o0
    batch = np.arange(n)[:, None, None]
    hist = np.zeros((n, SPATIAL_BINS + 2, SPATIAL_BINS + 2, n_ori))
    for dr in (0, 1):
        wr = fr if dr else 1 - fr
        for dc in (0, 1):
            wc = fc if dc else 1 - fc
            for do in (0, 1):
                wo = fo if do else 1 - fo
                np.add.at(
                    hist,
                    (batch, r0 + dr + 1, c0 + dc + 1, (o0 + do) % n_ori),
                    mag * wr * wc * wo,
                )
    return hist[:, 1:-1, 1:-1, :].reshape(n, -1)


def _sift(patches: np.ndarray, n_ori: int, period: float):
    v, ok = _l2_normalize(_gradient_histograms(patches, n_ori, period))
    v, _ = _l2_normalize(np.minimum(v, CLIP))
    return v, ok


def rootsift_from_sift(v: np.ndarray) -> np.ndarray:
    """RootSIFT from SIFT vectors: L1 normalize, square root, L2 normalize.

    Works on a single vector or on rows of a 2D array; zero rows stay zero.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    l1 = np.abs(v).sum(axis=1, keepdims=True)
    v = np.sqrt(np.where(l1 > ZERO_EPS, np.abs(v) / np.maximum(l1, ZERO_EPS), 0.0))
    v, _ = _l2_normalize(v)
    return v[0] if single else v


def describe_patches(
    patches: np.ndarray, kind: Union[DescriptorKind, str]
) -> Tuple[np.ndarray, np.ndarray]:
    """Describe a stack of square patches.

    Returns:
      (descriptors, ok) where `descriptors` is (N, D) and `ok` is False
      for patches where the zero-descriptor guard fired.
    """
    patches = np.asarray(patches, dtype=float)
    if patches.ndim != 3 or patches.shape[1] != patches.shape[2]:
        raise ValueError(f"Expected a stack of square patches, got {patches.shape}")
    n, side, _ = patches.shape
    if kind == "pixels":
        flat = patches.reshape(n, -1)
        return _l2_normalize(flat - flat.mean(axis=1, keepdims=True))
    if kind not in ("sift", "rootsift", "halfsift"):
        raise ValueError(f"Unknown descriptor kind: {kind!r}")
    if side < 16:
        raise ValueError(f"Gradient descriptors need a patch side >= 16, got {side}")
    if n == 0:
        return np.zeros((0, descriptor_dim(kind))), np.zeros(0, dtype=bool)
    if kind == "halfsift":
        return _sift(patches, 4, np.pi)
    v, ok = _sift(patches, 8, 2 * np.pi)
    if kind == "rootsift":
        v = rootsift_from_sift(v)
    return v, ok


def describe(p: Patch, kind: Union[DescriptorKind, str]) -> Descriptor:
    """Describe a single patch."""
    values, ok = describe_patches(p.data[None, :, :], kind)
    return Descriptor(values[0], kind, normalized=bool(ok[0]), zero_guard=not ok[0])


def describe_lafs(
    img: Image, lafs: Sequence[LocalAffineFrame], kind: Union[DescriptorKind, str]
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample patches for frames (3 sqrt(3) magnification) and describe them."""
    if kind not in PATCH_SIDES:
        raise ValueError(f"Unknown descriptor kind: {kind!r}")
    side = PATCH_SIDES[kind]
    if not lafs:
        return np.zeros((0, descriptor_dim(kind, side))), np.zeros(0, dtype=bool)
    centers = np.array([f.center for f in lafs])
    A = np.array([f.A for f in lafs])
    return describe_patches(extract_patches(img, centers, A, side, PATCH_MAG), kind)
