"""
Tentative correspondences: exact nearest neighbours, the second-nearest
ratio test, its geometrically-inconsistent variant (FGINN), bidirectional
combination and duplicate filtering.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from wxbs.core import FeatureSet
from wxbs.exceptions import InsufficientData

log = logging.getLogger(__name__)

Strategy = Literal["unidirectional", "both", "either"]
SearchMethod = Literal["brute", "kdtree"]
# Rows of the query processed at once by the brute-force search
CHUNK = 512
# Neighbours fetched before falling back to a full scan in FGINN
FGINN_CANDIDATES = 10


class Correspondence(NamedTuple):
    """A tentative match.

    Attributes:
      idx_a: feature index in image 1.
      idx_b: feature index in image 2.
      distance: descriptor distance.
      ratio: ratio used for filtering, 0 if there was no competitor.
      duplicates: number of correspondences merged into this one.
    """

    idx_a: int
    idx_b: int
    distance: float
    ratio: float
    duplicates: int = 0


@dataclass(frozen=True)
class MatcherParams:
    """Matching settings.

    Attributes:
      ratio_threshold: keep matches with ratio <= this.
      fginn_radius: competitors closer than this (pixels) to the first
                    nearest neighbour are skipped; 0 gives the plain ratio test.
      strategy: "unidirectional", "both" (mutual) or "either" (union).
      method: "brute" (exact, lower index wins ties) or "kdtree".
    """

    ratio_threshold: float = 0.8
    fginn_radius: float = 10.0
    strategy: Strategy = "both"
    method: SearchMethod = "brute"

    def __post_init__(self) -> None:
        if not 0 < self.ratio_threshold <= 1:
            raise ValueError(
                f"ratio_threshold must be in (0, 1], got {self.ratio_threshold}"
            )
        if self.fginn_radius < 0:
            raise ValueError("fginn_radius must be >= 0")
        if self.strategy not in ("unidirectional", "both", "either"):
            raise ValueError(f"Unknown matching strategy: {self.strategy!r}")
        if self.method not in ("brute", "kdtree"):
            raise ValueError(f"Unknown search method: {self.method!r}")


def nn_search(
    query: np.ndarray,
    base: np.ndarray,
    k: int,
    method: Union[SearchMethod, str] = "brute",
) -> Tuple[np.ndarray, np.ndarray]:
    """k nearest neighbours by Euclidean distance.

    Returns:
      (indices, distances), both of shape (len(query), k), nearest first.
      The brute-force method breaks ties by lower index.
    """
    query = np.atleast_2d(np.asarray(query, dtype=float))
    base = np.atleast_2d(np.asarray(base, dtype=float))
    if len(base) == 0 or base.size == 0:
        raise InsufficientData("Cannot search an empty base")
    if query.shape[1] != base.shape[1]:
        raise ValueError(
            f"Descriptor dimensions differ: {query.shape[1]} != {base.shape[1]}"
        )
    if not 1 <= k <= len(base):
        raise ValueError(f"k must be in [1, {len(base)}], got {k}")
    if len(query) == 0:
        return np.zeros((0, k), dtype=np.int64), np.zeros((0, k))
    if method == "kdtree":
        dist, idx = cKDTree(base).query(query, k=k)
        return (
            np.asarray(idx, dtype=np.int64).reshape(len(query), k),
            np.asarray(dist, dtype=float).reshape(len(query), k),
        )
    elif method != "brute":
        raise ValueError(f"Unknown search method: {method!r}")
    base_sq = np.sum(base * base, axis=1)
    out = np.empty((len(query), k), dtype=np.int64)
    for start in range(0, len(query), CHUNK):
        q = query[start : start + CHUNK]
        d2 = np.sum(q * q, axis=1)[:, None] + base_sq[None, :] - 2.0 * (q @ base.T)
        out[start : start + CHUNK] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    # Exact distances for the selected neighbours
    dist = np.linalg.norm(query[:, None, :] - base[out], axis=2)
    return out, dist


def snn_match(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    r: float = 0.8,
    method: Union[SearchMethod, str] = "brute",
) -> List[Correspondence]:
    """Second-nearest-neighbour ratio test."""
    if len(desc_b) < 2:
        raise InsufficientData("The ratio test needs at least 2 features to match to")
    idx, dist = nn_search(desc_a, desc_b, 2, method)
    out = []
    for i, ((j, _), (d1, d2)) in enumerate(zip(idx, dist)):
        ratio = d1 / d2 if d2 > 0 else 1.0
        if ratio <= r:
            out.append(Correspondence(i, int(j), float(d1), float(ratio)))
    return out


def _first_inconsistent(
    idx: np.ndarray, centers_b: np.ndarray, radius: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Column of the first neighbour at least `radius` away from the first one."""
    spatial = np.linalg.norm(centers_b[idx] - centers_b[idx[:, :1]], axis=2)
    ok = spatial >= radius
    ok[:, 0] = False
    return np.argmax(ok, axis=1), ok.any(axis=1)


def fginn_match(
    centers_a: np.ndarray,
    desc_a: np.ndarray,
    centers_b: np.ndarray,
    desc_b: np.ndarray,
    r: float = 0.8,
    radius: float = 10.0,
    method: Union[SearchMethod, str] = "brute",
) -> List[Correspondence]:
    """Ratio test against the first geometrically inconsistent neighbour.

    The denominator is the descriptor distance to the nearest neighbour
    whose center is at least `radius` pixels from the center of the first
    nearest neighbour.  Matches without such a competitor are kept with
    ratio 0.
    """
    del centers_a  # queries are not filtered spatially
    desc_b = np.atleast_2d(np.asarray(desc_b, dtype=float))
    centers_b = np.asarray(centers_b, dtype=float).reshape(-1, 2)
    n_b = len(desc_b)
    if n_b == 0:
        raise InsufficientData("Cannot match against an empty feature set")
    k = min(n_b, FGINN_CANDIDATES)
    idx, dist = nn_search(desc_a, desc_b, k, method)
    col, found = _first_inconsistent(idx, centers_b, radius)
    d2 = dist[np.arange(len(idx)), col]
    has = found.copy()
    if k < n_b and not np.all(found):
        # Some queries need the full neighbour ranking
        redo = np.flatnonzero(~found)
        fidx, fdist = nn_search(np.atleast_2d(desc_a)[redo], desc_b, n_b, method)
        fcol, ffound = _first_inconsistent(fidx, centers_b, radius)
        d2[redo] = fdist[np.arange(len(redo)), fcol]
        has[redo] = ffound
    out = []
    for i in range(len(idx)):
        d1 = float(dist[i, 0])
        if not has[i]:
            ratio = 0.0
        elif d2[i] > 0:
            ratio = d1 / float(d2[i])
        else:
            ratio = 1.0
        if ratio <= r:
            out.append(Correspondence(i, int(idx[i, 0]), d1, ratio))
    return out


def combine(
    m_ab: Sequence[Correspondence],
    m_ba: Sequence[Correspondence],
    strategy: Union[Strategy, str],
) -> List[Correspondence]:
    """Combine matches found in both directions.

    `m_ba` holds matches from image 2 to image 1, so its `idx_a` indexes
    image 2.  "both" keeps the pairs found in both directions, "either"
    takes the union keeping the smaller ratio, "unidirectional" returns
    `m_ab` unchanged.
    """
    if strategy == "unidirectional":
        return list(m_ab)
    swapped = [c._replace(idx_a=c.idx_b, idx_b=c.idx_a) for c in m_ba]
    if strategy == "both":
        back = {(c.idx_a, c.idx_b) for c in swapped}
        return [c for c in m_ab if (c.idx_a, c.idx_b) in back]
    elif strategy == "either":
        merged: Dict[Tuple[int, int], Correspondence] = {}
        for c in list(m_ab) + swapped:
            key = (c.idx_a, c.idx_b)
            if key not in merged or c.ratio < merged[key].ratio:
                merged[key] = c
        return list(merged.values())
    raise ValueError(f"Unknown matching strategy: {strategy!r}")


def match_features(
    f1: FeatureSet, f2: FeatureSet, params: MatcherParams = MatcherParams()
) -> List[Correspondence]:
    """FGINN-match two feature sets pool by pool.

    Pools are visited in sorted order and indices refer to the full sets.
    """
    out: List[Correspondence] = []
    pools = sorted(set(f1.pool.tolist()) & set(f2.pool.tolist()), key=str)
    for pool in pools:
        ia = np.flatnonzero(f1.pool == pool)
        ib = np.flatnonzero(f2.pool == pool)
        da = f1.descriptors[ia]
        db = f2.descriptors[ib]
        m_ab = fginn_match(
            f1.centers[ia],
            da,
            f2.centers[ib],
            db,
            params.ratio_threshold,
            params.fginn_radius,
            params.method,
        )
        m_ba: List[Correspondence] = []
        if params.strategy != "unidirectional":
            m_ba = fginn_match(
                f2.centers[ib],
                db,
                f1.centers[ia],
                da,
                params.ratio_threshold,
                params.fginn_radius,
                params.method,
            )
        for c in combine(m_ab, m_ba, params.strategy):
            out.append(c._replace(idx_a=int(ia[c.idx_a]), idx_b=int(ib[c.idx_b])))
        log.debug("Pool %r: %d x %d features", pool, len(ia), len(ib))
    return out


def duplicate_filter(
    corrs: Sequence[Correspondence],
    centers1: np.ndarray,
    centers2: np.ndarray,
    radius: float = 3.0,
) -> List[Correspondence]:
    """Merge correspondences whose endpoints are within `radius` pixels in
    both images.

    Correspondences are visited by increasing ratio; each one joins the
    first earlier survivor it is close to, otherwise it survives itself.
    Survivors are returned in input order with their `duplicates` count
    increased by the number of correspondences they absorbed.
    """
    n = len(corrs)
    if n == 0:
        return []
    p1 = np.asarray(centers1, dtype=float)[[c.idx_a for c in corrs]]
    p2 = np.asarray(centers2, dtype=float)[[c.idx_b for c in corrs]]
    tree = cKDTree(p1)
    near1 = tree.query_ball_point(p1, r=radius)
    order = sorted(range(n), key=lambda i: (corrs[i].ratio, i))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    owner = np.full(n, -1, dtype=np.int64)
    absorbed = np.zeros(n, dtype=np.int64)
    for i in order:
        cands = [
            j
            for j in near1[i]
            if j != i
            and owner[j] == j
            and np.linalg.norm(p2[j] - p2[i]) <= radius
        ]
        if cands:
            j = min(cands, key=lambda c: rank[c])
            owner[i] = j
            absorbed[j] += 1 + corrs[i].duplicates
        else:
            owner[i] = i
    out = [
        c._replace(duplicates=c.duplicates + int(absorbed[i]))
        for i, c in enumerate(corrs)
        if owner[i] == i
    ]
    if len(out) < n:
        log.debug("Duplicate filter: %d -> %d correspondences", n, len(out))
    return out
