"""
Reference kernels for descriptor-learning losses.

Everything here works on small dense arrays: the descriptor distance
matrix, hardest-in-batch negative mining, the triplet margin loss and its
hard-negative-constant variant, contrastive, softmin and positive-distance
losses with their analytic gradients, and a 2-D toy optimizer.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np

from wxbs.exceptions import InsufficientData, ModelKindError

log = logging.getLogger(__name__)

LossKind = Literal["triplet_margin", "hardnegc", "contrastive", "softmin", "posdist"]
LOSS_KINDS = ("triplet_margin", "hardnegc", "contrastive", "softmin", "posdist")
Metric = Literal["unit", "euclidean"]
UNIT_TOL = 1e-6

# Five pairs where each anchor has a foreign positive closer than its own
TOY_POINTS = np.array(
    [
        [[0.0, 0.0], [3.0, 1.0]],
        [[1.0, 0.0], [4.0, 1.0]],
        [[2.0, 0.0], [0.0, 1.0]],
        [[3.0, 0.0], [1.0, 1.0]],
        [[4.0, 0.0], [2.0, 1.0]],
    ]
)


@dataclass(frozen=True, eq=False)
class Batch:
    """Matching descriptor pairs `(a[i], b[i])`, rows unit-normalized."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape:
            raise ValueError(f"Anchor and positive shapes differ: {a.shape} {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def normalized(cls, a: np.ndarray, b: np.ndarray) -> "Batch":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls(
            a / np.linalg.norm(a, axis=1, keepdims=True),
            b / np.linalg.norm(b, axis=1, keepdims=True),
        )


@dataclass(frozen=True, eq=False)
class TripletSet:
    """Hardest negative per pair.

    Attributes:
      neg: index of the hardest negative.  For row-side triplets it is a
           positive `b[neg]`, for column-side ones an anchor `a[neg]`.
      from_row: True when the negative was taken from row i of the
                distance matrix (ties go to the row).
      d_pos: distance of each matching pair.
      d_neg: distance to the hardest negative.
    """

    neg: np.ndarray
    from_row: np.ndarray
    d_pos: np.ndarray
    d_neg: np.ndarray

    @property
    def side(self):
        return ["row" if r else "column" for r in self.from_row]


def _check_unit(x: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(x, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError(f"{what} rows must be unit-normalized")


def pairwise_distances(
    a: np.ndarray, b: np.ndarray, metric: Union[Metric, str] = "unit"
) -> np.ndarray:
    """D[i, j] = distance(a[i], b[j])."""
    if metric == "unit":
        return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * (a @ b.T)))
    elif metric == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    raise ValueError(f"Unknown metric: {metric!r}")


def distance_matrix(batch: Batch) -> np.ndarray:
    """Euclidean distances of unit descriptors, sqrt(2 - 2 <a_i, b_j>)."""
    _check_unit(batch.a, "Anchor")
    _check_unit(batch.b, "Positive")
    return pairwise_distances(batch.a, batch.b, "unit")


def hardest_in_batch(D: np.ndarray) -> TripletSet:
    """Mine the closest non-matching descriptor for every pair.

    For pair i the candidates are the row minimum `d(a_i, b_j)` and the
    column minimum `d(a_k, b_i)` (both excluding the diagonal); the
    smaller wins, ties go to the row.  Within a row or column the lowest
    index wins ties.
    """
    D = np.asarray(D, dtype=float)
    n = len(D)
    if n < 2:
        raise InsufficientData(f"Need at least 2 pairs to mine negatives, got {n}")
    M = D.copy()
    np.fill_diagonal(M, np.inf)
    idx = np.arange(n)
    j = np.argmin(M, axis=1)
    k = np.argmin(M, axis=0)
    d_row = M[idx, j]
    d_col = M[k, idx]
    from_row = d_row <= d_col
    return TripletSet(
        neg=np.where(from_row, j, k),
        from_row=from_row,
        d_pos=np.diag(D).copy(),
        d_neg=np.where(from_row, d_row, d_col),
    )


def _distances_for(
    a: np.ndarray, b: np.ndarray, triplets: TripletSet, metric: str
) -> Tuple[np.ndarray, np.ndarray]:
    neg = triplets.neg
    neg_a = np.where(triplets.from_row[:, None], a, a[neg])
    neg_b = np.where(triplets.from_row[:, None], b[neg], b)
    return _paired(a, b, metric), _paired(neg_a, neg_b, metric)


def _paired(x: np.ndarray, y: np.ndarray, metric: str) -> np.ndarray:
    if metric == "unit":
        return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * np.sum(x * y, axis=1)))
    elif metric == "euclidean":
        return np.linalg.norm(x - y, axis=1)
    raise ValueError(f"Unknown metric: {metric!r}")


def _loss_terms(kind: str, dp: np.ndarray, dn: np.ndarray, margin: float):
    """Per-pair loss values and their derivatives w.r.t. d_pos and d_neg."""
    n = len(dp)
    if kind in ("triplet_margin", "hardnegc"):
        h = margin + dp - dn
        active = (h > 0).astype(float)
        values = np.maximum(0.0, h)
        cp = active / n
        cn = -active / n if kind == "triplet_margin" else np.zeros(n)
    elif kind == "contrastive":
        h = margin - dn
        values = dp + np.maximum(0.0, h)
        cp = np.full(n, 1.0 / n)
        cn = -(h > 0).astype(float) / n
    elif kind == "softmin":
        # -log(exp(-dp) / (exp(-dp) + exp(-dn))) = softplus(dp - dn)
        values = np.logaddexp(0.0, dp - dn)
        s = 1.0 / (1.0 + np.exp(dn - dp))
        cp = s / n
        cn = -s / n
    elif kind == "posdist":
        values = dp
        cp = np.full(n, 1.0 / n)
        cn = np.zeros(n)
    else:
        raise ModelKindError(f"Unknown loss kind: {kind!r}")
    return values, cp, cn


def loss_from_arrays(
    a: np.ndarray,
    b: np.ndarray,
    kind: Union[LossKind, str],
    margin: float = 1.0,
    metric: Union[Metric, str] = "unit",
    triplets: Optional[TripletSet] = None,
) -> float:
    """Loss of raw descriptor arrays, mining hardest negatives unless
    `triplets` is given."""
    if triplets is None:
        triplets = hardest_in_batch(pairwise_distances(a, b, metric))
    dp, dn = _distances_for(a, b, triplets, metric)
    values, _, _ = _loss_terms(kind, dp, dn, margin)
    return float(np.mean(values))


def _distance_grad(x: np.ndarray, y: np.ndarray, d: np.ndarray, metric: str):
    """Derivatives of d(x, y) w.r.t. x and y, zero where d = 0."""
    safe = np.where(d > 0, d, 1.0)[:, None]
    if metric == "unit":
        gx, gy = -y / safe, -x / safe
    else:
        gx = (x - y) / safe
        gy = -gx
    zero = (d <= 0)[:, None]
    return np.where(zero, 0.0, gx), np.where(zero, 0.0, gy)


def gradient_from_arrays(
    a: np.ndarray,
    b: np.ndarray,
    kind: Union[LossKind, str],
    margin: float = 1.0,
    metric: Union[Metric, str] = "unit",
    triplets: Optional[TripletSet] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of `loss_from_arrays` w.r.t. `a` and `b`.

    Mined triplets are held fixed.  For `hardnegc` nothing flows through
    the hardest-negative distance.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if triplets is None:
        triplets = hardest_in_batch(pairwise_distances(a, b, metric))
    dp, dn = _distances_for(a, b, triplets, metric)
    _, cp, cn = _loss_terms(kind, dp, dn, margin)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    idx = np.arange(len(a))
    pa, pb = _distance_grad(a, b, dp, metric)
    ga += cp[:, None] * pa
    gb += cp[:, None] * pb
    row = triplets.from_row
    neg = triplets.neg
    # Row side: (a_i, b_neg); column side: (a_neg, b_i)
    ai = np.where(row, idx, neg)
    bi = np.where(row, neg, idx)
    na, nb = _distance_grad(a[ai], b[bi], dn, metric)
    np.add.at(ga, ai, cn[:, None] * na)
    np.add.at(gb, bi, cn[:, None] * nb)
    return ga, gb


def loss(batch: Batch, kind: Union[LossKind, str], margin: float = 1.0) -> float:
    """Loss of a batch of unit descriptors with hardest-in-batch mining.

    Kinds:
      triplet_margin: mean max(0, margin + d_pos - d_neg)
      hardnegc: same value, d_neg is a constant for differentiation
      contrastive: mean d_pos + max(0, margin - d_neg)
      softmin: mean -log(exp(-d_pos) / (exp(-d_pos) + exp(-d_neg)))
      posdist: mean d_pos
    """
    if kind not in LOSS_KINDS:
        raise ModelKindError(f"Unknown loss kind: {kind!r}")
    D = distance_matrix(batch)
    return loss_from_arrays(batch.a, batch.b, kind, margin, "unit", hardest_in_batch(D))


def loss_gradient(
    batch: Batch, kind: Union[LossKind, str], margin: float = 1.0
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of `loss` w.r.t. anchors and positives."""
    if kind not in LOSS_KINDS:
        raise ModelKindError(f"Unknown loss kind: {kind!r}")
    D = distance_matrix(batch)
    return gradient_from_arrays(
        batch.a, batch.b, kind, margin, "unit", hardest_in_batch(D)
    )


def toy_optimize(
    points: np.ndarray,
    kind: Union[LossKind, str],
    steps: int = 150,
    margin: float = 1.0,
    lr: float = 0.1,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Minimize a loss over free 2-D points with Adam.

    Args:
      points: array of shape (n, 2, 2), `points[i, 0]` is the anchor and
              `points[i, 1]` the positive of pair i.
    Returns:
      All iterates, shape (steps + 1, n, 2, 2).  Negatives are re-mined
      at every step, distances are plain Euclidean.
    """
    if kind not in LOSS_KINDS:
        raise ModelKindError(f"Unknown loss kind: {kind!r}")
    x = np.array(points, dtype=float)
    if x.ndim != 3 or x.shape[1] != 2:
        raise ValueError(f"Expected points of shape (n, 2, d), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("Toy points must be finite")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trajectory = [x.copy()]
    for t in range(1, steps + 1):
        ga, gb = gradient_from_arrays(x[:, 0], x[:, 1], kind, margin, "euclidean")
        g = np.stack([ga, gb], axis=1)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        trajectory.append(x.copy())
    out = np.stack(trajectory)
    log.debug(
        "Toy %s: loss %.4f -> %.4f after %d steps",
        kind,
        toy_loss(out[0], kind, margin),
        toy_loss(out[-1], kind, margin),
        steps,
    )
    return out


def toy_loss(
    points: np.ndarray, kind: Union[LossKind, str], margin: float = 1.0
) -> float:
    """Loss of one toy iterate (Euclidean distances, fresh mining)."""
    points = np.asarray(points, dtype=float)
    return loss_from_arrays(points[:, 0], points[:, 1], kind, margin, "euclidean")
