"""k-means product-quantisation baseline: ``W ~ C Gamma``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SubspaceMatrix, as_matrix
from .exceptions import InvalidK, ShapeMismatch
from .options import SolverOptions


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """One-hot assignment matrix stored as a label per sub-vector.

    ``labels[j]`` is the 0-based representative index of column ``j``.
    """

    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True).ravel()
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise ValueError(f"assignment labels must lie in [0, {self.K})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def to_dense(self) -> np.ndarray:
        """The ``K x n`` 0/1 matrix."""
        gamma = np.zeros((self.K, self.labels.size))
        gamma[self.labels, np.arange(self.labels.size)] = 1.0
        return gamma

    def members(self, i: int) -> np.ndarray:
        """Columns assigned to representative ``i``."""
        return np.flatnonzero(self.labels == i)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)


@dataclass(frozen=True, eq=False)
class VqCodebook:
    C: np.ndarray
    gamma: AssignmentMatrix
    loss_history: tuple = field(default=(), repr=False)
    n_iter: int = 0

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64, copy=True)
        if C.ndim != 2 or C.shape[1] != self.gamma.K:
            raise ShapeMismatch(f"centroid matrix {C.shape} disagrees with K={self.gamma.K}")
        if not np.all(np.isfinite(C)):
            raise ValueError("centroids must be finite")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def K(self) -> int:
        return self.gamma.K


def nearest(points: np.ndarray, reps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest representative (columns of ``reps``) for every column of ``points``.

    Returns ``(labels, squared_distances)``; ties go to the lowest index.
    Distances are evaluated from explicit differences so that near-ties are
    not reordered by cancellation.
    """
    n = points.shape[1]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    # chunk columns to bound the (K x chunk x N') temporary
    chunk = max(1, 2_000_000 // max(1, reps.shape[1] * points.shape[0]))
    for start in range(0, n, chunk):
        block = points[:, start:start + chunk]
        diff = block[:, None, :] - reps[:, :, None]
        d2 = np.einsum("dkn,dkn->kn", diff, diff)
        idx = np.argmin(d2, axis=0)
        labels[start:start + chunk] = idx
        dist[start:start + chunk] = d2[idx, np.arange(block.shape[1])]
    return labels, dist


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[1]
    centers = np.empty((X.shape[0], K))
    first = rng.integers(n)
    centers[:, 0] = X[:, first]
    d2 = np.sum((X - X[:, [first]]) ** 2, axis=0)
    for c in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[:, c] = X[:, idx]
        d2 = np.minimum(d2, np.sum((X - X[:, [idx]]) ** 2, axis=0))
    return centers


def _update_centroids(X, labels, dist, centers):
    """Means of non-empty clusters; empty ones take the worst-fit column.

    Returns the new centres and (possibly modified) labels.
    """
    K = centers.shape[1]
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros_like(centers)
    np.add.at(sums.T, labels, X.T)
    new = centers.copy()
    live = counts > 0
    new[:, live] = sums[:, live] / counts[live]
    empty = np.flatnonzero(~live)
    if empty.size:
        labels = labels.copy()
        residual = dist.copy()
        for c in empty:
            j = int(np.argmax(residual))
            new[:, c] = X[:, j]
            labels[j] = c
            residual[j] = -1.0
    return new, labels


def _lloyd(X, K, opts: SolverOptions, rng):
    centers = _kmeans_pp(X, K, rng)
    labels, dist = nearest(X, centers)
    history = [float(dist.sum())]
    n_iter = 0
    for n_iter in range(1, opts.kmeans_max_iters + 1):
        centers, labels = _update_centroids(X, labels, dist, centers)
        new_labels, dist = nearest(X, centers)
        loss = float(dist.sum())
        changed = not np.array_equal(new_labels, labels)
        labels = new_labels
        prev = history[-1]
        history.append(loss)
        if not changed:
            break
        if prev > 0 and (prev - loss) / prev < opts.kmeans_tol:
            break
    return centers, labels, history, n_iter


def kmeans_cluster(W, K: int, opts: SolverOptions | None = None) -> VqCodebook:
    """Lloyd k-means with k-means++ seeding over the columns of ``W``.

    Each Lloyd step recomputes centroids as member means (an empty cluster is
    re-seeded with the column farthest from its centroid), then reassigns
    every column to its nearest centroid.  Iteration stops when assignments
    no longer change, the relative loss improvement drops below
    ``opts.kmeans_tol``, or ``opts.kmeans_max_iters`` is reached.  With
    ``opts.restarts > 1`` the lowest-loss run is kept.
    """
    opts = opts or SolverOptions()
    X = as_matrix(W)
    n = X.shape[1]
    if int(K) != K or not 1 <= K <= n:
        raise InvalidK(f"K must be an integer in [1, {n}], got {K!r}")
    K = int(K)
    rng = np.random.default_rng(opts.seed)
    best = None
    for _ in range(opts.restarts):
        centers, labels, history, n_iter = _lloyd(X, K, opts, rng)
        if best is None or history[-1] < best[2][-1]:
            best = (centers, labels, history, n_iter)
    centers, labels, history, n_iter = best
    return VqCodebook(centers, AssignmentMatrix(labels, K), tuple(history), n_iter)


def vq_approximate(cb: VqCodebook, shape=None, index: int = 0):
    """Gather ``C[:, labels]``; wrapped in a SubspaceMatrix when ``shape`` is given."""
    approx = cb.C[:, cb.gamma.labels]
    if shape is None:
        return approx
    return SubspaceMatrix(approx, shape, index)


def vq_loss(W, cb: VqCodebook) -> float:
    """``||W - C Gamma||_F^2``."""
    X = as_matrix(W)
    return float(np.sum((X - cb.C[:, cb.gamma.labels]) ** 2))
