"""scikit-learn compatible estimators over kernel sub-vectors and whole layers.

Subspace estimators follow the sklearn sample convention: rows of ``X`` are
kernel sub-vectors (the transpose of the column layout used elsewhere).
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .container import CodebookContainer
from .core import SubspacePartition, aggregate_errors, partition_kernels, quantization_error, reconstruct_kernels
from .dl import solve
from .options import SolverOptions, subspace_seed
from .planner import plan
from .validation import check_cluster_count, check_count, check_kernels, check_subvectors, seed_from
from .vq import VqCodebook, kmeans_cluster, nearest


class VQQuantizer(TransformerMixin, BaseEstimator):
    """k-means codebook for sub-vectors.

    Parameters
    ----------
    n_clusters : int, default=8
        Number of centroids ``K_vq``.
    max_iter : int, default=100
        Lloyd iteration cap.
    tol : float, default=1e-6
        Relative loss improvement below which iteration stops.
    n_init : int, default=1
        k-means++ restarts; the lowest-loss run is kept.
    random_state : int, RandomState or None, default=0

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
        Squared error of the fitted samples.
    codebook_ : VqCodebook
    """

    def __init__(self, n_clusters=8, max_iter=100, tol=1e-6, n_init=1, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_subvectors(X)
        K = check_cluster_count(self.n_clusters, "n_clusters", X.shape[0])
        opts = SolverOptions(
            seed=seed_from(self.random_state),
            restarts=check_count(self.n_init, "n_init"),
            kmeans_max_iters=check_count(self.max_iter, "max_iter"),
            kmeans_tol=self.tol,
        )
        self.codebook_ = kmeans_cluster(X.T, K, opts)
        self.cluster_centers_ = self.codebook_.C.T.copy()
        self.labels_ = np.array(self.codebook_.gamma.labels)
        self.inertia_ = float(self.codebook_.loss_history[-1])
        self.n_iter_ = self.codebook_.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Index of the nearest centroid for each sample."""
        check_is_fitted(self, "codebook_")
        X = check_subvectors(X, n_features=self.n_features_in_, owner=type(self).__name__)
        return nearest(X.T, self.codebook_.C)[0]

    def transform(self, X):
        """Replace every sample by its nearest centroid."""
        return self.cluster_centers_[self.predict(X)]

    def score(self, X, y=None):
        """Negative squared quantisation error (higher is better)."""
        X = check_subvectors(X, n_features=getattr(self, "n_features_in_", None), owner=type(self).__name__)
        return -float(np.sum((X - self.transform(X)) ** 2))


class DLQuantizer(TransformerMixin, BaseEstimator):
    """Sparse-structured codebook: representatives are ``sparsity``-sparse
    combinations of ``n_atoms`` unit-norm atoms.

    Attributes
    ----------
    components_ : ndarray of shape (n_atoms, n_features)
        Dictionary atoms as rows.
    codes_ : sparse matrix of shape (n_representatives, n_atoms)
    representatives_ : ndarray of shape (n_representatives, n_features)
    labels_ : ndarray of shape (n_samples,)
    trace_ : SolveTrace
    codebook_ : DlCodebook
    """

    def __init__(
        self,
        n_representatives=24,
        n_atoms=6,
        sparsity=2,
        max_iter=30,
        tol=1e-4,
        init_iter=20,
        omp_guard=True,
        random_state=0,
    ):
        self.n_representatives = n_representatives
        self.n_atoms = n_atoms
        self.sparsity = sparsity
        self.max_iter = max_iter
        self.tol = tol
        self.init_iter = init_iter
        self.omp_guard = omp_guard
        self.random_state = random_state

    def _options(self):
        return SolverOptions(
            max_iters=check_count(self.max_iter, "max_iter"),
            tol=self.tol,
            seed=seed_from(self.random_state),
            omp_guard=bool(self.omp_guard),
            init_iters=check_count(self.init_iter, "init_iter", minimum=0),
        )

    def fit(self, X, y=None):
        X = check_subvectors(X)
        K = check_cluster_count(self.n_representatives, "n_representatives", X.shape[0])
        L = check_count(self.n_atoms, "n_atoms")
        alpha = check_count(self.sparsity, "sparsity", minimum=0, maximum=L)
        self.codebook_, self.trace_ = solve(X.T, K, L, alpha, self._options())
        self._set_attributes(X.shape[1])
        return self

    def _set_attributes(self, n_features):
        cb = self.codebook_
        self.components_ = cb.D.T.copy()
        self.codes_ = cb.Lambda.T.tocsr()
        self.representatives_ = cb.representatives.T.copy()
        self.labels_ = np.array(cb.gamma.labels)
        self.n_features_in_ = n_features
        self.n_iter_ = self.trace_.n_iter

    def predict(self, X):
        check_is_fitted(self, "codebook_")
        X = check_subvectors(X, n_features=self.n_features_in_, owner=type(self).__name__)
        return nearest(X.T, self.representatives_.T)[0]

    def transform(self, X):
        return self.representatives_[self.predict(X)]

    def score(self, X, y=None):
        X = check_subvectors(X, n_features=getattr(self, "n_features_in_", None), owner=type(self).__name__)
        return -float(np.sum((X - self.transform(X)) ** 2))


class KernelQuantizer(TransformerMixin, BaseEstimator):
    """Plan and fit per-subspace codebooks for one conv layer.

    ``fit`` takes a KernelSet or an ``(M, N, p, p)`` array, plans the
    equal-budget configuration for ``rho``, and fits one codebook per
    subspace.  ``transform`` returns approximated kernels of the same
    extent, assigning each sub-vector to its nearest learned representative.

    Parameters
    ----------
    method : {"dl", "vq"}, default="dl"
    nprime : int, default=8
        Subspace dimension ``N'``.
    rho : float, default=8.0
        Target acceleration.
    c : float, default=3.0
        ``K_dl / K_vq``.
    alpha : int, default=2
        Sparsity level (DL only).
    input_side : int or None
        Spatial input side ``m`` for raw arrays; only affects reported costs.
    """

    def __init__(
        self,
        method="dl",
        nprime=8,
        rho=8.0,
        c=3.0,
        alpha=2,
        max_iter=30,
        tol=1e-4,
        init_iter=20,
        omp_guard=True,
        input_side=None,
        random_state=0,
    ):
        self.method = method
        self.nprime = nprime
        self.rho = rho
        self.c = c
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.init_iter = init_iter
        self.omp_guard = omp_guard
        self.input_side = input_side
        self.random_state = random_state

    def _options(self, subspace: int) -> SolverOptions:
        seed = subspace_seed(seed_from(self.random_state), subspace)
        return SolverOptions(
            max_iters=check_count(self.max_iter, "max_iter"),
            tol=self.tol,
            seed=seed,
            omp_guard=bool(self.omp_guard),
            init_iters=check_count(self.init_iter, "init_iter", minimum=0),
        )

    def fit(self, X, y=None):
        if self.method not in ("dl", "vq"):
            raise ValueError(f"method must be 'dl' or 'vq', got {self.method!r}")
        kernels = check_kernels(X, self.input_side)
        shape = kernels.shape
        self.plan_ = plan(shape, check_count(self.nprime, "nprime"), self.rho, self.c, self.alpha)
        self.partition_ = SubspacePartition.from_channels(shape.N, Nprime=self.nprime)
        mats = partition_kernels(kernels, self.partition_)
        codebooks, reports, traces = [], [], []
        for s, W in enumerate(mats):
            opts = self._options(s)
            if self.method == "vq":
                cb = kmeans_cluster(W, self.plan_.K_vq, opts)
                approx = cb.C[:, cb.gamma.labels]
                traces.append(None)
            else:
                cb, trace = solve(W, self.plan_.K_dl, self.plan_.L_dl, self.plan_.alpha, opts)
                approx = cb.representatives[:, cb.gamma.labels]
                traces.append(trace)
            codebooks.append(cb)
            reports.append(quantization_error(W, approx))
        self.shape_ = shape
        self.codebooks_ = tuple(codebooks)
        self.subspace_errors_ = reports
        self.error_ = aggregate_errors(reports)
        self.traces_ = traces
        self.n_features_in_ = shape.N
        return self

    def _representatives(self, s):
        cb = self.codebooks_[s]
        return cb.C if isinstance(cb, VqCodebook) else cb.representatives

    def transform(self, X):
        """Approximated kernels, ``(M, N, p, p)`` float32."""
        check_is_fitted(self, "codebooks_")
        kernels = check_kernels(X, self.shape_.m)
        if kernels.shape.kernel_extent != self.shape_.kernel_extent:
            raise ValueError(f"kernels {kernels.shape.kernel_extent} differ from fitted {self.shape_.kernel_extent}")
        mats = partition_kernels(kernels, self.partition_)
        approx = []
        for s, W in enumerate(mats):
            reps = self._representatives(s)
            labels, _ = nearest(np.asarray(W.data, dtype=np.float64), reps)
            approx.append(reps[:, labels])
        return reconstruct_kernels(approx, kernels.shape).weights.copy()

    def approximate(self):
        """Approximated training kernels as a KernelSet (fitted assignments)."""
        check_is_fitted(self, "codebooks_")
        mats = [self._representatives(s)[:, cb.gamma.labels] for s, cb in enumerate(self.codebooks_)]
        return reconstruct_kernels(mats, self.shape_)

    def container(self) -> CodebookContainer:
        check_is_fitted(self, "codebooks_")
        return CodebookContainer(self.method, self.shape_, self.partition_, self.codebooks_)

    def score(self, X, y=None):
        """Negative layer relative Frobenius error of :meth:`transform`."""
        kernels = check_kernels(X, getattr(self, "shape_", None) and self.shape_.m)
        approx = self.transform(kernels)
        diff = kernels.weights.astype(np.float64) - approx
        return -float(np.linalg.norm(diff) / np.linalg.norm(kernels.weights.astype(np.float64)))
