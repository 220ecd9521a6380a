"""Structured codebook ``W ~ D Lambda Gamma`` learned by alternating minimisation.

Representatives are ``alpha``-sparse combinations of ``L`` unit-norm atoms.
Each outer iteration re-codes every cluster mean by OMP, sweeps the atoms
with a coordinate-descent (SGK-style) update, and reassigns every sub-vector
to its nearest representative.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import SubspaceMatrix, as_matrix
from .exceptions import InvalidK, ShapeMismatch
from .options import SolverOptions
from .vq import AssignmentMatrix, kmeans_cluster, nearest

RCOND = 1e-10
RESIDUAL_FLOOR = 1e-12
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DlCodebook:
    """Dictionary ``D`` (``N' x L``), sparse codes ``Lambda`` (``L x K``), assignments."""

    D: np.ndarray
    Lambda: sp.csc_matrix
    gamma: AssignmentMatrix
    alpha: int

    def __post_init__(self):
        D = np.array(self.D, dtype=np.float64, copy=True)
        Lam = sp.csc_matrix(self.Lambda, copy=True)
        if D.ndim != 2 or Lam.shape != (D.shape[1], self.gamma.K):
            raise ShapeMismatch(
                f"D {D.shape}, Lambda {Lam.shape} and K={self.gamma.K} are inconsistent"
            )
        norms = np.linalg.norm(D, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("dictionary atoms must have unit l2 norm")
        if Lam.shape[1] and np.diff(Lam.indptr).max(initial=0) > self.alpha:
            raise ValueError(f"a code column has more than alpha={self.alpha} stored entries")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Lambda", Lam)

    @property
    def K(self) -> int:
        return self.gamma.K

    @property
    def L(self) -> int:
        return self.D.shape[1]

    @property
    def Nprime(self) -> int:
        return self.D.shape[0]

    @property
    def representatives(self) -> np.ndarray:
        """``D Lambda`` as a dense ``N' x K`` matrix."""
        return np.asarray(self.Lambda.T.dot(self.D.T).T)

    def code(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Stored ``(indices, values)`` of code column ``j``."""
        lo, hi = self.Lambda.indptr[j], self.Lambda.indptr[j + 1]
        return self.Lambda.indices[lo:hi], self.Lambda.data[lo:hi]

    def nnz_per_column(self) -> np.ndarray:
        return np.diff(self.Lambda.indptr)


@dataclass
class SolveTrace:
    """Objective history of one solve.

    ``objectives[0]`` is the objective of the initial solution and each
    further entry the objective at the end of an outer iteration.
    ``stages`` holds ``(iteration, stage, objective)`` after every stage.
    """

    objectives: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    rank_deficient: int = 0
    omp_rejections: int = 0
    reinitialised_atoms: int = 0
    n_iter: int = 0

    def record(self, iteration, stage, objective):
        self.stages.append((iteration, stage, float(objective)))

    def stage_values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.stages])

    def add_time(self, stage, seconds):
        self.timings[stage] = self.timings.get(stage, 0.0) + seconds


@dataclass(frozen=True)
class SparseCode:
    """OMP result for one cluster: support, coefficients and mean residual norm."""

    indices: np.ndarray
    values: np.ndarray
    residual_norm: float
    rank_deficient: bool = False

    def to_dense(self, L: int) -> np.ndarray:
        z = np.zeros(L)
        z[self.indices] = self.values
        return z


def _omp(targets: np.ndarray, D: np.ndarray, alpha: int):
    """Batched OMP: code every column of ``targets`` with at most ``alpha`` atoms.

    Returns ``(supports, coefs, rank_flags)`` where ``supports`` is a
    ``B x alpha`` index array padded with -1 and ``coefs`` matches it.
    """
    B = targets.shape[1]
    supports = np.full((B, alpha), -1, dtype=np.int64)
    coefs = np.zeros((B, alpha))
    rank_flags = np.zeros(B, dtype=bool)
    residual = targets.copy()
    active = np.ones(B, dtype=bool)
    for t in range(alpha):
        active &= np.linalg.norm(residual, axis=0) >= RESIDUAL_FLOOR
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        corr = np.abs(D.T @ residual[:, cols])
        if t:
            chosen = supports[cols, :t]
            corr[chosen.T, np.arange(cols.size)[None, :].repeat(t, 0)] = -np.inf
        supports[cols, t] = np.argmax(corr, axis=0)
        S = supports[cols, : t + 1]
        Ds = D.T[S]  # (b, t+1, N')
        gram = Ds @ Ds.transpose(0, 2, 1)
        rhs = Ds @ targets[:, cols].T[:, :, None]
        eig = np.linalg.eigvalsh(gram)
        rank_flags[cols] |= eig[:, 0] <= RCOND * eig[:, -1]
        xi = (np.linalg.pinv(gram, rcond=RCOND, hermitian=True) @ rhs)[:, :, 0]
        coefs[cols, : t + 1] = xi
        residual[:, cols] = targets[:, cols] - np.einsum("btd,bt->db", Ds, xi)
    return supports, coefs, rank_flags


def sparse_code_cluster(W_I, D, alpha: int) -> SparseCode:
    """Best ``alpha``-sparse code ``z`` for ``min ||W_I - (D z) 1^T||_F``.

    The objective depends on ``W_I`` only through its column mean, so OMP
    runs on the mean: atoms are picked by largest absolute correlation with
    the current residual of the mean (lowest index on ties) and the
    coefficients are refitted by least squares after each pick.
    """
    W_I = as_matrix(W_I)
    D = np.asarray(D, dtype=np.float64)
    if W_I.shape[1] < 1:
        raise ValueError("cluster must contain at least one column")
    if W_I.shape[0] != D.shape[0]:
        raise ShapeMismatch(f"cluster rows {W_I.shape[0]} != dictionary rows {D.shape[0]}")
    if not 0 <= alpha <= D.shape[1]:
        raise ValueError(f"alpha must lie in [0, {D.shape[1]}]")
    mean = W_I.mean(axis=1, keepdims=True)
    supports, coefs, flags = _omp(mean, D, alpha)
    keep = supports[0] >= 0
    idx, val = supports[0][keep], coefs[0][keep]
    residual = mean[:, 0] - D[:, idx] @ val
    return SparseCode(idx, val, float(np.linalg.norm(residual)), bool(flags[0]))


def _combine(D, supports, coefs):
    """Representatives ``D lambda_j`` from padded support/coef arrays."""
    mask = supports >= 0
    return np.einsum("dbt,bt->db", D[:, np.where(mask, supports, 0)], np.where(mask, coefs, 0.0))


class _State:
    """Mutable solver state; codes kept as padded support/coef arrays."""

    def __init__(self, X, D, supports, coefs, labels, alpha):
        self.X = X
        self.D = D
        self.supports = supports
        self.coefs = coefs
        self.labels = labels
        self.alpha = alpha

    @property
    def K(self):
        return self.supports.shape[0]

    def lambda_dense(self) -> np.ndarray:
        L = self.D.shape[1]
        lam = np.zeros((L, self.K))
        rows, slots = np.nonzero(self.supports >= 0)
        np.add.at(lam, (self.supports[rows, slots], rows), self.coefs[rows, slots])
        return lam

    def representatives(self) -> np.ndarray:
        return _combine(self.D, self.supports, self.coefs)

    def objective(self) -> float:
        return float(np.sum((self.X - self.representatives()[:, self.labels]) ** 2))

    def codebook(self) -> DlCodebook:
        K, L = self.K, self.D.shape[1]
        indptr = [0]
        indices, data = [], []
        for j in range(K):
            keep = self.supports[j] >= 0
            order = np.argsort(self.supports[j][keep], kind="stable")
            indices.extend(self.supports[j][keep][order])
            data.extend(self.coefs[j][keep][order])
            indptr.append(len(indices))
        lam = sp.csc_matrix(
            (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(L, K),
        )
        return DlCodebook(self.D, lam, AssignmentMatrix(self.labels, K), self.alpha)

    @classmethod
    def from_codebook(cls, X, cb: DlCodebook):
        K = cb.K
        supports = np.full((K, cb.alpha), -1, dtype=np.int64)
        coefs = np.zeros((K, cb.alpha))
        for j in range(K):
            idx, val = cb.code(j)
            supports[j, : idx.size] = idx
            coefs[j, : idx.size] = val
        return cls(X, np.array(cb.D), supports, coefs, np.array(cb.gamma.labels), cb.alpha)


def _cluster_means(X, labels, K):
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros((X.shape[0], K))
    np.add.at(sums.T, labels, X.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    return means, counts


def _sparse_coding_stage(state: _State, guard: bool, trace: SolveTrace | None):
    X, D, K = state.X, state.D, state.K
    means, counts = _cluster_means(X, state.labels, K)
    live = np.flatnonzero(counts > 0)
    empty = np.flatnonzero(counts == 0)
    targets = np.empty((X.shape[0], K))
    targets[:, live] = means[:, live]
    if empty.size:
        # retired representatives are re-coded onto the worst-fit columns so
        # the next assignment update can hand those columns to them
        resid = np.sum((X - state.representatives()[:, state.labels]) ** 2, axis=0)
        worst = np.argsort(-resid, kind="stable")[: empty.size]
        targets[:, empty[: worst.size]] = X[:, worst]
        if worst.size < empty.size:
            targets[:, empty[worst.size:]] = X[:, worst[:1]]
    supports, coefs, flags = _omp(targets, D, state.alpha)
    if trace is not None:
        trace.rank_deficient += int(flags.sum())
    if guard and live.size:
        old = state.representatives()[:, live]
        new = _combine(D, supports[live], coefs[live])
        old_err = np.sum((means[:, live] - old) ** 2, axis=0)
        new_err = np.sum((means[:, live] - new) ** 2, axis=0)
        reject = live[new_err > old_err]
        if trace is not None:
            trace.omp_rejections += int(reject.size)
        supports[reject] = state.supports[reject]
        coefs[reject] = state.coefs[reject]
    state.supports, state.coefs = supports, coefs


def _worst_columns(E, exclude):
    norms = np.sum(E * E, axis=0)
    norms[list(exclude)] = -1.0
    return int(np.argmax(norms)), norms


def _dictionary_stage(state: _State, trace: SolveTrace | None):
    X, D = state.X, state.D.copy()
    G = state.lambda_dense()[:, state.labels]
    E = X - D @ G
    used = set()
    for i in range(D.shape[1]):
        cols = np.flatnonzero(G[i])
        g = G[i, cols]
        F = E[:, cols] + np.outer(D[:, i], g)
        v = F @ g
        norm = np.linalg.norm(v)
        if cols.size == 0 or norm == 0.0:
            # unused or degenerate atom: any unit vector leaves the objective
            # unchanged, so point it at the worst-approximated column
            j, norms = _worst_columns(E, used)
            used.add(j)
            if norms[j] > 0 and np.linalg.norm(X[:, j]) > 0:
                new = X[:, j] / np.linalg.norm(X[:, j])
            else:
                new = np.zeros(D.shape[0])
                new[i % D.shape[0]] = 1.0
            if trace is not None:
                trace.reinitialised_atoms += 1
        else:
            new = v / norm
            # coordinate step is optimal in exact arithmetic; keep the old
            # atom if rounding says otherwise
            if new @ v < D[:, i] @ v:
                new = D[:, i]
        D[:, i] = new
        if cols.size:
            E[:, cols] = F - np.outer(new, g)
    state.D = D


def _assignment_stage(state: _State):
    labels, _ = nearest(state.X, state.representatives())
    state.labels = labels


def _check_sizes(X, K, L, alpha):
    n = X.shape[1]
    if int(K) != K or not 1 <= K <= n:
        raise InvalidK(f"K_dl must be an integer in [1, {n}], got {K!r}")
    if int(L) != L or L < 1:
        raise ValueError(f"L_dl must be a positive integer, got {L!r}")
    if int(alpha) != alpha or not 0 <= alpha <= L:
        raise ValueError(f"alpha must be an integer in [0, L_dl={L}], got {alpha!r}")


def dictionary_update(W, cb: DlCodebook) -> DlCodebook:
    """One ascending sweep of per-atom updates with codes and assignments fixed."""
    X = as_matrix(W)
    state = _State.from_codebook(X, cb)
    _dictionary_stage(state, None)
    return state.codebook()


def assignment_update(W, cb: DlCodebook) -> AssignmentMatrix:
    """Assign every column of ``W`` to its nearest representative ``D lambda_j``."""
    X = as_matrix(W)
    labels, _ = nearest(X, cb.representatives)
    return AssignmentMatrix(labels, cb.K)


def sparse_coding_update(W, cb: DlCodebook, omp_guard: bool = True) -> DlCodebook:
    """Re-code every cluster mean by OMP (the sparse-coding stage of :func:`solve`)."""
    X = as_matrix(W)
    state = _State.from_codebook(X, cb)
    _sparse_coding_stage(state, omp_guard, None)
    return state.codebook()


def _initial_dictionary(C, L, rng):
    Np, K = C.shape
    D = np.empty((Np, L))
    picks = rng.permutation(K)[: min(L, K)]
    for a, j in enumerate(picks):
        D[:, a] = C[:, j]
    D[:, picks.size:] = rng.standard_normal((Np, L - picks.size))
    norms = np.linalg.norm(D, axis=0)
    dead = norms <= 0
    if dead.any():
        D[:, dead] = rng.standard_normal((Np, int(dead.sum())))
        norms = np.linalg.norm(D, axis=0)
    return D / norms


def init_solution(W, K_dl: int, L_dl: int, alpha: int, opts: SolverOptions | None = None) -> DlCodebook:
    """Initial ``(D, Lambda, Gamma)``.

    1. k-means with ``K_dl`` clusters on the columns of ``W``;
    2. sparse-approximate the centroid matrix as ``D0 Lambda0`` with
       ``opts.init_iters`` rounds of dictionary learning (each centroid is
       its own cluster);
    3. assign every column of ``W`` to its nearest column of ``D0 Lambda0``.
    """
    opts = opts or SolverOptions()
    X = as_matrix(W)
    _check_sizes(X, K_dl, L_dl, alpha)
    return _init_state(X, int(K_dl), int(L_dl), int(alpha), opts, None).codebook()


def _init_state(X, K, L, alpha, opts, trace):
    vq = kmeans_cluster(X, K, opts)
    C = np.array(vq.C)
    rng = np.random.default_rng((opts.seed, 1))
    D = _initial_dictionary(C, L, rng)
    inner = _State(C, D, np.full((K, alpha), -1, dtype=np.int64), np.zeros((K, alpha)), np.arange(K), alpha)
    _sparse_coding_stage(inner, False, trace)
    for _ in range(opts.init_iters):
        _dictionary_stage(inner, None)
        _sparse_coding_stage(inner, True, None)
    labels, _ = nearest(X, inner.representatives())
    return _State(X, inner.D, inner.supports, inner.coefs, labels, alpha)


def solve(W, K_dl: int, L_dl: int, alpha: int, opts: SolverOptions | None = None):
    """Learn a DL codebook for ``W``; returns ``(DlCodebook, SolveTrace)``.

    Stops after ``opts.max_iters`` outer iterations, when the objective
    reaches zero, or when the relative improvement of an iteration falls
    below ``opts.tol``.
    """
    opts = opts or SolverOptions()
    X = as_matrix(W)
    _check_sizes(X, K_dl, L_dl, alpha)
    trace = SolveTrace()
    t0 = time.perf_counter()
    state = _init_state(X, int(K_dl), int(L_dl), int(alpha), opts, trace)
    trace.add_time("init", time.perf_counter() - t0)
    f = state.objective()
    trace.objectives.append(f)
    trace.record(0, "init", f)
    stages = (
        ("sparse_coding", lambda: _sparse_coding_stage(state, opts.omp_guard, trace)),
        ("dictionary", lambda: _dictionary_stage(state, trace)),
        ("assignment", lambda: _assignment_stage(state)),
    )
    for it in range(1, opts.max_iters + 1):
        if f == 0.0:
            break
        for name, step in stages:
            t0 = time.perf_counter()
            step()
            trace.add_time(name, time.perf_counter() - t0)
            trace.record(it, name, state.objective())
        prev, f = f, trace.stages[-1][2]
        trace.objectives.append(f)
        trace.n_iter = it
        if prev > 0 and (prev - f) / prev < opts.tol:
            break
    return state.codebook(), trace


def dl_approximate(cb: DlCodebook, shape=None, index: int = 0):
    """Column ``j`` of the result is ``D lambda_{labels[j]}``."""
    approx = cb.representatives[:, cb.gamma.labels]
    if shape is None:
        return approx
    return SubspaceMatrix(approx, shape, index)


def dl_objective(W, cb: DlCodebook) -> float:
    """``||W - D Lambda Gamma||_F^2``."""
    X = as_matrix(W)
    return float(np.sum((X - dl_approximate(cb)) ** 2))
