"""Slow, obviously-correct reference computations used as test oracles.

Nothing here imports the code under test except plain data containers.
"""
import itertools

import numpy as np


def naive_conv(x, w):
    """Same-padded cross-correlation by explicit loops; returns (output, mul_count)."""
    M, N, p, _ = w.shape
    m = x.shape[1]
    h = p // 2
    xp = np.zeros((N, m + 2 * h, m + 2 * h))
    xp[:, h:h + m, h:h + m] = x
    out = np.zeros((M, m, m))
    muls = 0
    for k in range(M):
        for i in range(m):
            for j in range(m):
                acc = 0.0
                for c in range(N):
                    for u in range(p):
                        for v in range(p):
                            acc += float(xp[c, i + u, j + v]) * float(w[k, c, u, v])
                            muls += 1
                out[k, i, j] = acc
    return out, muls


def naive_vq_muls(m, Nprime, S, K):
    """Multiplications of X^T C per subspace, one per (position, centroid, coordinate)."""
    muls = 0
    for _ in range(S):
        for _pos in range(m * m):
            for _k in range(K):
                for _d in range(Nprime):
                    muls += 1
    return muls


def naive_dl_muls(m, Nprime, S, L, K, alpha):
    """Atom dot products plus alpha scalar MULs per representative and position."""
    muls = 0
    for _ in range(S):
        for _pos in range(m * m):
            for _a in range(L):
                for _d in range(Nprime):
                    muls += 1
            for _k in range(K):
                for _t in range(alpha):
                    muls += 1
    return muls


def set_partitions(n, K):
    """All labelings of n items into exactly K non-empty, canonically numbered blocks."""
    def rec(i, labels, used):
        if i == n:
            if used == K:
                yield tuple(labels)
            return
        for lab in range(min(used + 1, K)):
            yield from rec(i + 1, labels + [lab], max(used, lab + 1))
    yield from rec(0, [], 0)


def exhaustive_kmeans(X, K):
    """Optimal k-means loss over all partitions of the columns of X."""
    best = np.inf
    best_labels = None
    for labels in set_partitions(X.shape[1], K):
        labels = np.array(labels)
        loss = 0.0
        for c in range(K):
            pts = X[:, labels == c]
            loss += float(np.sum((pts - pts.mean(axis=1, keepdims=True)) ** 2))
        if loss < best:
            best, best_labels = loss, labels
    return best, best_labels


def best_subset_residual(D, w, alpha):
    """Smallest ||w - D_S z|| over all supports with |S| <= alpha."""
    best = float(np.linalg.norm(w))
    best_support = ()
    for size in range(1, alpha + 1):
        for S in itertools.combinations(range(D.shape[1]), size):
            z, *_ = np.linalg.lstsq(D[:, S], w, rcond=None)
            r = float(np.linalg.norm(w - D[:, S] @ z))
            if r < best - 1e-15:
                best, best_support = r, S
    return best, best_support


def naive_sq_error(A, B):
    total = 0.0
    energy = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            d = float(A[i, j]) - float(B[i, j])
            total += d * d
            energy += float(A[i, j]) ** 2
    return total, energy


def brute_nearest(X, R):
    labels = []
    for j in range(X.shape[1]):
        best, arg = np.inf, -1
        for k in range(R.shape[1]):
            d = sum((float(X[t, j]) - float(R[t, k])) ** 2 for t in range(X.shape[0]))
            if d < best:
                best, arg = d, k
        labels.append(arg)
    return np.array(labels)
