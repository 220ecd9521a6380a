from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls shared by the k-means and DL solvers.

    ``max_iters``/``tol`` govern the DL outer loop; ``kmeans_max_iters`` and
    ``kmeans_tol`` govern Lloyd iterations (baseline and DL initialisation).
    ``omp_guard`` rejects a re-coded representative if it would increase its
    cluster's error.  ``init_iters`` is the number of DL iterations used to
    sparse-approximate the k-means centroids during initialisation.
    """

    max_iters: int = 30
    tol: float = 1e-4
    seed: int = 0
    omp_guard: bool = True
    init_iters: int = 20
    restarts: int = 1
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1 or self.kmeans_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if not (self.tol > 0 and self.kmeans_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.init_iters < 0:
            raise ValueError("init_iters must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def with_seed(self, seed: int) -> "SolverOptions":
        return replace(self, seed=seed)


def subspace_seed(seed: int, subspace: int) -> int:
    """Independent solver seed for one subspace of a seeded run."""
    return int(np.random.SeedSequence([seed, subspace]).generate_state(1)[0])
