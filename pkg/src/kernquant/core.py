"""Layer and kernel representations, subspace partitioning and error metrics.

Kernel sub-vectors of one subspace are laid out as the columns of an
``N' x (p*p*M)`` matrix.  Column ``j`` holds kernel ``k`` at spatial
position ``(u, v)`` with ``j = k*p*p + u*p + v``; the VQ/DL codebooks and
the convolution engine all rely on this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonDivisibleChannels, ShapeMismatch

STORAGE_DTYPE = np.float32


@dataclass(frozen=True)
class LayerShape:
    """Dimensions of one convolutional layer.

    ``M`` kernels, ``N`` input channels, ``p x p`` kernels, ``m x m``
    input (and, with same padding, output) planes.
    """

    M: int
    N: int
    p: int
    m: int

    def __post_init__(self):
        for name in ("M", "N", "p", "m"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ShapeMismatch(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.p % 2 == 0:
            raise ShapeMismatch(f"kernel side p must be odd, got {self.p}")
        if self.p > self.m:
            raise ShapeMismatch(f"kernel side p={self.p} exceeds input side m={self.m}")

    @property
    def n_subvectors(self) -> int:
        """Number of kernel sub-vectors per subspace, ``p*p*M``."""
        return self.p * self.p * self.M

    @property
    def kernel_extent(self) -> tuple[int, int, int, int]:
        return (self.M, self.N, self.p, self.p)

    @classmethod
    def parse(cls, text: str) -> "LayerShape":
        """Parse ``"MxNxpxm"`` (e.g. ``"512x256x3x14"``)."""
        parts = text.lower().split("x")
        if len(parts) != 4:
            raise ValueError(f"expected MxNxpxm, got {text!r}")
        return cls(*(int(part) for part in parts))

    def __str__(self) -> str:
        return f"{self.M}x{self.N}x{self.p}x{self.m}"


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Weights of one conv layer, indexed ``[kernel, channel, row, col]``."""

    shape: LayerShape
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.shape != self.shape.kernel_extent:
            raise ShapeMismatch(
                f"weights have extent {w.shape}, layer shape requires {self.shape.kernel_extent}"
            )
        w = np.array(w, dtype=STORAGE_DTYPE, copy=True)
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, KernelSet):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True)
class SubspacePartition:
    """Split of the ``N`` channels into ``S`` blocks of ``Nprime`` channels."""

    S: int
    Nprime: int

    def __post_init__(self):
        if self.S < 1 or self.Nprime < 1:
            raise ValueError("S and Nprime must be positive")

    @classmethod
    def from_channels(cls, N: int, *, S: int | None = None, Nprime: int | None = None):
        """Build a partition from either ``S`` or ``Nprime``; rejects non-divisible ``N``."""
        if (S is None) == (Nprime is None):
            raise ValueError("give exactly one of S or Nprime")
        divisor = S if S is not None else Nprime
        if divisor < 1 or N % divisor:
            raise NonDivisibleChannels(f"N={N} is not divisible by {divisor}")
        if S is not None:
            return cls(S=S, Nprime=N // S)
        return cls(S=N // Nprime, Nprime=Nprime)

    @property
    def N(self) -> int:
        return self.S * self.Nprime

    def channels(self, s: int) -> slice:
        return slice(s * self.Nprime, (s + 1) * self.Nprime)


@dataclass(frozen=True, eq=False)
class SubspaceMatrix:
    """Kernel sub-vectors of subspace ``index`` (0-based) as matrix columns."""

    data: np.ndarray
    shape: LayerShape
    index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[1] != self.shape.n_subvectors:
            raise ShapeMismatch(
                f"subspace matrix must have {self.shape.n_subvectors} columns, got shape {data.shape}"
            )
        data = np.array(data, copy=True)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def Nprime(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class ErrorReport:
    """Per-coefficient MSE and relative Frobenius error.

    ``rel_frob`` is NaN when the reference matrix has zero energy.
    """

    mse: float
    rel_frob: float
    sq_error: float = field(repr=False)
    energy: float = field(repr=False)
    size: int = field(repr=False, default=1)

    @property
    def rel_frob_defined(self) -> bool:
        return self.energy > 0


def as_matrix(W) -> np.ndarray:
    """Return the data of a SubspaceMatrix (or any 2-D array) as float64."""
    data = W.data if isinstance(W, SubspaceMatrix) else W
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got {arr.ndim}-D")
    return arr


def partition_kernels(kernels: KernelSet, part: SubspacePartition) -> list[SubspaceMatrix]:
    """Split a layer's kernels into ``S`` sub-vector matrices."""
    shape = kernels.shape
    if part.N != shape.N:
        raise NonDivisibleChannels(
            f"partition covers {part.N} channels (S={part.S}, N'={part.Nprime}), layer has N={shape.N}"
        )
    # (k, i, u, v) -> (i, k, u, v) so that reshape yields j = k*p*p + u*p + v
    stacked = kernels.weights.transpose(1, 0, 2, 3).reshape(shape.N, shape.n_subvectors)
    return [
        SubspaceMatrix(stacked[part.channels(s)], shape, s) for s in range(part.S)
    ]


def reconstruct_kernels(mats, shape: LayerShape) -> KernelSet:
    """Inverse of :func:`partition_kernels`.

    ``mats`` may hold SubspaceMatrix objects or plain arrays, ordered by
    subspace.  Values are rounded to 32-bit storage.
    """
    mats = [np.asarray(m.data if isinstance(m, SubspaceMatrix) else m) for m in mats]
    if not mats:
        raise ShapeMismatch("no subspace matrices given")
    for m in mats:
        if m.ndim != 2 or m.shape[1] != shape.n_subvectors:
            raise ShapeMismatch(
                f"subspace matrix shape {m.shape} incompatible with {shape.n_subvectors} columns"
            )
    rows = sum(m.shape[0] for m in mats)
    if rows != shape.N or len({m.shape[0] for m in mats}) != 1:
        raise ShapeMismatch(f"subspace row counts {[m.shape[0] for m in mats]} do not tile N={shape.N}")
    stacked = np.concatenate([m.astype(STORAGE_DTYPE, copy=False) for m in mats], axis=0)
    weights = stacked.reshape(shape.N, shape.M, shape.p, shape.p).transpose(1, 0, 2, 3)
    return KernelSet(shape, weights)


def quantization_error(orig, approx) -> ErrorReport:
    """Compare a sub-vector matrix with its approximation."""
    a = as_matrix(orig)
    b = as_matrix(approx)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot compare {a.shape} with {b.shape}")
    sq_error = float(np.sum((a - b) ** 2))
    energy = float(np.sum(a * a))
    mse = sq_error / a.size
    rel = float(np.sqrt(sq_error / energy)) if energy > 0 else float("nan")
    return ErrorReport(mse=mse, rel_frob=rel, sq_error=sq_error, energy=energy, size=a.size)


def aggregate_errors(reports) -> ErrorReport:
    """Energy-weighted layer error over per-subspace reports.

    relFrob of the layer is ``sqrt(sum sq_error / sum energy)``; the MSE is
    taken over all coefficients of the layer.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    sq_error = sum(r.sq_error for r in reports)
    energy = sum(r.energy for r in reports)
    n_coef = sum(r.size for r in reports)
    mse = sq_error / n_coef if n_coef else 0.0
    rel = float(np.sqrt(sq_error / energy)) if energy > 0 else float("nan")
    return ErrorReport(mse=mse, rel_frob=rel, sq_error=sq_error, energy=energy, size=n_coef)
