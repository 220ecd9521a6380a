"""Direct, VQ- and DL-accelerated evaluation of one conv layer with MUL counting.

Convention: cross-correlation, stride 1, zero "same" padding, so an
``N x m x m`` input gives an ``M x m x m`` output.  Every multiplication
executed is tallied in a :class:`MulCounter` from the operand extents of the
products actually performed, so the counts can be checked independently
against the closed-form cost model.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .core import KernelSet, LayerShape, SubspacePartition
from .dl import DlCodebook
from .exceptions import ShapeMismatch
from .vq import VqCodebook


class MulCounter:
    """Thread-safe running total of scalar multiplications."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.actual = 0

    def add(self, n: int, actual: int | None = None) -> None:
        """Charge ``n`` MULs; ``actual`` (default ``n``) tracks the MULs really needed."""
        if n < 0:
            raise ValueError("counter only increments")
        with self._lock:
            self.total += int(n)
            self.actual += int(n if actual is None else actual)

    def reset(self) -> None:
        with self._lock:
            self.total = 0
            self.actual = 0


@dataclass(frozen=True, eq=False)
class InputVolume:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[1] != data.shape[2]:
            raise ShapeMismatch(f"input volume must be N x m x m, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("input volume must be finite")
        object.__setattr__(self, "data", np.array(data, dtype=np.float32))

    @property
    def N(self):
        return self.data.shape[0]

    @property
    def m(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class OutputVolume:
    data: np.ndarray
    counts: dict = field(default_factory=dict)


def _as_volume(x) -> InputVolume:
    return x if isinstance(x, InputVolume) else InputVolume(x)


def _check_volume(x: InputVolume, shape: LayerShape):
    if x.N != shape.N or x.m != shape.m:
        raise ShapeMismatch(
            f"input volume {x.data.shape} does not match layer N={shape.N}, m={shape.m}"
        )


def _pad(planes: np.ndarray, h: int) -> np.ndarray:
    return np.pad(planes, ((0, 0), (h, h), (h, h)))


def conv_direct(x, kernels: KernelSet, counter: MulCounter | None = None) -> OutputVolume:
    """``U_k[i, j] = sum_{c,u,v} X_c[i+u-h, j+v-h] W[k, c, u, v]`` with ``h = p // 2``."""
    x = _as_volume(x)
    shape = kernels.shape
    _check_volume(x, shape)
    counter = counter if counter is not None else MulCounter()
    m, p, h = shape.m, shape.p, shape.p // 2
    xp = _pad(x.data.astype(np.float64), h)
    W = kernels.weights.astype(np.float64)
    out = np.zeros((shape.M, m, m))
    for u in range(p):
        for v in range(p):
            window = xp[:, u:u + m, v:v + m]
            out += np.tensordot(W[:, :, u, v], window, axes=(1, 0))
            counter.add(W.shape[0] * W.shape[1] * window.shape[1] * window.shape[2])
    return OutputVolume(out, {"muls": counter.total})


def _scatter(responses: np.ndarray, labels: np.ndarray, shape: LayerShape, out: np.ndarray):
    """Accumulate per-representative response planes into the kernel outputs.

    ``responses`` is ``K x m x m``: the dot products of every input sub-vector
    with every representative.  Sub-vector column ``j = k p^2 + u p + v``
    contributes ``responses[labels[j]]`` shifted by ``(u - h, v - h)``.
    Additions only.
    """
    m, p, h = shape.m, shape.p, shape.p // 2
    padded = _pad(responses, h)
    lab = labels.reshape(shape.M, p, p)
    for u in range(p):
        for v in range(p):
            out += padded[lab[:, u, v], u:u + m, v:v + m]


def _subspace_patches(x: InputVolume, part: SubspacePartition, s: int) -> np.ndarray:
    """``N' x m^2`` matrix of input sub-vectors of subspace ``s``."""
    block = x.data[part.channels(s)].astype(np.float64)
    return block.reshape(part.Nprime, -1)


def _check_codebooks(codebooks, shape, part, kind):
    if part.N != shape.N:
        raise ShapeMismatch(f"partition covers {part.N} channels, layer has {shape.N}")
    if len(codebooks) != part.S:
        raise ShapeMismatch(f"expected {part.S} codebooks, got {len(codebooks)}")
    for cb in codebooks:
        if not isinstance(cb, kind):
            raise TypeError(f"expected {kind.__name__}, got {type(cb).__name__}")
        rows = cb.C.shape[0] if kind is VqCodebook else cb.D.shape[0]
        if rows != part.Nprime or len(cb.gamma) != shape.n_subvectors:
            raise ShapeMismatch("codebook dimensions disagree with layer/partition")


def conv_vq(x, shape: LayerShape, part: SubspacePartition, codebooks, counter: MulCounter | None = None) -> OutputVolume:
    """Per subspace: ``X^T C`` then gather/accumulate according to the assignments."""
    x = _as_volume(x)
    _check_volume(x, shape)
    _check_codebooks(codebooks, shape, part, VqCodebook)
    counter = counter if counter is not None else MulCounter()
    m = shape.m
    out = np.zeros((shape.M, m, m))
    for s, cb in enumerate(codebooks):
        X = _subspace_patches(x, part, s)
        responses = X.T @ cb.C
        counter.add(X.shape[1] * X.shape[0] * cb.C.shape[1])
        _scatter(responses.T.reshape(cb.K, m, m), cb.gamma.labels, shape, out)
    return OutputVolume(out, {"muls": counter.total, "muls_actual": counter.actual})


def conv_dl(x, shape: LayerShape, part: SubspacePartition, codebooks, counter: MulCounter | None = None) -> OutputVolume:
    """Per subspace: ``X^T D``, sparse combination by ``Lambda``, then scatter.

    The combination stage is charged ``alpha`` MULs per representative and
    position (as in the cost model) even when a code column stores fewer
    entries; ``counter.actual`` records the entries really used.
    """
    x = _as_volume(x)
    _check_volume(x, shape)
    _check_codebooks(codebooks, shape, part, DlCodebook)
    counter = counter if counter is not None else MulCounter()
    m = shape.m
    out = np.zeros((shape.M, m, m))
    for s, cb in enumerate(codebooks):
        X = _subspace_patches(x, part, s)
        atom_resp = X.T @ cb.D
        counter.add(X.shape[1] * X.shape[0] * cb.D.shape[1])
        positions = atom_resp.shape[0]
        responses = np.zeros((positions, cb.K))
        for j in range(cb.K):
            idx, val = cb.code(j)
            for a, coef in zip(idx, val):
                responses[:, j] += coef * atom_resp[:, a]
            counter.add(positions * cb.alpha, actual=positions * idx.size)
        _scatter(responses.T.reshape(cb.K, m, m), cb.gamma.labels, shape, out)
    return OutputVolume(out, {"muls": counter.total, "muls_actual": counter.actual})


def relative_deviation(a, b) -> float:
    """``max |a - b| / max |b|`` (0 when both are identically zero)."""
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot compare outputs {a.shape} and {b.shape}")
    diff = float(np.max(np.abs(a - b), initial=0.0))
    scale = float(np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale
