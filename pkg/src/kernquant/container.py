"""KQC1 codebook container.

Little-endian layout::

    b"KQC1"
    u8  method (0 = vq, 1 = dl)
    u32 M, N, p, m, Nprime, S
    S x (u32 K, u32 L, u32 alpha)           L = alpha = 0 for vq
    S x payload
        vq: C as float64 Nprime x K (row-major), labels as u32 x p*p*M
        dl: D as float64 Nprime x L (row-major),
            K x (u32 count, count x u32 index, count x float64 value),
            labels as u32 x p*p*M
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import LayerShape, SubspacePartition
from .dl import DlCodebook
from .exceptions import CorruptFile, ShapeMismatch
from .io import atomic_write_bytes
from .vq import AssignmentMatrix, VqCodebook

MAGIC = b"KQC1"
METHODS = ("vq", "dl")
_HEAD = struct.Struct("<4sB6I")
_SIZES = struct.Struct("<3I")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class CodebookContainer:
    method: str
    shape: LayerShape
    partition: SubspacePartition
    codebooks: tuple

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        kind = VqCodebook if self.method == "vq" else DlCodebook
        if self.partition.N != self.shape.N or len(self.codebooks) != self.partition.S:
            raise ShapeMismatch("codebook count or partition disagrees with layer shape")
        for cb in self.codebooks:
            if not isinstance(cb, kind):
                raise TypeError(f"{self.method} container holds {type(cb).__name__}")
            if len(cb.gamma) != self.shape.n_subvectors:
                raise ShapeMismatch("assignment length disagrees with p*p*M")
        object.__setattr__(self, "codebooks", tuple(self.codebooks))


def encode(container: CodebookContainer) -> bytes:
    s, part = container.shape, container.partition
    out = bytearray(
        _HEAD.pack(MAGIC, METHODS.index(container.method), s.M, s.N, s.p, s.m, part.Nprime, part.S)
    )
    for cb in container.codebooks:
        if container.method == "vq":
            out += _SIZES.pack(cb.K, 0, 0)
        else:
            out += _SIZES.pack(cb.K, cb.L, cb.alpha)
    for cb in container.codebooks:
        if container.method == "vq":
            out += np.ascontiguousarray(cb.C, dtype="<f8").tobytes()
        else:
            out += np.ascontiguousarray(cb.D, dtype="<f8").tobytes()
            for j in range(cb.K):
                idx, val = cb.code(j)
                out += _U32.pack(idx.size)
                out += np.asarray(idx, dtype="<u4").tobytes()
                out += np.asarray(val, dtype="<f8").tobytes()
        out += np.asarray(cb.gamma.labels, dtype="<u4").tobytes()
    out += _U32.pack(zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, payload):
        self.buf = payload
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptFile("KQC1 payload truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count)


def decode(payload: bytes) -> CodebookContainer:
    if len(payload) < _HEAD.size + _U32.size:
        raise CorruptFile("KQC1 payload too short")
    body, (crc,) = payload[:-4], _U32.unpack(payload[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFile("KQC1 CRC mismatch")
    r = _Reader(body)
    magic, method, M, N, p, m, Nprime, S = r.unpack(_HEAD)
    if magic != MAGIC:
        raise CorruptFile(f"bad magic {magic!r}")
    if method >= len(METHODS):
        raise CorruptFile(f"unknown method tag {method}")
    try:
        shape = LayerShape(M, N, p, m)
        part = SubspacePartition(S, Nprime)
    except (ValueError, ShapeMismatch) as exc:
        raise CorruptFile(f"invalid KQC1 header: {exc}") from exc
    if part.N != shape.N:
        raise CorruptFile("KQC1 header: S * Nprime != N")
    sizes = [r.unpack(_SIZES) for _ in range(S)]
    n = shape.n_subvectors
    codebooks = []
    try:
        for K, L, alpha in sizes:
            if METHODS[method] == "vq":
                C = r.array("<f8", Nprime * K).reshape(Nprime, K)
                labels = r.array("<u4", n)
                codebooks.append(VqCodebook(C, AssignmentMatrix(labels, K)))
            else:
                D = r.array("<f8", Nprime * L).reshape(Nprime, L)
                indptr, indices, data = [0], [], []
                for _ in range(K):
                    (count,) = r.unpack(_U32)
                    indices.append(r.array("<u4", count))
                    data.append(r.array("<f8", count))
                    indptr.append(indptr[-1] + count)
                lam = sp.csc_matrix(
                    (np.concatenate(data) if data else np.zeros(0),
                     np.concatenate(indices).astype(np.int64) if indices else np.zeros(0, np.int64),
                     np.array(indptr)),
                    shape=(L, K),
                )
                labels = r.array("<u4", n)
                codebooks.append(DlCodebook(D, lam, AssignmentMatrix(labels, K), alpha))
    except (ValueError, ShapeMismatch) as exc:
        raise CorruptFile(f"inconsistent KQC1 payload: {exc}") from exc
    if r.pos != len(body):
        raise CorruptFile("trailing bytes after KQC1 payload")
    return CodebookContainer(METHODS[method], shape, part, tuple(codebooks))


def write_container(path, container: CodebookContainer) -> None:
    atomic_write_bytes(path, encode(container))


def read_container(path) -> CodebookContainer:
    return decode(Path(path).read_bytes())
