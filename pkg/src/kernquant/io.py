"""KQZ1 kernel/volume files and atomic file writes.

KQZ1 layout: ``b"KQZ1"``, four little-endian uint32 ``M, N, p, m``, then
``M*N*p*p`` little-endian float32 in ``[k][i][u][v]`` order.  Input volumes
reuse the format with ``M = 1`` and ``p = m``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import KernelSet, LayerShape
from .exceptions import CorruptFile, ShapeMismatch

KQZ_MAGIC = b"KQZ1"
_HEADER = struct.Struct("<4s4I")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_kqz(kernels: KernelSet) -> bytes:
    s = kernels.shape
    body = np.ascontiguousarray(kernels.weights, dtype="<f4").tobytes()
    return _HEADER.pack(KQZ_MAGIC, s.M, s.N, s.p, s.m) + body


def decode_kqz(payload: bytes) -> KernelSet:
    if len(payload) < _HEADER.size:
        raise CorruptFile("KQZ1 payload shorter than its header")
    magic, M, N, p, m = _HEADER.unpack_from(payload)
    if magic != KQZ_MAGIC:
        raise CorruptFile(f"bad magic {magic!r}, expected {KQZ_MAGIC!r}")
    try:
        shape = LayerShape(M, N, p, m)
    except ShapeMismatch as exc:
        raise CorruptFile(f"invalid KQZ1 header: {exc}") from exc
    count = M * N * p * p
    expected = _HEADER.size + 4 * count
    if len(payload) != expected:
        raise CorruptFile(f"KQZ1 payload has {len(payload)} bytes, header implies {expected}")
    weights = np.frombuffer(payload, dtype="<f4", count=count, offset=_HEADER.size)
    return KernelSet(shape, weights.reshape(M, N, p, p))


def write_kernels(path, kernels: KernelSet) -> None:
    """Write ``kernels`` as KQZ1, or as JSON when ``path`` ends in ``.json``."""
    if str(path).endswith(".json"):
        s = kernels.shape
        doc = {"M": s.M, "N": s.N, "p": s.p, "m": s.m, "weights": kernels.weights.tolist()}
        atomic_write_text(path, json.dumps(doc))
    else:
        atomic_write_bytes(path, encode_kqz(kernels))


def read_kernels(path) -> KernelSet:
    """Read a KQZ1 file or its JSON variant (detected by leading ``{``)."""
    payload = Path(path).read_bytes()
    if payload.lstrip()[:1] == b"{":
        try:
            doc = json.loads(payload)
            shape = LayerShape(doc["M"], doc["N"], doc["p"], doc["m"])
            return KernelSet(shape, np.asarray(doc["weights"], dtype=np.float64))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CorruptFile(f"malformed JSON kernel file {path}: {exc}") from exc
    return decode_kqz(payload)


def write_volume(path, volume: np.ndarray) -> None:
    """Write an ``N x m x m`` input volume as KQZ1 (``M = 1``, ``p = m``) or JSON."""
    volume = np.asarray(volume, dtype=np.float32)
    if volume.ndim != 3 or volume.shape[1] != volume.shape[2]:
        raise ShapeMismatch(f"input volume must be N x m x m, got {volume.shape}")
    N, m, _ = volume.shape
    if str(path).endswith(".json"):
        doc = {"M": 1, "N": N, "p": m, "m": m, "weights": volume[None].tolist()}
        atomic_write_text(path, json.dumps(doc))
        return
    body = np.ascontiguousarray(volume, dtype="<f4").tobytes()
    atomic_write_bytes(path, _HEADER.pack(KQZ_MAGIC, 1, N, m, m) + body)


def read_volume(path) -> np.ndarray:
    """Read an input volume (``M = 1`` KQZ1 or JSON) as an ``N x m x m`` array."""
    payload = Path(path).read_bytes()
    if payload.lstrip()[:1] == b"{":
        try:
            doc = json.loads(payload)
            data = np.asarray(doc["weights"], dtype=np.float32)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CorruptFile(f"malformed JSON volume file {path}: {exc}") from exc
        if data.ndim == 4 and data.shape[0] == 1:
            data = data[0]
        if data.ndim != 3:
            raise CorruptFile(f"volume in {path} is not N x m x m")
        return data
    if len(payload) < _HEADER.size:
        raise CorruptFile("KQZ1 payload shorter than its header")
    magic, M, N, p, m = _HEADER.unpack_from(payload)
    if magic != KQZ_MAGIC:
        raise CorruptFile(f"bad magic {magic!r}, expected {KQZ_MAGIC!r}")
    if M != 1 or p != m or N < 1 or m < 1:
        raise CorruptFile(f"KQZ1 volume header must have M=1 and p=m, got M={M} p={p} m={m}")
    count = N * m * m
    if len(payload) != _HEADER.size + 4 * count:
        raise CorruptFile("KQZ1 volume payload size disagrees with header")
    data = np.frombuffer(payload, dtype="<f4", count=count, offset=_HEADER.size)
    return data.reshape(N, m, m).copy()
