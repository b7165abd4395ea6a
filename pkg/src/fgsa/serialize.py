"""Binary tensor and checkpoint containers.

Tensor blob: b"FGSA", u32 rank, rank x u32 extents, f64 payload (row-major),
all little-endian. Checkpoint: u32 record count, then per record
u32 name length, UTF-8 name, u8 trainable flag, tensor blob.
"""
from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .optim import ParamSet
from .tensor import Tensor

MAGIC = b"FGSA"


def write_tensor(f: BinaryIO, t: Tensor | np.ndarray) -> None:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8", order="C")  # keeps rank 0
    f.write(MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes(order="C"))


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated tensor stream")
    return buf


def read_tensor(f: BinaryIO) -> Tensor:
    if _read_exact(f, 4) != MAGIC:
        raise ValueError("bad magic: not an FGSA tensor")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64)
    return Tensor(data.reshape(shape))


def tensor_bytes(t: Tensor | np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(b: bytes) -> Tensor:
    return read_tensor(io.BytesIO(b))


def checkpoint_bytes(params: ParamSet | list[tuple[str, Tensor, bool]]) -> bytes:
    if isinstance(params, ParamSet):
        records = [(k, v, v.requires_grad) for k, v in params.items()]
    else:
        records = list(params)
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(records)))
    for name, t, trainable in records:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", 1 if trainable else 0))
        write_tensor(buf, t)
    return buf.getvalue()


def parse_checkpoint(b: bytes) -> list[tuple[str, Tensor, bool]]:
    f = io.BytesIO(b)
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    out = []
    for _ in range(n):
        (ln,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, ln).decode("utf-8")
        (flag,) = struct.unpack("<B", _read_exact(f, 1))
        out.append((name, read_tensor(f), bool(flag)))
    if f.read(1):
        raise ValueError("trailing bytes after checkpoint records")
    return out


def save_checkpoint(path, params) -> str:
    """Write a checkpoint and return its SHA-256 hex digest."""
    data = checkpoint_bytes(params)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> list[tuple[str, Tensor, bool]]:
    return parse_checkpoint(Path(path).read_bytes())


def params_digest(params: ParamSet) -> str:
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()
