"""Binary parameter checkpoints.

Layout (all integers uint32 little-endian)::

    b"MLTPN1" | count | per parameter: name_len, name (utf-8), rank,
    extents[rank], float64 little-endian values (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MLTPN1"


class CheckpointError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at byte offset {self.pos}, "
                                  f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def loads(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    count = r.u32("parameter count")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name}"))
        n = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError(f"trailing bytes after checkpoint at byte offset {r.pos}")
    return state


def save(path: str | Path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
