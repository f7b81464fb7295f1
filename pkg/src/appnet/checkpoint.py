"""Binary checkpoint format.

Layout: magic "APPN1", uint32 record count, then per record a uint32 name
length, the UTF-8 name bytes, a uint32 rank, rank uint32 dims, and the values
as little-endian float32. Round-trips are bit-exact for float32 sources.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"APPN1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, records: list[tuple[str, np.ndarray]]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(records))]
    for name, arr in records:
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> list[tuple[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        piece = blob[off : off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    records = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        records.append((name, arr.copy()))
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return records
