"""Binary checkpoint format for teacher and student models.

Layout, all integers little-endian:

    magic "E2DC" | format version u32 | record count u32
    per record: name length u16 | UTF-8 name | rank u8 | dims u32 each
                | raw f32 payload

Model parameters come first in chain order; BN running statistics follow
in the same record format with names suffixed ``.running_mean`` /
``.running_var``. The byte stream is a pure function of the state dict,
so save -> load -> forward is bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"E2DC"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def write_records(path, records: list[tuple[str, np.ndarray]]) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(records))
    for name, arr in records:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if arr.ndim > 4:
            raise CheckpointError(f"{name}: rank {arr.ndim} > 4")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            buf += struct.pack("<I", d)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def read_records(path) -> list[tuple[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    records = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            records.append((name, arr.astype(np.float32)))
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated checkpoint ({e})") from e
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return records


def save_state(path, state: dict[str, np.ndarray]) -> None:
    # parameters first, running stats after, each group in insertion order
    params = [(k, v) for k, v in state.items() if not k.endswith(("running_mean", "running_var"))]
    stats = [(k, v) for k, v in state.items() if k.endswith(("running_mean", "running_var"))]
    write_records(path, params + stats)


def load_state(path) -> dict[str, np.ndarray]:
    return dict(read_records(path))
