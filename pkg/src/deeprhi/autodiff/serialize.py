"""Binary weight container.

Layout (all integers little-endian)::

    b"RHIW"                       magic
    uint32   version              currently 1
    uint32   meta_len             length of the metadata block
    bytes    meta                 UTF-8 ``key=value`` lines (may be empty)
    uint32   count                number of parameter records
    count x:
        uint32   name_len
        bytes    name             UTF-8
        uint32   rank
        uint64   dims[rank]
        float64  data[prod(dims)] row-major

Metadata values are strings; callers own their interpretation.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RHIW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    meta = meta or {}
    lines = []
    for k, v in meta.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise WeightFormatError(f"metadata entry {k!r} is not representable")
        lines.append(f"{k}={v}")
    meta_bytes = "\n".join(lines).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    out.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        # asarray keeps 0-d shapes; tobytes() emits C order regardless
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if blob[:4] != MAGIC:
        raise WeightFormatError("bad magic, not an RHIW container")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise WeightFormatError("truncated container")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, meta_len = take("<II")
    if version != VERSION:
        raise WeightFormatError(f"unsupported container version {version}")
    meta_text = blob[pos:pos + meta_len].decode("utf-8")
    pos += meta_len
    meta = {}
    for line in meta_text.split("\n"):
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        if pos + 8 * n > len(blob):
            raise WeightFormatError(f"truncated data for {name!r}")
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
        pos += 8 * n
        params[name] = data.astype(np.float64).reshape(shape)
    if pos != len(blob):
        raise WeightFormatError("trailing bytes after last record")
    return params, meta


def save_weights(path, params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load_weights(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
