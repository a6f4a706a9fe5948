"""Q4DG tensor container: the on-disk format for checkpoints and datasets.

Layout, all little-endian::

    b"Q4DG"                magic
    u32                    format version
    u64                    record count
    per record:
        u32                name length in bytes
        bytes              UTF-8 name
        u32                ndim
        u64 * ndim         dims
        f64 * prod(dims)   data, row-major
"""
import struct
from pathlib import Path

import numpy as np

MAGIC = b"Q4DG"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


class CorruptContainerError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


def encode(arrays):
    chunks = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode(buf):
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptContainerError(
                f"truncated container: need {n} bytes at offset {pos}, have {len(view) - pos}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CorruptContainerError("bad magic, not a Q4DG container")
    version, count = struct.unpack("<IQ", take(12))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported container version {version}")
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        arrays[name] = data.reshape(dims)
    if pos != len(view):
        raise CorruptContainerError(f"{len(view) - pos} trailing bytes after last record")
    return arrays


def save(path, arrays):
    Path(path).write_bytes(encode(arrays))


def load(path):
    return decode(Path(path).read_bytes())
