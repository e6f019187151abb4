"""Self-describing binary checkpoint container.

Layout, all integers little-endian:

    magic   8 bytes  b"GPENCKPT"
    version u32
    meta    u64 length + UTF-8 text, one "key=value" line per entry
    count   u64 number of tensor records
    record  u32 name length + name bytes
            u16 dtype-name length + dtype name (e.g. "float32")
            u32 ndim, then ndim x u64 dims
            u64 payload length + raw C-order little-endian data

Saving and re-loading preserves every byte: metadata is written with sorted
keys and tensors keep their insertion order.  Any structural problem (bad
magic, unknown version, truncation) raises CheckpointFormatError without
returning partial data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GPENCKPT"
FORMAT_VERSION = 1


class CheckpointFormatError(RuntimeError):
    """The file is not a readable checkpoint of the supported version."""


class IncompatibleCheckpointError(RuntimeError):
    """The checkpoint is well formed but does not fit the requested model."""


def _little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    if not arr.flags.c_contiguous:
        # note: ascontiguousarray would promote 0-dim arrays to shape (1,)
        arr = np.ascontiguousarray(arr)
    return arr


def write_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict[str, str]) -> None:
    """Serialize named arrays plus string metadata to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_text = "".join(f"{k}={metadata[k]}\n" for k in sorted(metadata))
    meta_bytes = meta_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, tensor in tensors.items():
            arr = _little_endian(np.asarray(tensor))
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.name.encode("ascii")
            payload = arr.tobytes(order="C")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<H", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError(
            f"truncated checkpoint: wanted {n} bytes for {what}, got {len(data)}"
        )
    return data


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Deserialize a checkpoint; returns (tensors, metadata)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        meta_text = _read_exact(fh, meta_len, "metadata").decode("utf-8")
        metadata: dict[str, str] = {}
        for line in meta_text.splitlines():
            if not line:
                continue
            if "=" not in line:
                raise CheckpointFormatError(f"bad metadata line {line!r}")
            key, value = line.split("=", 1)
            metadata[key] = value
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (dtype_len,) = struct.unpack("<H", _read_exact(fh, 2, "dtype length"))
            dtype_name = _read_exact(fh, dtype_len, "dtype").decode("ascii")
            try:
                dtype = np.dtype(dtype_name).newbyteorder("<")
            except TypeError as exc:
                raise CheckpointFormatError(f"unknown dtype {dtype_name!r}") from exc
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape")) if ndim else ()
            (payload_len,) = struct.unpack("<Q", _read_exact(fh, 8, "payload length"))
            expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            if payload_len != expected:
                raise CheckpointFormatError(
                    f"tensor {name!r}: payload {payload_len} bytes, shape implies {expected}"
                )
            payload = _read_exact(fh, payload_len, f"tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointFormatError("trailing bytes after last tensor record")
    return tensors, metadata
