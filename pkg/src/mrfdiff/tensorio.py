"""Binary tensor files ("QMRF" format) with JSON sidecars.

Layout of a tensor file, all integers little-endian::

    magic    4 bytes   b"QMRF"
    version  uint32    FORMAT_VERSION
    dtype    uint32    0 = real64, 1 = real32, 2 = complex64 (f32 pairs)
    rank     uint32
    dims     uint64 * rank   (row-major extents, each >= 1)
    payload  element_count * scalar_width bytes

A sidecar ``<path>.meta.json`` always carries ``kind``, ``dims`` and ``dtype``.
Integer and boolean arrays are stored as real64 and restored on read through the
sidecar's ``logical_dtype`` entry.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"QMRF"
FORMAT_VERSION = 1

_CODES = {"real64": 0, "real32": 1, "complex64": 2}
_NAMES = {v: k for k, v in _CODES.items()}
_NUMPY = {"real64": np.dtype("<f8"), "real32": np.dtype("<f4"), "complex64": np.dtype("<c8")}


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


def _storage(arr):
    """Return (dtype name, array cast for storage, logical dtype or None)."""
    kind = arr.dtype.kind
    if kind == "c":
        return "complex64", arr.astype("<c8"), None
    if arr.dtype == np.float32:
        return "real32", arr.astype("<f4"), None
    if arr.dtype == np.float64:
        return "real64", arr.astype("<f8"), None
    if kind in "biu":
        return "real64", arr.astype("<f8"), arr.dtype.str
    raise TensorFormatError(f"unsupported dtype {arr.dtype}")


def header_size(rank):
    return 16 + 8 * rank


def expected_file_size(dims, dtype):
    return header_size(len(dims)) + int(np.prod(dims)) * _NUMPY[dtype].itemsize


def write_tensor(path, arr, kind="tensor", **meta):
    """Write ``arr`` to ``path`` plus a ``.meta.json`` sidecar.

    Extra keyword arguments land in the sidecar and must be JSON-serializable.
    """
    arr = np.asarray(arr)
    dims = [int(d) for d in arr.shape]
    if not dims or any(d < 1 for d in dims):
        raise TensorFormatError(f"invalid dims {dims}: need rank >= 1 and extents >= 1")
    dtype, stored, logical = _storage(arr)
    head = MAGIC + struct.pack("<III", FORMAT_VERSION, _CODES[dtype], len(dims))
    head += struct.pack(f"<{len(dims)}Q", *dims)
    sidecar = dict(meta)
    sidecar.update(kind=kind, dims=dims, dtype=dtype)
    if logical is not None:
        sidecar["logical_dtype"] = logical
    text = json.dumps(sidecar, indent=1, sort_keys=True)
    with open(path, "wb") as f:
        f.write(head)
        f.write(np.ascontiguousarray(stored).tobytes(order="C"))
    with open(str(path) + ".meta.json", "w") as f:
        f.write(text)


def read_meta(path):
    with open(str(path) + ".meta.json") as f:
        return json.load(f)


def read_tensor(path, with_meta=False):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 16:
        raise TruncatedPayloadError(f"{path}: truncated header")
    version, code, rank = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if code not in _NAMES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    hs = header_size(rank)
    if len(raw) < hs:
        raise TruncatedPayloadError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}Q", raw[16:hs])
    dt = _NUMPY[_NAMES[code]]
    need = int(np.prod(dims)) * dt.itemsize
    if len(raw) - hs < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(raw) - hs} bytes, dims imply {need}")
    arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(dims)), offset=hs).reshape(dims).copy()
    meta = {}
    sidecar = str(path) + ".meta.json"
    if os.path.exists(sidecar):
        meta = read_meta(path)
        if "logical_dtype" in meta:
            arr = arr.astype(np.dtype(meta["logical_dtype"]))
    return (arr, meta) if with_meta else arr
