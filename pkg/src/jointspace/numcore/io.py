"""Binary tensor blobs and the manifest + blob container built on them.

A PBT1 blob is ``b"PBT1"``, a u8 dtype code (1 = little-endian f64), a u8
rank, ``rank`` little-endian u64 extents, then the row-major payload.

A container file is::

    b"JSCT" | u32 version | u64 manifest length | UTF-8 JSON manifest | blobs

The manifest records the container ``kind``, free-form ``meta`` and, per
tensor, its name, dims, byte offset into the blob section and blob length.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, ShapeError

BLOB_MAGIC = b"PBT1"
DTYPE_F64 = 1
CONTAINER_MAGIC = b"JSCT"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def encode_tensor(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    if arr.ndim > 255:
        raise ValueError("rank above 255 is not encodable")
    head = BLOB_MAGIC + struct.pack("<BB", DTYPE_F64, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one blob starting at ``offset``; return it and the end offset."""
    if buf[offset:offset + 4] != BLOB_MAGIC:
        raise FormatError(f"bad tensor magic at byte {offset}")
    if len(buf) < offset + 6:
        raise FormatError("truncated tensor header")
    dtype, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}")
    pos = offset + 6
    if len(buf) < pos + 8 * ndim:
        raise FormatError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    nbytes = 8 * int(np.prod(dims, dtype=np.int64))
    if len(buf) < pos + nbytes:
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims)
    return arr.astype(np.float64), pos + nbytes


def tensor_digest(tensors: dict[str, np.ndarray]) -> str:
    """SHA-256 over the PBT1 encodings of ``tensors`` in name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode("utf-8"))
        h.update(encode_tensor(tensors[name]))
    return h.hexdigest()


def write_container(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        blob = encode_tensor(arr)
        entries.append({"name": name, "dims": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {"kind": kind, "meta": meta, "tensors": entries, "blob_bytes": offset}
    text = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(text)))
        fh.write(text)
        for blob in blobs:
            fh.write(blob)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Load a container, validating it fully before returning anything."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a container header")
    magic, version, mlen = _HEADER.unpack_from(buf, 0)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    start = _HEADER.size + mlen
    if len(buf) < start:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(buf[_HEADER.size:start].decode("utf-8"))
        entries = manifest["tensors"]
        blob_bytes = int(manifest["blob_bytes"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from None
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} container, found {manifest.get('kind')!r}")
    if len(buf) != start + blob_bytes:
        raise FormatError(f"{path}: blob section is {len(buf) - start} bytes, manifest says {blob_bytes}")
    tensors = {}
    for entry in entries:
        name = entry["name"]
        lo = start + int(entry["offset"])
        arr, end = decode_tensor(buf, lo)
        if end - lo != int(entry["nbytes"]):
            raise FormatError(f"{path}: tensor {name!r} length disagrees with manifest")
        if list(arr.shape) != list(entry["dims"]):
            raise ShapeError(f"{path}: tensor {name!r} has dims {list(arr.shape)} in the blob "
                             f"but {entry['dims']} in the manifest")
        tensors[name] = arr
    return manifest.get("meta", {}), tensors
