"""Platform-independent file formats: array blobs, datasets and checkpoints.

ArrayBlob layout (all integers little-endian)::

    b"NITOARR1" | dtype tag b"f32\\0" or b"f64\\0" | ndim u32 | shape u64 * ndim
    | crc32(payload) u32 | row-major payload

Checkpoint layout::

    b"NITOCKP1" | header length u64 | UTF-8 JSON header | float64 payload

The header lists every tensor (name, shape, byte offset) and the payload crc32.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from nito.errors import ChecksumError, TruncatedFileError, VersionError

ARRAY_MAGIC = b"NITOARR1"
CHECKPOINT_MAGIC = b"NITOCKP1"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1
_DTYPES = {b"f32\0": np.dtype("<f4"), b"f64\0": np.dtype("<f8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


def encode_array(array, dtype="f64") -> bytes:
    dt = np.dtype("<f4") if dtype == "f32" else np.dtype("<f8")
    arr = np.ascontiguousarray(np.asarray(array), dtype=dt)
    payload = arr.tobytes(order="C")
    head = ARRAY_MAGIC + _TAGS[dt] + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + struct.pack("<I", zlib.crc32(payload)) + payload


def decode_array(data: bytes) -> np.ndarray:
    if len(data) < 16:
        raise TruncatedFileError("array blob shorter than its fixed header")
    if data[:8] != ARRAY_MAGIC:
        raise VersionError(f"unrecognized array magic {data[:8]!r}")
    tag = data[8:12]
    if tag not in _DTYPES:
        raise VersionError(f"unknown dtype tag {tag!r}")
    dt = _DTYPES[tag]
    (ndim,) = struct.unpack_from("<I", data, 12)
    pos = 16 + 8 * ndim
    if len(data) < pos + 4:
        raise TruncatedFileError("array blob header is truncated")
    shape = struct.unpack_from(f"<{ndim}Q", data, 16)
    (crc,) = struct.unpack_from("<I", data, pos)
    pos += 4
    nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = data[pos:pos + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFileError(f"array payload has {len(payload)} of {nbytes} bytes")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("array payload checksum mismatch")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


def save_array(path, array, dtype="f64"):
    Path(path).write_bytes(encode_array(array, dtype))


def load_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_checkpoint(path, arch: dict, tensors: dict, metadata: dict):
    """Write named float64 tensors plus JSON-able architecture and metadata."""
    index, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": arch,
        "metadata": metadata,
        "tensors": index,
        "crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + payload)


def read_checkpoint(path):
    """Return (arch, tensors, metadata) from a checkpoint file."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TruncatedFileError("checkpoint shorter than its fixed header")
    if data[:8] != CHECKPOINT_MAGIC:
        raise VersionError(f"unrecognized checkpoint magic {data[:8]!r}")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + hlen:
        raise TruncatedFileError("checkpoint header is truncated")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {header.get('version')!r}")
    payload = data[16 + hlen:]
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) < expected:
        raise TruncatedFileError(f"checkpoint payload has {len(payload)} of {expected} bytes")
    if zlib.crc32(payload) != header["crc32"]:
        raise ChecksumError("checkpoint payload checksum mismatch")
    tensors = {}
    for t in header["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        tensors[t["name"]] = np.frombuffer(raw, dtype="<f8").reshape(t["shape"]).astype(np.float64)
    return header["arch"], tensors, header["metadata"]
