"""Versioned binary container of named arrays plus a JSON meta block.

Byte layout, in order:
    8 bytes   magic b"UFETENS1"
    8 bytes   header length, unsigned little-endian
    N bytes   UTF-8 JSON header: {"version": 1, "meta": {...},
              "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
    payload   raw C-order array bytes, little-endian, at the offsets
              recorded in the header (relative to payload start)

Writing is deterministic: sorted JSON keys, tensors in insertion order,
no timestamps. Used for model checkpoints and beamformer banks.
"""

import json
import struct

import numpy as np

MAGIC = b"UFETENS1"

_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4"),
           "<c16": np.dtype("<c16"), "<i8": np.dtype("<i8")}


def _canonical_dtype(arr):
    for code, dt in _DTYPES.items():
        if arr.dtype == dt:
            return code
    if np.issubdtype(arr.dtype, np.floating):
        return "<f8"
    if np.issubdtype(arr.dtype, np.complexfloating):
        return "<c16"
    if np.issubdtype(arr.dtype, np.integer):
        return "<i8"
    raise ValueError(f"unsupported dtype {arr.dtype}")


def write_tensors(path, tensors, meta=None):
    """
    Write named arrays to a container file
    Arguments:
        tensors: dict name -> array (float/complex/int)
        meta: JSON-serializable dict stored alongside
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _canonical_dtype(arr)
        blob = np.ascontiguousarray(arr.astype(_DTYPES[code])).tobytes()
        entries.append({"name": name, "dtype": code,
                        "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": 1, "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fd:
        fd.write(MAGIC)
        fd.write(struct.pack("<Q", len(header)))
        fd.write(header)
        for blob in blobs:
            fd.write(blob)


def read_tensors(path):
    """
    Read a container file
    Return:
        (tensors, meta): dict name -> array, and the stored meta dict
    """
    with open(path, "rb") as fd:
        magic = fd.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tensor container "
                             f"(magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fd.read(8))
        header = json.loads(fd.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported container version "
                             f"{header.get('version')}")
        payload = fd.read()
    tensors = {}
    for ent in header["tensors"]:
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[ent["dtype"]])
        tensors[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return tensors, header["meta"]
