"""Flat binary parameter container.

Layout (all integers little-endian):

    bytes 0..3    magic ``UDCP``
    bytes 4..7    u32 format version (currently 1)
    bytes 8..11   u32 byte length of the JSON manifest
    manifest      UTF-8 JSON: {"meta": {...}, "entries": [
                      {"name": str, "shape": [int...], "offset": int}, ...]}
    payload       concatenated little-endian float64 arrays, row-major;
                  ``offset`` is in bytes from the start of the payload.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from udeer.errors import CheckpointError

MAGIC = b"UDCP"
VERSION = 1


def save_checkpoint(path, arrays, meta=None) -> None:
    """Write named float64 arrays plus a free-form metadata dict."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes(order="C")
    manifest = json.dumps({"meta": meta or {}, "entries": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(payload)


def load_checkpoint(path):
    """Read a container back as (OrderedDict name -> float64 array, meta)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, manifest_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        manifest = json.loads(blob[12 : 12 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    payload = blob[12 + manifest_len :]
    arrays = OrderedDict()
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: entry {entry['name']!r} overruns payload")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
    return arrays, manifest.get("meta", {})
