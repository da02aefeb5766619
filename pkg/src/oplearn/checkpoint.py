"""Self-describing binary container for model parameters.

Layout: magic "OPCK" | u32 version | u32 json_len | JSON metadata |
concatenated little-endian f64 arrays.  The metadata holds a model kind tag,
arbitrary scalar fields, and the ordered array directory (name + shape), so
a file can be loaded without knowing the writer's code.  JSON is serialized
with sorted keys and fixed separators, making checkpoints byte-stable for
identical contents (a plain zip archive would embed timestamps).
"""

import json
import struct
from typing import Dict

import numpy as np

from .errors import CheckpointError

MAGIC = b"OPCK"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def save_arrays(path, kind: str, meta: dict, arrays: Dict[str, np.ndarray]):
    """Write arrays (ordered as given) with their metadata."""
    directory = [{"name": name, "shape": list(arr.shape)}
                 for name, arr in arrays.items()]
    doc = {"kind": kind, "meta": meta, "arrays": directory}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path):
    """Read a checkpoint; returns (kind, meta, ordered name->array dict).

    Raises CheckpointError on a bad magic, version, or truncation — never
    returns partial state.
    """
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise CheckpointError("file too short for the header")
        magic, version, json_len = _HEAD.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        blob = fh.read(json_len)
        if len(blob) < json_len:
            raise CheckpointError("truncated metadata")
        try:
            doc = json.loads(blob)
        except ValueError as exc:
            raise CheckpointError(f"unparseable metadata: {exc}")
        if not isinstance(doc, dict) or "arrays" not in doc:
            raise CheckpointError("metadata missing the array directory")
        payload = fh.read()
    arrays = {}
    offset = 0
    for entry in doc["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(payload):
            raise CheckpointError(
                f"truncated array data for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            payload[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(payload):
        raise CheckpointError("trailing bytes after the declared arrays")
    return doc.get("kind"), doc.get("meta", {}), arrays
