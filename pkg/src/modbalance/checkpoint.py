"""Binary checkpoints: a JSON header followed by raw little-endian float64.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then the concatenated tensor payloads. The header records tensor
names, shapes, and byte offsets into the payload plus arbitrary metadata,
so files are self-describing and round-trip bit-exactly.
"""

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"MBCK0001"


def save_checkpoint(path, tensors, meta=None):
    """Write named arrays (dict name -> ndarray) plus a metadata dict."""
    entries = []
    chunks = []
    offset = 0
    for name, array in tensors.items():
        data = np.asarray(array, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape),
                        "offset": offset})
        chunk = data.tobytes(order="C")
        chunks.append(chunk)
        offset += len(chunk)
    header = json.dumps({"meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Read back ``(meta, tensors)``; raises CheckpointError on bad files."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = blob[16 + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} runs past end of file")
        tensors[entry["name"]] = np.frombuffer(
            payload[start:end], dtype="<f8").reshape(shape).copy()
    return header.get("meta", {}), tensors
