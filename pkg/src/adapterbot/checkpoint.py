"""Named-tensor checkpoint container shared by every trainable artifact.

Layout: one UTF-8 text header line (JSON: format version, free-form config
fields, ordered tensor directory with name/shape/byte offset), a newline,
then the raw little-endian float32 payload. Round-trips are bit-exact.
"""

import hashlib
import json

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_tensors(path, config, tensors):
    """Write ``tensors`` (ordered name -> float32 ndarray) plus config fields."""
    directory = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        blob = arr.astype("<f4", copy=False).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": dict(config),
        "tensors": directory,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_tensors(path):
    """Read a checkpoint; returns (config dict, ordered name -> ndarray)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad checkpoint header in {path}: {e}") from e
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {header.get('format_version')!r}"
            )
        data = f.read()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * n
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint {path}: {entry['name']}")
        arr = np.frombuffer(data[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = np.ascontiguousarray(arr, dtype=np.float32)
    return header["config"], tensors


def content_hash(tensors):
    """Order-independent SHA-256 over named float32 tensors."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.astype("<f4", copy=False).tobytes())
    return h.hexdigest()
