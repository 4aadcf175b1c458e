"""STEM1 binary files: single matrices and multi-tensor containers.

Two layouts share the magic string ``STEM1``:

* matrix file: ``STEM1`` + u32 rows + u32 cols + f32 row-major payload
  (little-endian throughout), used for tempograms. An optional sidecar
  CSV carries the tempo axis.
* tensor container: ``STEM1`` + u32 0xFFFFFFFF marker + u32 manifest
  length + JSON manifest + concatenated f32 payloads. The manifest lists
  tensor names, shapes, and byte offsets (relative to the payload start)
  plus a free-form ``meta`` dict. Used for model/optimizer checkpoints.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"STEM1"
_CONTAINER_MARKER = 0xFFFFFFFF


def write_matrix(path, values):
    """Write a 2-D float array as a STEM1 matrix file."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise FormatError(f"matrix file requires a 2-D array, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(arr.tobytes())


def read_matrix(path):
    """Read a STEM1 matrix file back into a float32 array."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a STEM1 file (magic {magic!r})")
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated STEM1 header")
        rows, cols = struct.unpack("<II", header)
        if rows == _CONTAINER_MARKER:
            raise FormatError(f"{path}: STEM1 tensor container, not a matrix file")
        payload = fh.read(4 * rows * cols)
    if len(payload) != 4 * rows * cols:
        raise FormatError(f"{path}: payload truncated ({len(payload)} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def write_axis_csv(path, axis, header="bin,bpm"):
    """Write the sidecar CSV listing one axis value per matrix column."""
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, v in enumerate(np.asarray(axis)):
            fh.write(f"{i},{v:.6f}\n")


def write_tensors(path, tensors, meta=None):
    """Write named arrays plus a metadata dict as a STEM1 container.

    ``tensors`` is a name -> ndarray mapping; arrays are stored float32
    row-major in insertion order.
    """
    entries = []
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += len(payloads[-1])
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", _CONTAINER_MARKER, len(manifest)))
        fh.write(manifest)
        for blob in payloads:
            fh.write(blob)


def read_tensors(path):
    """Read a STEM1 container; returns (name -> float32 ndarray, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a STEM1 file (magic {magic!r})")
        marker, manifest_len = struct.unpack("<II", fh.read(8))
        if marker != _CONTAINER_MARKER:
            raise FormatError(f"{path}: STEM1 matrix file, not a tensor container")
        manifest = json.loads(fh.read(manifest_len).decode())
        payload = fh.read()
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        blob = payload[start : start + 4 * n]
        if len(blob) != 4 * n:
            raise FormatError(f"{path}: tensor {entry['name']} truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
    return tensors, manifest.get("meta", {})
