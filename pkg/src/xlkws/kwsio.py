"""Binary file formats for frame matrices, tag vectors and model checkpoints.

Frame files ("KWSF") store a single float32 matrix:

    magic "KWSF" | version u8 = 1 | T u32le | D u32le | T*D float32le row-major

Tag-vector files reuse the same container with one row per utterance and a
JSON-lines sidecar (``<path>.ids.jsonl``) mapping row index to utterance id.

Checkpoint files ("KWSM") store the network parameters:

    magic "KWSM" | version u8 = 1 | W u32le | n_arrays u32le |
    per array: ndim u8, dims u32le..., float32le payload

A JSON metadata sidecar (``<path>.meta.json``) carries the vocabulary hash,
feature-config hash and seed so runs cannot be mixed up silently.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FRAME_MAGIC = b"KWSF"
MODEL_MAGIC = b"KWSM"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a binary file does not match the expected layout."""


def write_frames(path, matrix):
    """Write a (T, D) float matrix as a KWSF file."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"frame matrix must be 2-D, got shape {m.shape}")
    t, d = m.shape
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<II", t, d))
        f.write(m.tobytes())


def read_frames(path):
    """Read a KWSF file back into a (T, D) float32 array."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FRAME_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FRAME_MAGIC!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        t, d = struct.unpack("<II", f.read(8))
        payload = f.read(4 * t * d)
        if len(payload) != 4 * t * d:
            raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).copy()


def write_tag_matrix(path, ids, matrix):
    """Write per-utterance tag vectors: KWSF matrix + row-id sidecar."""
    if len(ids) != matrix.shape[0]:
        raise FormatError("number of ids must match number of rows")
    write_frames(path, matrix)
    with open(str(path) + ".ids.jsonl", "w", encoding="utf-8") as f:
        for row, uid in enumerate(ids):
            f.write(json.dumps({"row": row, "id": uid}) + "\n")


def read_tag_matrix(path):
    """Read a tag-vector file; returns (ids, matrix)."""
    matrix = read_frames(path)
    ids = [None] * matrix.shape[0]
    with open(str(path) + ".ids.jsonl", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            ids[rec["row"]] = rec["id"]
    if any(uid is None for uid in ids):
        raise FormatError(f"{path}: sidecar does not cover every row")
    return ids, matrix


def write_checkpoint(path, arrays, output_dim, metadata=None):
    """Write an ordered list of parameter arrays as a KWSM checkpoint."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<B", FORMAT_VERSION))
        f.write(struct.pack("<II", output_dim, len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f4")
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack("<" + "I" * a.ndim, *a.shape))
            f.write(a.tobytes())
    if metadata is not None:
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
            json.dump(metadata, f, indent=2, sort_keys=True)
            f.write("\n")


def read_checkpoint(path):
    """Read a KWSM checkpoint; returns (arrays, output_dim, metadata)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        output_dim, n_arrays = struct.unpack("<II", f.read(8))
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack("<" + "I" * ndim, f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            payload = f.read(4 * count)
            if len(payload) != 4 * count:
                raise FormatError(f"{path}: truncated array payload")
            arrays.append(np.frombuffer(payload, dtype="<f4").reshape(shape).copy())
    metadata = None
    try:
        with open(str(path) + ".meta.json", encoding="utf-8") as f:
            metadata = json.load(f)
    except FileNotFoundError:
        pass
    return arrays, output_dim, metadata
