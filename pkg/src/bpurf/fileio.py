"""Little-endian binary formats shared by the graph and model directories.

Matrix files ("BPRF-EMB"): 8-byte magic, u32 version, u32 rows, u32 cols,
then row-major f32 payload (loaded back as f64). Index files ("BPRF"):
4-byte magic, u32 version, u64 counts, then fixed-width records.
"""

import struct

import numpy as np

from .errors import VersionMismatch

EMB_MAGIC = b"BPRF-EMB"
BIN_MAGIC = b"BPRF"
VERSION = 1

RTREE_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("t", "<u2"), ("l", "<u4")])


def write_emb(path, array):
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("matrix files hold 2-D arrays")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", VERSION, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_emb(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != EMB_MAGIC:
            raise VersionMismatch(f"{path}: bad magic {magic!r}")
        version, rows, cols = struct.unpack("<III", fh.read(12))
        if version != VERSION:
            raise VersionMismatch(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if data.size != rows * cols:
        raise VersionMismatch(f"{path}: truncated payload")
    return data.reshape(rows, cols).astype(np.float64)


def _read_header(fh, path, expected_counts):
    magic = fh.read(4)
    if magic != BIN_MAGIC:
        raise VersionMismatch(f"{path}: bad magic {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    return struct.unpack("<" + "Q" * expected_counts, fh.read(8 * expected_counts))


def write_rtree_entries(path, xs, ys, types, locals_):
    rec = np.empty(len(xs), dtype=RTREE_RECORD)
    rec["x"], rec["y"], rec["t"], rec["l"] = xs, ys, types, locals_
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(xs)))
        fh.write(rec.tobytes())


def read_rtree_entries(path):
    with open(path, "rb") as fh:
        (count,) = _read_header(fh, path, 1)
        rec = np.frombuffer(fh.read(count * RTREE_RECORD.itemsize), dtype=RTREE_RECORD)
    if rec.size != count:
        raise VersionMismatch(f"{path}: truncated payload")
    return (
        rec["x"].astype(np.float64),
        rec["y"].astype(np.float64),
        rec["t"].astype(np.uint16),
        rec["l"].astype(np.uint32),
    )


def write_svindex(path, offsets, targets):
    offsets = np.asarray(offsets, dtype="<u8")
    targets = np.asarray(targets, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<IQQ", VERSION, len(offsets) - 1, len(targets)))
        fh.write(offsets.tobytes())
        fh.write(targets.tobytes())


def read_svindex(path):
    with open(path, "rb") as fh:
        n_spatial, total = _read_header(fh, path, 2)
        offsets = np.frombuffer(fh.read((n_spatial + 1) * 8), dtype="<u8")
        targets = np.frombuffer(fh.read(total * 4), dtype="<u4")
    if offsets.size != n_spatial + 1 or targets.size != total:
        raise VersionMismatch(f"{path}: truncated payload")
    return offsets.astype(np.int64), targets.astype(np.uint32)
