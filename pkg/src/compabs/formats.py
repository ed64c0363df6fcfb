"""Binary and CSV containers shared by the artifacts.

Relation files: an 8-byte magic, a little-endian ``uint32`` version and
header length, a UTF-8 JSON header, a ``uint64`` record count and then packed
records ``(index: int64, lower: int32[d], upper: int32[d], blocked: uint8)``.
Controller files use their own magic with records
``(state: int64, count: uint32, inputs: int32[count])``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

RELATION_MAGIC = b"CABSREL\x00"
CONTROLLER_MAGIC = b"CABSCTL\x00"
VERSION = 1


class FormatError(ValueError):
    pass


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("index", "<i8"), ("lower", "<i4", (dim,)), ("upper", "<i4", (dim,)), ("blocked", "u1")]
    )


def _write_header(fh, magic: bytes, header: dict) -> None:
    blob = json.dumps(header, sort_keys=True).encode()
    fh.write(magic)
    fh.write(struct.pack("<II", VERSION, len(blob)))
    fh.write(blob)


def _read_header(fh, magic: bytes) -> dict:
    got = fh.read(8)
    if got != magic:
        raise FormatError(f"bad magic {got!r}")
    head = fh.read(8)
    if len(head) != 8:
        raise FormatError("truncated header")
    version, n = struct.unpack("<II", head)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError("truncated header")
    return json.loads(blob.decode())


def _read_count(fh) -> int:
    b = fh.read(8)
    if len(b) != 8:
        raise FormatError("missing record count")
    return struct.unpack("<Q", b)[0]


def write_relation(path, header: dict, index, lower, upper, blocked) -> None:
    index = np.asarray(index, dtype=np.int64)
    lower = np.asarray(lower).reshape(len(index), -1)
    upper = np.asarray(upper).reshape(len(index), -1)
    dim = lower.shape[1]
    rec = np.zeros(len(index), dtype=_record_dtype(dim))
    rec["index"] = index
    rec["lower"] = lower
    rec["upper"] = upper
    rec["blocked"] = np.asarray(blocked, dtype=np.uint8)
    header = dict(header, record_dim=dim)
    with open(path, "wb") as fh:
        _write_header(fh, RELATION_MAGIC, header)
        fh.write(struct.pack("<Q", len(rec)))
        fh.write(rec.tobytes())


def read_relation(path):
    """Returns ``(header, index, lower, upper, blocked)``."""
    with open(path, "rb") as fh:
        header = _read_header(fh, RELATION_MAGIC)
        n = _read_count(fh)
        dt = _record_dtype(int(header["record_dim"]))
        body = fh.read(n * dt.itemsize)
    if len(body) != n * dt.itemsize:
        raise FormatError("truncated relation file")
    rec = np.frombuffer(body, dtype=dt)
    return (
        header,
        rec["index"].astype(np.int64),
        rec["lower"].astype(np.int64),
        rec["upper"].astype(np.int64),
        rec["blocked"].astype(bool),
    )


def write_controller(path, header: dict, states, inputs) -> None:
    """``inputs[k]`` is the array of admissible input indices of ``states[k]``."""
    with open(path, "wb") as fh:
        _write_header(fh, CONTROLLER_MAGIC, header)
        fh.write(struct.pack("<Q", len(states)))
        for s, us in zip(states, inputs):
            us = np.asarray(us, dtype="<i4")
            fh.write(struct.pack("<qI", int(s), len(us)))
            fh.write(us.tobytes())


def read_controller(path):
    """Returns ``(header, states, list_of_input_arrays)``."""
    with open(path, "rb") as fh:
        header = _read_header(fh, CONTROLLER_MAGIC)
        n = _read_count(fh)
        states = np.empty(n, dtype=np.int64)
        inputs = []
        for k in range(n):
            rec = fh.read(12)
            if len(rec) != 12:
                raise FormatError("truncated controller file")
            s, c = struct.unpack("<qI", rec)
            body = fh.read(4 * c)
            if len(body) != 4 * c:
                raise FormatError("truncated controller file")
            states[k] = s
            inputs.append(np.frombuffer(body, dtype="<i4").astype(np.int64))
    return header, states, inputs


def write_matrix_csv(path, M, header: list[str] | None = None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    kw = {"header": ",".join(header), "comments": ""} if header else {}
    np.savetxt(path, M, delimiter=",", fmt="%.17g", **kw)


def read_matrix_csv(path, header: bool = False) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2))


def write_table_csv(path, columns: list[str], rows) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    np.savetxt(path, rows, delimiter=",", fmt="%.17g", header=",".join(columns), comments="")


def read_table_csv(path):
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return cols, data.reshape(-1, len(cols))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
