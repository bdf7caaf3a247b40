"""File output: atomic writes, deterministic JSON/CSV and state snapshots.

Every file is written to a temporary name in the target directory and
renamed into place, so a failed run never leaves a partial file behind.
Floats are written with ``repr`` (shortest round-trip decimal form).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile

import numpy as np

from .errors import DimensionError

SNAPSHOT_MAGIC = "ddvar-snapshot-1"


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temporary file and an atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def json_text(doc):
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, doc):
    return atomic_write_text(path, json_text(doc))


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def csv_text(rows, fields=None):
    """CSV with a header row; floats in round-trip precision."""
    rows = list(rows)
    if fields is None:
        fields = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(row.get(f, "")) for f in fields])
    return buf.getvalue()


def write_csv(path, rows, fields=None):
    return atomic_write_text(path, csv_text(rows, fields))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def snapshot_bytes(states, grid, params=None):
    """Serialise ``(..., 3, nlon, nlat)`` states: JSON header line plus little-endian float64."""
    arr = np.ascontiguousarray(states, dtype="<f8")
    if arr.shape[-3:] != grid.state_shape:
        raise DimensionError(f"snapshot shape {arr.shape} does not end with {grid.state_shape}")
    header = {"magic": SNAPSHOT_MAGIC, "shape": list(arr.shape), "dtype": "<f8",
              "order": "C", "variables": ["u", "v", "h"], "grid": grid.to_dict(),
              "params": params.to_dict() if params is not None else None}
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + arr.tobytes()


def write_snapshot(path, states, grid, params=None):
    return atomic_write_bytes(path, snapshot_bytes(states, grid, params))


def read_snapshot(path):
    """Return ``(states, header)`` from a snapshot file; bit-exact round trip."""
    with open(path, "rb") as fh:
        data = fh.read()
    line, _, body = data.partition(b"\n")
    header = json.loads(line.decode("utf-8"))
    if header.get("magic") != SNAPSHOT_MAGIC:
        raise DimensionError(f"{path} is not a state snapshot")
    shape = tuple(header["shape"])
    arr = np.frombuffer(body, dtype=header["dtype"])
    if arr.size != int(np.prod(shape)):
        raise DimensionError(f"snapshot body holds {arr.size} values, header says {shape}")
    return arr.reshape(shape).astype(float), header


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
