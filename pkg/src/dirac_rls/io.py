"""Field dumps, CSV writers and the run manifest.

Binary field layout (all little-endian)::

    offset  size  content
    0       4     magic b"RLSF"
    4       4     uint32 format version (1)
    8       4     uint32 n (points per axis)
    12      8     float64 h
    20      24    float64 origin[3]
    44      4     uint32 components (4)
    48      ...   complex128 samples, C order over (i, j, k, component)
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import ValidationError
from .grid import GridSpec, SpinorField

MAGIC = b"RLSF"
VERSION = 1
_HEADER = struct.Struct("<4sIId3dI")


def write_field(path, field_: SpinorField) -> None:
    g = field_.grid
    hdr = _HEADER.pack(MAGIC, VERSION, g.n, g.h, *g.origin, field_.samples.shape[-1])
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.ascontiguousarray(field_.samples, dtype="<c16").tobytes())


def read_field(path) -> SpinorField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header", module="cli_io")
    magic, ver, n, h, o1, o2, o3, nc = _HEADER.unpack_from(raw)
    if magic != MAGIC or ver != VERSION:
        raise ValidationError(f"{path}: not a version-{VERSION} field dump", module="cli_io")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if data.size != n ** 3 * nc:
        raise ValidationError(f"{path}: expected {n ** 3 * nc} samples, found {data.size}",
                              module="cli_io")
    g = GridSpec(n, h, (o1, o2, o3))
    return SpinorField(data.reshape(n, n, n, nc).astype(complex), g)


def write_field_csv(path, field_: SpinorField) -> None:
    """One row per grid point: i, j, k, r1, r2, r3, then Re/Im of the 4 components."""
    g = field_.grid
    idx = np.indices(g.shape).reshape(3, -1).T
    pts = g.points().reshape(-1, 3)
    s = field_.samples.reshape(-1, 4)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "k", "r1", "r2", "r3"]
                   + [f"{p}{c}" for c in range(4) for p in ("re", "im")])
        for ii, r, v in zip(idx, pts, s):
            row = [int(x) for x in ii] + [repr(float(x)) for x in r]
            for c in v:
                row += [repr(float(c.real)), repr(float(c.imag))]
            w.writerow(row)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=1, sort_keys=True)
        fh.write("\n")


def atomic_write_json(path, data) -> None:
    """Write to a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=d)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(data), fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
