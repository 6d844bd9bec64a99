"""On-disk formats: the binary matrix container, CSV vectors/grids, PGM images.

Binary container layout (all integers little-endian)::

    magic      4 bytes   b"MRXK"
    version    uint32    currently 1
    rows       uint64
    cols       uint64
    n_records  uint32
    records    n_records x (uint64 byte length, UTF-8 JSON payload)
    data       rows*cols float64, little-endian, row-major

Measurement vectors use the same container with ``cols == 1``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MRXK"
VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def encode_container(matrix, records=()) -> bytes:
    a = np.asarray(matrix, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ContainerError("container payload must be 1D or 2D")
    parts = [MAGIC, struct.pack("<IQQI", VERSION, a.shape[0], a.shape[1], len(records))]
    for rec in records:
        payload = json.dumps(rec, sort_keys=True, allow_nan=False).encode("utf-8")
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    parts.append(np.ascontiguousarray(a).tobytes(order="C"))
    return b"".join(parts)


def write_container(path, matrix, records=()) -> Path:
    return atomic_write_bytes(path, encode_container(matrix, records))


def decode_container(buf: bytes):
    """Return ``(matrix, records)`` from container bytes."""
    if buf[:4] != MAGIC:
        raise ContainerError("bad magic; not an operator/measurement container")
    header = struct.calcsize("<IQQI")
    if len(buf) < 4 + header:
        raise ContainerError("truncated header")
    version, rows, cols, n_rec = struct.unpack_from("<IQQI", buf, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    off = 4 + header
    records = []
    for _ in range(n_rec):
        (length,) = struct.unpack_from("<Q", buf, off)
        off += 8
        records.append(json.loads(buf[off : off + length].decode("utf-8")))
        off += length
    expected = rows * cols * 8
    if len(buf) - off != expected:
        raise ContainerError(f"payload is {len(buf) - off} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
    return data.astype(float), records


def read_container(path):
    return decode_container(Path(path).read_bytes())


def format_float(x: float) -> str:
    # repr round-trips exactly
    return repr(float(x))


def write_vector_csv(path, values) -> Path:
    v = np.asarray(values, dtype=float).ravel()
    return atomic_write_text(path, "".join(format_float(x) + "\n" for x in v))


def read_vector_csv(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return np.array([float(ln) for ln in lines if ln], dtype=float)


def write_grid_csv(path, image) -> Path:
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("grid CSV needs a 2D array")
    rows = (",".join(format_float(x) for x in row) for row in img)
    return atomic_write_text(path, "\n".join(rows) + "\n")


def read_grid_csv(path) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array([[float(x) for x in ln.split(",")] for ln in rows], dtype=float)


def encode_pgm(image, bits=16, vmin=None, vmax=None):
    """Linearly map ``image`` to integer gray levels; returns ``(bytes, scaling)``.

    ``scaling`` holds ``vmin``/``vmax``/``maxval`` so that
    ``value = vmin + level / maxval * (vmax - vmin)``.
    Row 0 of the array is written first.
    """
    if bits not in (8, 16):
        raise ValueError("PGM depth must be 8 or 16 bits")
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    maxval = 255 if bits == 8 else 65535
    lo = float(np.min(img)) if vmin is None else float(vmin)
    hi = float(np.max(img)) if vmax is None else float(vmax)
    span = hi - lo
    if span > 0:
        levels = np.rint((np.clip(img, lo, hi) - lo) / span * maxval)
    else:
        levels = np.zeros_like(img)
    levels = levels.astype(">u2" if bits == 16 else "u1")
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    return head + levels.tobytes(), {"vmin": lo, "vmax": hi, "maxval": maxval, "bits": bits}


def write_pgm(path, image, bits=16, vmin=None, vmax=None) -> dict:
    data, scaling = encode_pgm(image, bits, vmin, vmax)
    atomic_write_bytes(path, data)
    return scaling


def read_pgm(path, scaling=None) -> np.ndarray:
    """Read a binary PGM. Returns gray levels, or physical values if ``scaling`` is given."""
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while buf[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError("only binary (P5) PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    levels = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(float)
    if scaling is None:
        return levels
    return scaling["vmin"] + levels / maxval * (scaling["vmax"] - scaling["vmin"])
