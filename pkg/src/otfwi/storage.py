"""Binary grid and gather files, CSV tables, atomic writes.

Both binary layouts start with a 16-byte header: an 8-byte magic string, a
little-endian ``u32`` format version and the ``u32`` byte-order mark
``0x01020304`` written little-endian. Everything after it is little-endian.

grid   : nx, nz (u64); dx, dz (f64); nx*nz f64 (squared slowness for models), z fastest
gather : n_rec, nt (u64); dt (f64); n_rec (x, z) f64 pairs; n_rec*nt f64, time fastest
"""

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .wave import SlownessModel

VERSION = 1
GRID_MAGIC = b"OTFWIGRD"
GATHER_MAGIC = b"OTFWIGTH"
_BOM = 0x01020304
_HEADER = struct.Struct("<8sII")


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _header(magic):
    return _HEADER.pack(magic, VERSION, _BOM)


def _check_header(buf, magic, path):
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(buf)} of {_HEADER.size} bytes)")
    got, version, bom = _HEADER.unpack_from(buf)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if bom != _BOM:
        if bom == int.from_bytes(_BOM.to_bytes(4, "little"), "big"):
            raise FormatError(f"{path}: big-endian file; only little-endian is supported")
        raise FormatError(f"{path}: corrupt byte-order mark {bom:#010x}")
    if version != VERSION:
        raise FormatError(f"{path}: format version {version}, this reader supports {VERSION}")
    return _HEADER.size


def _read(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None


def _payload(buf, offset, count, path, what):
    need = offset + 8 * count
    if len(buf) < need:
        raise FormatError(f"{path}: truncated {what}: {len(buf)} bytes, expected {need}")
    if len(buf) > need:
        raise FormatError(f"{path}: {len(buf) - need} trailing bytes after {what}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(float)


def grid_bytes(values, dx, dz):
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"grid must be 2-D, got shape {values.shape}")
    nx, nz = values.shape
    head = _header(GRID_MAGIC) + struct.pack("<QQdd", nx, nz, dx, dz)
    return head + np.ascontiguousarray(values, dtype="<f8").tobytes()


def write_grid_array(values, dx, dz, path):
    """Any per-cell field (gradients, relative differences) in the grid layout."""
    return atomic_write(path, grid_bytes(values, dx, dz))


def write_grid(model, path):
    return write_grid_array(model.m, model.dx, model.dz, path)


def read_grid_array(path):
    """Returns ``(values, dx, dz)``."""
    buf = _read(path)
    off = _check_header(buf, GRID_MAGIC, path)
    dims = struct.Struct("<QQdd")
    if len(buf) < off + dims.size:
        raise FormatError(f"{path}: truncated grid dimensions")
    nx, nz, dx, dz = dims.unpack_from(buf, off)
    if nx < 1 or nz < 1:
        raise FormatError(f"{path}: invalid dimensions nx={nx}, nz={nz}")
    values = _payload(buf, off + dims.size, nx * nz, path, "grid payload").reshape(nx, nz)
    return values, dx, dz


def read_grid(path):
    """Squared-slowness model; the payload must be finite and positive."""
    m, dx, dz = read_grid_array(path)
    try:
        return SlownessModel(m, dx, dz)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def gather_bytes(gather, dt, receivers):
    gather = np.atleast_2d(np.asarray(gather, dtype=float))
    receivers = np.asarray(receivers, dtype=float).reshape(-1, 2)
    nrec, nt = gather.shape
    if receivers.shape[0] != nrec:
        raise ValueError(f"{receivers.shape[0]} receiver positions for {nrec} traces")
    head = _header(GATHER_MAGIC) + struct.pack("<QQd", nrec, nt, dt)
    return head + receivers.astype("<f8").tobytes() + gather.astype("<f8").tobytes()


def write_gather(gather, dt, receivers, path):
    return atomic_write(path, gather_bytes(gather, dt, receivers))


def read_gather(path):
    """Returns ``(gather, dt, receivers)``."""
    buf = _read(path)
    off = _check_header(buf, GATHER_MAGIC, path)
    dims = struct.Struct("<QQd")
    if len(buf) < off + dims.size:
        raise FormatError(f"{path}: truncated gather dimensions")
    nrec, nt, dt = dims.unpack_from(buf, off)
    if nrec < 1 or nt < 1 or not dt > 0:
        raise FormatError(f"{path}: invalid gather header nrec={nrec}, nt={nt}, dt={dt}")
    flat = _payload(buf, off + dims.size, 2 * nrec + nrec * nt, path, "gather payload")
    return flat[2 * nrec:].reshape(nrec, nt), dt, flat[: 2 * nrec].reshape(nrec, 2)


def csv_text(header, rows):
    """Deterministic CSV: floats in shortest round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    return atomic_write(path, csv_text(header, rows))


def write_history(history, path):
    """Optimizer history as ``iter,value,grad_norm,step``."""
    rows = [(r.iter, r.value, r.grad_norm, r.step) for r in history]
    return write_csv(path, ["iter", "value", "grad_norm", "step"], rows)
