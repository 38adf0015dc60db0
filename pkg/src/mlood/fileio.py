"""Matrix file formats (binary and CSV) and atomic JSON/CSV report writers.

Binary layout: magic ``OODM``, version byte 1, dtype byte (0 = 32-bit float,
1 = 64-bit float), two reserved zero bytes, then rows and cols as 64-bit
little-endian unsigned integers, then the row-major little-endian payload.
The payload length must match exactly; trailing bytes are an error.
64-bit round-trips are bit-exact.

CSV layout: header row ``c0,...,c{cols-1}`` followed by one decimal row per
matrix row. Values are printed with shortest round-trip formatting, so a
CSV round-trip is also exact.

Every writer goes through a temp file in the destination directory and an
atomic rename, so failed runs never leave partial outputs behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .baselines import MahalanobisModel
from .core import as_matrix
from .errors import (
    BadMagic,
    MalformedCsv,
    MissingArtifact,
    TruncatedPayload,
    UnsupportedVersion,
)

MAGIC = b"OODM"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBxxQQ")


def _atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path: str | os.PathLike, m: np.ndarray,
                 fmt: str = "binary", dtype: str = "f64") -> None:
    """Persist a matrix as binary (default) or CSV."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if fmt == "binary":
        code = {"f32": 0, "f64": 1}.get(dtype)
        if code is None:
            raise UnsupportedVersion(f"unknown dtype {dtype!r}")
        header = _HEADER.pack(MAGIC, VERSION, code, m.shape[0], m.shape[1])
        _atomic_write(path, header + np.ascontiguousarray(m, _DTYPES[code]).tobytes())
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"c{j}" for j in range(m.shape[1])])
        for r in range(m.shape[0]):
            writer.writerow([repr(float(v)) for v in m[r]])
        _atomic_write(path, buf.getvalue().encode("utf-8"))
    else:
        raise UnsupportedVersion(f"unknown format {fmt!r}")


def _read_binary(raw: bytes, path) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the header")
    magic, version, dtype_code, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: unsupported version {version}")
    dtype = _DTYPES.get(dtype_code)
    if dtype is None:
        raise UnsupportedVersion(f"{path}: unknown dtype byte {dtype_code}")
    if raw[6:8] != b"\x00\x00":
        raise UnsupportedVersion(f"{path}: reserved bytes must be zero")
    expected = rows * cols * dtype.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return as_matrix(values.reshape(rows, cols))


_HEADER_RE = re.compile(r"^c\d+$")


def _read_csv(raw: bytes, path) -> np.ndarray:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedCsv(f"{path}: not valid UTF-8 text") from exc
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header = rows[0]
    if not header or any(not _HEADER_RE.match(name) for name in header) or \
            header != [f"c{j}" for j in range(len(header))]:
        raise MalformedCsv(f"{path}: header must be c0,...,c{{cols-1}}")
    cols = len(header)
    data = np.empty((len(rows) - 1, cols))
    for r, fields in enumerate(rows[1:]):
        if len(fields) != cols:
            raise MalformedCsv(
                f"{path}: row {r + 1} has {len(fields)} fields, expected {cols}"
            )
        try:
            data[r] = [float(v) for v in fields]
        except ValueError as exc:
            raise MalformedCsv(f"{path}: row {r + 1} has a non-numeric field") from exc
    return as_matrix(data)


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    """Load a matrix, sniffing binary vs CSV by the magic bytes. 32-bit
    payloads are widened to 64-bit immediately."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"no such matrix file: {path}")
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        return _read_binary(raw, path)
    return _read_csv(raw, path)


def write_json(path: str | os.PathLike, obj) -> None:
    payload = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    _atomic_write(path, payload.encode("utf-8"))


def read_json(path: str | os.PathLike):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"no such file: {path}")
    return json.loads(path.read_text("utf-8"))


def write_csv_rows(path: str | os.PathLike, header: list[str], rows: list[list]) -> None:
    """Write a report CSV with shortest round-trip floats."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def save_mahalanobis(dirpath: str | os.PathLike, model: MahalanobisModel) -> None:
    """Persist a fitted Mahalanobis model (means, precision, reg) in the
    binary matrix format for calibration reuse."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    write_matrix(dirpath / "mahalanobis_means.mat", model.means)
    write_matrix(dirpath / "mahalanobis_precision.mat", model.precision)
    write_matrix(dirpath / "mahalanobis_reg.mat", np.array([[model.reg]]))


def load_mahalanobis(dirpath: str | os.PathLike) -> MahalanobisModel:
    dirpath = Path(dirpath)
    return MahalanobisModel(
        means=read_matrix(dirpath / "mahalanobis_means.mat"),
        precision=read_matrix(dirpath / "mahalanobis_precision.mat"),
        reg=float(read_matrix(dirpath / "mahalanobis_reg.mat")[0, 0]),
    )
