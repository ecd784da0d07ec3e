"""Deterministic file I/O: atomic writes, content digests, canonical JSON
and CSV serialization, and a columnar binary cache for prepared observations.

Every writer here goes through write-temp-then-rename in the destination
directory, so concurrent readers never see a partial file and a crashed run
never leaves a truncated output behind.  Serialization is canonical (sorted
JSON keys, fixed column order, shortest-roundtrip floats), so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile

import numpy as np
import pandas as pd

from .validation import DataError

#: Cache file magic: format name plus a one-byte version.  Bump the version on
#: any layout change; readers reject anything they do not recognize.
CACHE_MAGIC = b"NVRKCOL"
CACHE_VERSION = 1

_KIND_FLOAT = "f8"
_KIND_INT = "i8"
_KIND_STR = "str"
_KIND_TIMESTAMP = "ts"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    """Hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(path, obj) -> None:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def write_csv(path, df: pd.DataFrame) -> None:
    """CSV with the frame's column order, no index, '\\n' line endings.

    pandas emits shortest-roundtrip float text, so equal frames serialize to
    equal bytes.
    """
    buf = io.StringIO()
    df.to_csv(buf, index=False, lineterminator="\n")
    atomic_write_text(path, buf.getvalue())


def _column_kind(series: pd.Series) -> str:
    dtype = series.dtype
    if pd.api.types.is_datetime64_any_dtype(dtype):
        return _KIND_TIMESTAMP
    if pd.api.types.is_float_dtype(dtype):
        return _KIND_FLOAT
    if pd.api.types.is_integer_dtype(dtype):
        return _KIND_INT
    return _KIND_STR


def _encode_column(series: pd.Series, kind: str) -> bytes:
    if kind == _KIND_FLOAT:
        return series.to_numpy(dtype="<f8").tobytes()
    if kind == _KIND_INT:
        return series.to_numpy(dtype="<i8").tobytes()
    if kind == _KIND_TIMESTAMP:
        # UTC nanoseconds since epoch
        values = pd.to_datetime(series, utc=True).astype("int64").to_numpy()
        return values.astype("<i8").tobytes()
    encoded = [str(v).encode("utf-8") for v in series.tolist()]
    lengths = np.fromiter((len(b) for b in encoded), dtype="<i8", count=len(encoded))
    return lengths.tobytes() + b"".join(encoded)


def _decode_column(blob: bytes, kind: str, n_rows: int):
    if kind == _KIND_FLOAT:
        return np.frombuffer(blob, dtype="<f8").copy()
    if kind == _KIND_INT:
        return np.frombuffer(blob, dtype="<i8").copy()
    if kind == _KIND_TIMESTAMP:
        ns = np.frombuffer(blob, dtype="<i8")
        return pd.to_datetime(ns, utc=True, unit="ns")
    lengths = np.frombuffer(blob[: 8 * n_rows], dtype="<i8")
    out = []
    pos = 8 * n_rows
    for length in lengths:
        out.append(blob[pos : pos + length].decode("utf-8"))
        pos += int(length)
    return pd.array(out, dtype=object)


def save_cache(path, df: pd.DataFrame) -> None:
    """Serialize a table to the columnar cache format.

    Layout: magic, version byte, 4-byte little-endian header length, JSON
    header (column names, kinds, row count, per-column byte lengths), then
    raw column payloads in header order.  Bytes are a pure function of the
    frame's contents.
    """
    kinds = {name: _column_kind(df[name]) for name in df.columns}
    payloads = [_encode_column(df[name], kinds[name]) for name in df.columns]
    header = {
        "n_rows": int(len(df)),
        "columns": [
            {"name": name, "kind": kinds[name], "nbytes": len(payload)}
            for name, payload in zip(df.columns, payloads)
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        CACHE_MAGIC,
        struct.pack("<B", CACHE_VERSION),
        struct.pack("<I", len(header_bytes)),
        header_bytes,
    ]
    parts.extend(payloads)
    atomic_write_bytes(path, b"".join(parts))


def load_cache(path) -> pd.DataFrame:
    """Read a columnar cache file; wrong magic or version raises DataError."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DataError(f"{path}: not a recognized observation cache (bad magic)")
    pos = len(CACHE_MAGIC)
    (version,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if version != CACHE_VERSION:
        raise DataError(
            f"{path}: cache version {version} not supported (expected {CACHE_VERSION})"
        )
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
        pos += header_len
        data = {}
        for col in header["columns"]:
            payload = blob[pos : pos + col["nbytes"]]
            if len(payload) != col["nbytes"]:
                raise DataError(f"{path}: truncated cache payload for column {col['name']!r}")
            data[col["name"]] = _decode_column(payload, col["kind"], header["n_rows"])
            pos += col["nbytes"]
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt observation cache ({exc})") from exc
    return pd.DataFrame(data)
