"""Chunked activation streams and named-tensor files.

The binary layout is one JSON header line per record followed by the raw
row-major payload, repeated until end of file. Headers carry dtype and
shape, so files are self-describing and byte-stable for fixed inputs. A
plain CSV fallback (one row per line, blank line between chunks) exists for
eyeballing small streams. All writes go through a temp file and a rename so
readers never observe partial output.
"""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class StreamFormatError(Exception):
    """Malformed stream or tensor file; message carries file context."""


@contextlib.contextmanager
def atomic_write(path, mode: str = "wb"):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _header(kind: str, index, array: np.ndarray) -> bytes:
    meta = {kind: index, "dtype": array.dtype.str, "shape": list(array.shape)}
    return (json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n").encode()


def _read_records(path, kind: str):
    path = Path(path)
    with open(path, "rb") as fh:
        index = 0
        while True:
            line = fh.readline()
            if not line:
                return
            try:
                meta = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(
                    f"{path}: record {index}: bad header line: {exc}"
                ) from None
            for key in (kind, "dtype", "shape"):
                if key not in meta:
                    raise StreamFormatError(
                        f"{path}: record {index}: header missing {key!r}"
                    )
            shape = tuple(meta["shape"])
            dtype = np.dtype(meta["dtype"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise StreamFormatError(
                    f"{path}: record {index}: truncated payload "
                    f"(wanted {nbytes} bytes, got {len(payload)})"
                )
            yield meta[kind], np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
            index += 1


def write_stream(path, chunks, fmt: str | None = None) -> None:
    """Write a sequence of arrays; fmt "binary"/"csv", default by suffix."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "binary"
    if fmt == "csv":
        _write_csv_stream(path, chunks)
        return
    if fmt != "binary":
        raise ValueError(f"unknown stream format {fmt!r}")
    with atomic_write(path) as fh:
        for i, chunk in enumerate(chunks):
            arr = np.ascontiguousarray(chunk)
            fh.write(_header("chunk", i, arr))
            fh.write(arr.tobytes())


def _write_csv_stream(path, chunks) -> None:
    with atomic_write(path, "w") as fh:
        for i, chunk in enumerate(chunks):
            arr = np.atleast_2d(np.asarray(chunk))
            if arr.ndim != 2:
                raise ValueError("csv streams hold 1-d or 2-d chunks only")
            if i:
                fh.write("\n")
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_csv_stream(path) -> list[np.ndarray]:
    chunks, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line.startswith("#"):
                continue
            if not line:
                if rows:
                    chunks.append(np.array(rows))
                    rows = []
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise StreamFormatError(
                    f"{path}: line {lineno}: not a comma-separated number row"
                ) from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise StreamFormatError(
                    f"{path}: line {lineno}: ragged row "
                    f"(got {len(rows[-1])} values, chunk has {len(rows[0])})"
                )
    if rows:
        chunks.append(np.array(rows))
    if not chunks:
        raise StreamFormatError(f"{path}: no data rows")
    return chunks


def read_stream(path) -> list[np.ndarray]:
    """Read a chunked stream, sniffing binary versus CSV from the content."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            first = fh.read(1)
    except OSError as exc:
        raise StreamFormatError(f"{path}: {exc.strerror}") from None
    if first != b"{":
        return _read_csv_stream(path)
    chunks = []
    for i, (index, arr) in enumerate(_read_records(path, "chunk")):
        if index != i:
            raise StreamFormatError(f"{path}: chunk {i} labelled {index}")
        chunks.append(arr)
    if not chunks:
        raise StreamFormatError(f"{path}: empty stream")
    return chunks


def write_tensors(path, tensors: dict) -> None:
    """Write named arrays (weights and the like) in the header+payload layout."""
    with atomic_write(path) as fh:
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value)
            fh.write(_header("tensor", name, arr))
            fh.write(arr.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    out = {}
    for name, arr in _read_records(Path(path), "tensor"):
        out[str(name)] = arr
    return out
