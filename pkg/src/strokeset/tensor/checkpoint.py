"""Versioned binary container for named float64 arrays.

Layout (all integers little-endian u32)::

    magic      8 bytes  b"STRKSET\\x00"
    version    u32
    kind       u32 length + UTF-8 text    (what the container holds)
    meta       u32 length + UTF-8 text    (flat key=value lines, config echo)
    count      u32
    entries    count x (u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
                        little-endian f64 payload, row-major)
"""
import io
import struct

import numpy as np

MAGIC = b"STRKSET\x00"
VERSION = 1


class FormatError(ValueError):
    """File is not a container of the expected kind or version."""


def _put_text(buf, text):
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _get_text(buf):
    (n,) = struct.unpack("<I", _read(buf, 4))
    return _read(buf, n).decode("utf-8")


def _read(buf, n):
    raw = buf.read(n)
    if len(raw) != n:
        raise FormatError("truncated container")
    return raw


def encode_meta(meta):
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise ValueError(f"meta entry {key!r} cannot be stored as key=value")
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def decode_meta(text):
    meta = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    return meta


def dumps(arrays, kind, meta=None):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _put_text(buf, kind)
    _put_text(buf, encode_meta(meta or {}))
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")
        _put_text(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(raw, kind=None):
    """Return (arrays, meta, kind).  Raises FormatError on any mismatch."""
    buf = io.BytesIO(raw)
    if buf.read(8) != MAGIC:
        raise FormatError("not a strokeset container (bad magic)")
    (version,) = struct.unpack("<I", _read(buf, 4))
    if version != VERSION:
        raise FormatError(f"container version {version} unsupported (expected {VERSION})")
    found = _get_text(buf)
    if kind is not None and found != kind:
        raise FormatError(f"expected a {kind!r} container, found {found!r}")
    meta = decode_meta(_get_text(buf))
    (count,) = struct.unpack("<I", _read(buf, 4))
    arrays = {}
    for _ in range(count):
        name = _get_text(buf)
        (rank,) = struct.unpack("<I", _read(buf, 4))
        dims = struct.unpack(f"<{rank}I", _read(buf, 4 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(_read(buf, 8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if buf.read(1):
        raise FormatError("trailing bytes after last entry")
    return arrays, meta, found


def save(path, arrays, kind, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(arrays, kind, meta))


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
