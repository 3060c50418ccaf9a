"""Flat binary container for bits, symbol frames, fields and datasets.

Layout (all little-endian):

====================  ======================================================
bytes                 meaning
====================  ======================================================
``51 46 45 51``       magic ``QFEQ``
u8                    format version (currently 1)
u32                   section count
per section:          u8 name length, ASCII name, u8 dtype code,
                      u64 element count, raw element bytes
====================  ======================================================

Dtype codes: 0 = uint8, 1 = int64, 2 = float64, 3 = complex128.

Files are written atomically (temp file in the same directory, then rename).
A text sidecar with ``key=value`` lines usually accompanies each binary file
and carries human-readable metadata such as launch power, seeds and the
configuration hash.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"QFEQ"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.uint8): 0,
    np.dtype(np.int64): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.complex128): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_sections(path, sections: dict[str, np.ndarray]) -> None:
    """Write named 1-D arrays to ``path`` in the QFEQ container format."""
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(sections))]
    for name, arr in sections.items():
        arr = np.ascontiguousarray(arr).ravel()
        if arr.dtype not in _DTYPE_CODES:
            if np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(np.float64)
            elif np.issubdtype(arr.dtype, np.complexfloating):
                arr = arr.astype(np.complex128)
            elif np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype(np.int64)
            else:
                raise DataFormatError(f"unsupported dtype {arr.dtype} for section {name}")
        nb = name.encode("ascii")
        if len(nb) > 255:
            raise DataFormatError(f"section name too long: {name}")
        chunks.append(struct.pack("<B", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", _DTYPE_CODES[arr.dtype]))
        chunks.append(struct.pack("<Q", arr.size))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    _atomic_write(Path(path), b"".join(chunks))


def read_sections(path) -> dict[str, np.ndarray]:
    """Read a QFEQ container back into a name -> array dict."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise DataFormatError(f"{path}: unsupported version {raw[4]}")
    (count,) = struct.unpack_from("<I", raw, 5)
    off = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<B", raw, off)
            off += 1
            name = raw[off : off + nlen].decode("ascii")
            off += nlen
            code, = struct.unpack_from("<B", raw, off)
            off += 1
            (n,) = struct.unpack_from("<Q", raw, off)
            off += 8
        except struct.error as e:
            raise DataFormatError(f"{path}: truncated header: {e}") from e
        if code not in _CODE_DTYPES:
            raise DataFormatError(f"{path}: unknown dtype code {code}")
        dt = _CODE_DTYPES[code].newbyteorder("<")
        nbytes = n * dt.itemsize
        if off + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated payload in section {name}")
        out[name] = np.frombuffer(raw[off : off + nbytes], dtype=dt).astype(
            _CODE_DTYPES[code]
        )
        off += nbytes
    return out


def write_sidecar(path, entries: dict) -> None:
    """Write ``key=value`` metadata lines next to a binary artifact."""
    lines = [f"{k}={entries[k]}" for k in entries]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_sidecar(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: malformed sidecar line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
