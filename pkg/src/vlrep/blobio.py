"""Versioned binary tensor blobs and plain-text key=value records.

One blob layout serves checkpoints, dataset clips, and demonstration files:

    magic (8 bytes) | version (u32 LE) | meta_len (u64 LE) | meta JSON (utf-8)
    | n_tensors (u32 LE) | tensors...

    tensor: name_len (u16 LE) | name (utf-8) | dtype code (u8)
          | ndim (u8) | dims (i64 LE each) | raw little-endian values

Readers validate the magic and version up front and report the byte offset
of any truncation or garbage.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class BlobFormatError(ValueError):
    """Corrupt or truncated blob; the message names the failing offset."""


class BlobVersionError(ValueError):
    """Blob has an unsupported format version."""


_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("uint8"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_blob(
    path: str | Path,
    magic: bytes,
    version: int,
    meta: dict,
    tensors: dict[str, np.ndarray],
) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", version))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            arr = arr.astype(dt, copy=False)
            if arr.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    buf = f.read(n)
    if len(buf) != n:
        raise BlobFormatError(f"truncated blob: expected {n} bytes for {what} at offset {offset}")
    return buf


def read_blob(
    path: str | Path,
    magic: bytes,
    expect_version: int | None = None,
) -> tuple[int, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        got = _read_exact(f, 8, "magic")
        if got != magic:
            raise BlobFormatError(f"bad magic at offset 0: {got!r} (expected {magic!r})")
        version = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if expect_version is not None and version != expect_version:
            raise BlobVersionError(
                f"unsupported format version {version} (expected {expect_version})"
            )
        meta_len = struct.unpack("<Q", _read_exact(f, 8, "meta length"))[0]
        try:
            meta = json.loads(_read_exact(f, meta_len, "meta").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise BlobFormatError(f"bad meta JSON at offset 20: {e}") from None
        n_tensors = struct.unpack("<I", _read_exact(f, 4, "tensor count"))[0]
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            name_len = struct.unpack("<H", _read_exact(f, 2, "tensor name length"))[0]
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, "tensor header"))
            if code not in _CODE_DTYPES:
                raise BlobFormatError(f"unknown dtype code {code} at offset {f.tell() - 2}")
            dims = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim, "tensor dims"))
            if any(d < 0 for d in dims):
                raise BlobFormatError(f"negative dimension in {name!r} at offset {f.tell()}")
            dtype = _CODE_DTYPES[code]
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(f, count * dtype.itemsize, f"tensor {name!r} data")
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        return version, meta, tensors


# -- plain-text key=value records ----------------------------------------------


def write_kv(path: str | Path, record: dict) -> None:
    """One ``key=value`` pair per line; values are stringified."""
    lines = [f"{k}={_to_str(v)}\n" for k, v in record.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_kv(path: str | Path) -> dict[str, str]:
    record: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        record[key.strip()] = value.strip()
    return record


def _to_str(v) -> str:
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)
