"""MCCT binary tensor files and name->file manifests.

Layout: magic ``b"MCCT"``, u8 dtype code (0=f32, 1=f64), u8 rank, ``rank``
little-endian u64 extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MCCT"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
INDEX_NAME = "index.txt"


class TensorFileError(IOError):
    pass


def dumps(array) -> bytes:
    a = np.asarray(array)
    if a.dtype not in _CODES:
        a = a.astype(np.float64)
    code = _CODES[a.dtype]
    head = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def loads(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFileError(f"{source}: not an MCCT file")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise TensorFileError(f"{source}: unknown dtype code {code}")
    off = 6 + 8 * rank
    if len(buf) < off:
        raise TensorFileError(f"{source}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 6)
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != off + n * dt.itemsize:
        raise TensorFileError(f"{source}: payload size does not match extents {dims}")
    a = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(dims)
    return a.astype(dt.newbyteorder("="))


def save(path, array) -> None:
    path = Path(path)
    try:
        path.write_bytes(dumps(array))
    except OSError as e:
        raise TensorFileError(f"{path}: {e.strerror}") from e


def load(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise TensorFileError(f"{path}: {e.strerror}") from e
    return loads(buf, str(path))


def save_manifest(directory, arrays: dict[str, np.ndarray]) -> Path:
    """Write one MCCT file per array plus a tab-separated ``index.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(arrays):
        fname = name.replace("/", "__") + ".mcct"
        save(d / fname, arrays[name])
        lines.append(f"{name}\t{fname}\n")
    with open(d / INDEX_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    return d / INDEX_NAME


def load_manifest(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    idx = d / INDEX_NAME
    try:
        text = idx.read_text(encoding="utf-8")
    except OSError as e:
        raise TensorFileError(f"{idx}: {e.strerror}") from e
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, fname = line.split("\t")
        except ValueError:
            raise TensorFileError(f"{idx}:{lineno}: expected 'name<TAB>file'") from None
        out[name] = load(d / fname)
    return out
