"""Flat binary parameter container.

Layout (all integers little-endian)::

    magic      8 bytes   b"NSEPCKPT"
    version    uint32    1
    hlen       uint32    byte length of the header
    header     hlen      UTF-8 text, one ``key=value`` per line
    count      uint32    number of records
    record*    name_len uint16, name (UTF-8), ndim uint8,
               dims uint32 * ndim, data float64 * prod(dims)

Records keep insertion order, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"NSEPCKPT"
VERSION = 1


def encode_header(header: Mapping[str, str]) -> bytes:
    lines = []
    for k, v in header.items():
        v = str(v)
        if "\n" in v or "=" in k:
            raise ValueError(f"header entry {k!r} cannot contain newlines or '=' in key")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def decode_header(raw: bytes) -> dict[str, str]:
    out = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        out[k] = v
    return out


def save_arrays(path, arrays: Mapping[str, np.ndarray], header: Mapping[str, str] | None = None) -> Path:
    path = Path(path)
    hbytes = encode_header(header or {})
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def load_arrays(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", raw, 8)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        header = decode_header(raw[pos:pos + hlen])
        pos += hlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64)
            pos += 8 * n
            arrays[name] = data.reshape(dims)
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from None
    return header, arrays
