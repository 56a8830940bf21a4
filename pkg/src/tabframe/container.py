"""Binary container files: a JSON header plus named little-endian arrays.

Layout::

    magic   4 bytes (``TFRM`` for frame caches, ``TFPM`` for parameters)
    version 1 byte
    hlen    u64 little-endian, byte length of the header
    header  UTF-8 JSON; carries a ``sections`` directory with byte offsets
    payload per section: u64 element count, then raw little-endian array data

All multi-byte integers are little-endian and lengths are 64-bit.  Headers
are serialized with sorted keys so identical content yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CorruptError, VersionMismatchError

VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def write_container(
    path: str | Path,
    magic: bytes,
    header: dict,
    arrays: dict[str, np.ndarray],
) -> None:
    """Write ``arrays`` (name -> float64/int64 ndarray) with ``header`` metadata."""
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    sections = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            tag = "<f8"
        elif arr.dtype == np.int64:
            tag = "<i8"
        else:
            raise ValueError(f"section {name!r} has unsupported dtype {arr.dtype}")
        data = arr.astype(_DTYPES[tag], copy=False).tobytes()
        sections.append(
            {
                "name": name,
                "dtype": tag,
                "shape": list(arr.shape),
                "offset": len(payload),
            }
        )
        payload += struct.pack("<Q", arr.size)
        payload += data
    doc = dict(header)
    doc["sections"] = sections
    hjson = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<Q", len(hjson)))
        fh.write(hjson)
        fh.write(bytes(payload))


def read_container(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; returns ``(header, arrays)``.

    Raises :class:`BadMagicError`, :class:`VersionMismatchError`, or
    :class:`CorruptError` naming the offending section.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 13:
        raise CorruptError("header", "file shorter than fixed preamble")
    if raw[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {raw[:4]!r}")
    version = raw[4]
    if version != VERSION:
        raise VersionMismatchError(f"unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 5)
    hstart = 13
    if hstart + hlen > len(raw):
        raise CorruptError("header", "declared header length exceeds file size")
    try:
        header = json.loads(raw[hstart: hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptError("header", str(exc)) from exc
    payload_start = hstart + hlen
    arrays: dict[str, np.ndarray] = {}
    for sec in header.get("sections", []):
        name = sec["name"]
        tag = sec["dtype"]
        if tag not in _DTYPES:
            raise CorruptError(name, f"unknown dtype {tag!r}")
        shape = tuple(sec["shape"])
        start = payload_start + sec["offset"]
        if start + 8 > len(raw):
            raise CorruptError(name, "section offset beyond file end")
        (count,) = struct.unpack_from("<Q", raw, start)
        expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count != expected:
            raise CorruptError(name, f"length prefix {count} != shape {shape}")
        nbytes = count * 8
        if start + 8 + nbytes > len(raw):
            raise CorruptError(name, "section data truncated")
        flat = np.frombuffer(raw, dtype=_DTYPES[tag], count=count, offset=start + 8)
        arrays[name] = flat.reshape(shape).astype(_DTYPES[tag].newbyteorder("="), copy=True)
    header.pop("sections", None)
    return header, arrays
