"""Binary container shared by datasets and checkpoints.

Layout::

    magic (4 bytes) | header length (u32 LE) | header (UTF-8 JSON)
    record* where record = payload length (u32 LE) | payload

Payloads hold little-endian IEEE-754 floats / integers whose layout is
described by the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "ContainerError",
    "SchemaVersionError",
    "TruncatedFileError",
    "ShapeMismatchError",
    "write_container",
    "read_container",
]


class ContainerError(ValueError):
    pass


class SchemaVersionError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass


def write_container(path, magic: bytes, header: dict, body: bytes) -> None:
    header = {"schema_version": SCHEMA_VERSION, **header}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(body)


def read_container(path, magic: bytes) -> tuple[dict, memoryview]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise TruncatedFileError(f"{path}: file too short for a header")
    if data[:4] != magic:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable header") from exc
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema_version {version!r} not supported (expected {SCHEMA_VERSION})")
    return header, memoryview(data)[8 + hlen:]
