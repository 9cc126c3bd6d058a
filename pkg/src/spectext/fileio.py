"""Atomic file writing and small binary-format helpers.

Every file this package produces is written to a temporary file in the
destination directory and moved into place with os.replace, so readers
never observe partial output.
"""

import json
import os
import tempfile
import zlib


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str, obj) -> None:
    """Serialize with sorted keys so identical objects give identical bytes."""
    atomic_write_text(path, json.dumps(obj, sort_keys=True) + "\n")


def payload_checksum(data: bytes) -> int:
    """CRC32 of a binary payload, as an unsigned 32-bit value."""
    return zlib.crc32(data) & 0xFFFFFFFF
