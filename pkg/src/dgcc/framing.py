"""Framed binary file format shared by log segments, checkpoint sections,
and trace dumps: a 6-byte header (magic + format version), then frames of
u32 payload length, payload, u32 CRC-32 of the payload. A short or
corrupt tail frame marks the usable end of the file.
"""

from __future__ import annotations

import struct
import zlib
from typing import BinaryIO, Iterator

MAGIC = b"DGCC"
FORMAT_VERSION = 1
HEADER = MAGIC + struct.pack(">H", FORMAT_VERSION)
HEADER_SIZE = len(HEADER)


def write_header(f: BinaryIO) -> None:
    f.write(HEADER)


def check_header(f: BinaryIO) -> bool:
    return f.read(HEADER_SIZE) == HEADER


def frame(payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + payload + struct.pack(">I", zlib.crc32(payload))


def write_frame(f: BinaryIO, payload: bytes) -> None:
    f.write(frame(payload))


def iter_frames(f: BinaryIO) -> Iterator[tuple[int, bytes]]:
    """Yield (frame start offset, payload) until EOF or a torn frame.

    The caller decides whether a torn tail is an error; iteration just stops
    there. `f` must be positioned right after the header.
    """
    offset = f.tell()
    while True:
        head = f.read(4)
        if len(head) < 4:
            return
        (length,) = struct.unpack(">I", head)
        body = f.read(length + 4)
        if len(body) < length + 4:
            return
        payload, crc = body[:length], body[length:]
        if zlib.crc32(payload) != struct.unpack(">I", crc)[0]:
            return
        yield offset, payload
        offset += 8 + length
