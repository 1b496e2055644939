"""Simplified GOOSE-like frame used on the simulated substation link.

This is a stand-in, not the IEC 61850 ASN.1/BER encoding. Wire layout, all
integers big-endian::

    offset  size  field
    0       3     magic  b"GS1"
    3       2     frame length (bytes following this field)
    5       2     app_id
    7       4     st_num     (bumped on every dataset state change)
    11      4     sq_num     (bumped on every transmission, reset on state change)
    15      8     timestamp  (ms since session start)
    23      2     payload length
    25      n     payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import ParseError

MAGIC = b"GS1"
_BODY = struct.Struct(">HIIQH")
_LEN = struct.Struct(">H")


@dataclass(frozen=True)
class GooseFrame:
    app_id: int
    st_num: int
    sq_num: int
    payload: bytes
    timestamp: int

    def __post_init__(self):
        if not 0 <= self.app_id <= 0xFFFF:
            raise ValueError("app_id is a 16-bit field")
        if not (0 <= self.st_num < 2**32 and 0 <= self.sq_num < 2**32):
            raise ValueError("st_num/sq_num are 32-bit counters")
        if len(self.payload) > 0xFFFF - _BODY.size:
            raise ValueError("payload too large")

    def encode(self) -> bytes:
        body = _BODY.pack(self.app_id, self.st_num, self.sq_num, self.timestamp, len(self.payload)) + self.payload
        return MAGIC + _LEN.pack(len(body)) + body

    @classmethod
    def decode(cls, data: bytes) -> "GooseFrame":
        if data[:3] != MAGIC:
            raise ParseError("bad frame magic")
        if len(data) < 5:
            raise ParseError("truncated frame header")
        (n,) = _LEN.unpack_from(data, 3)
        body = data[5:]
        if len(body) != n or n < _BODY.size:
            raise ParseError(f"frame length field says {n}, got {len(body)} bytes")
        app_id, st_num, sq_num, ts, plen = _BODY.unpack_from(body)
        payload = body[_BODY.size:]
        if len(payload) != plen:
            raise ParseError("payload length mismatch")
        return cls(app_id, st_num, sq_num, bytes(payload), ts)
