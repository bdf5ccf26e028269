"""Framed wire protocol for active messages.

Fixed little-endian layout, 27-byte header followed by the payload:

    magic        u32   0x504741F0
    kind         u8    0 = REQUEST, 1 = REPLY
    handler_id   u16
    source_rank  u32   token identity: the requester's rank
    sequence     u64   token identity: the requester's per-rank counter
    payload_len  u64
    payload      payload_len bytes

A REPLY carries the token of the REQUEST it answers, so its source_rank and
sequence identify the original requester, not the replying rank.
"""

from __future__ import annotations

import struct

from .errors import BadFrame

MAGIC = 0x504741F0
KIND_REQUEST = 0
KIND_REPLY = 1

_HEADER = struct.Struct("<IBHIQQ")
HEADER_SIZE = _HEADER.size  # 27

# Sanity cap when parsing a stream; protects against desynchronized framing.
MAX_SANE_PAYLOAD = 1 << 32


def encode_header(kind: int, handler_id: int, source_rank: int,
                  sequence: int, payload_len: int) -> bytes:
    return _HEADER.pack(MAGIC, kind, handler_id, source_rank, sequence, payload_len)


def encode(kind, handler_id, source_rank, sequence, payload) -> bytes:
    """One complete frame as a single bytes object."""
    return encode_header(kind, handler_id, source_rank, sequence, len(payload)) + bytes(payload)


def decode_header(buf) -> tuple[int, int, int, int, int]:
    """Parse a 27-byte header -> (kind, handler_id, source_rank, sequence, payload_len)."""
    if len(buf) < HEADER_SIZE:
        raise BadFrame(f"header truncated: {len(buf)} bytes")
    magic, kind, handler_id, source_rank, sequence, payload_len = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadFrame(f"bad magic 0x{magic:08X}")
    if kind not in (KIND_REQUEST, KIND_REPLY):
        raise BadFrame(f"bad kind {kind}")
    if payload_len > MAX_SANE_PAYLOAD:
        raise BadFrame(f"implausible payload length {payload_len}")
    return kind, handler_id, source_rank, sequence, payload_len


def decode(buf) -> tuple[int, int, int, int, bytes]:
    """Parse one complete frame -> (kind, handler_id, source_rank, sequence, payload)."""
    kind, handler_id, source_rank, sequence, payload_len = decode_header(buf)
    if len(buf) != HEADER_SIZE + payload_len:
        raise BadFrame(
            f"frame length {len(buf)} != header+payload {HEADER_SIZE + payload_len}")
    return kind, handler_id, source_rank, sequence, bytes(buf[HEADER_SIZE:])
