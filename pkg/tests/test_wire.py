import struct

import pytest

from pgasrt import wire
from pgasrt.errors import BadFrame


def test_header_layout_is_bit_exact():
    # Layout written out by hand: magic u32 LE, kind u8, handler u16,
    # source u32, sequence u64, payload_len u64.
    frame = wire.encode(wire.KIND_REQUEST, 0x0010, 2, 7, b"hello")
    expected = (
        bytes.fromhex("f0414750")      # 0x504741F0 little-endian
        + bytes([0x00])                # REQUEST
        + bytes.fromhex("1000")        # handler 16
        + bytes.fromhex("02000000")    # source rank 2
        + bytes.fromhex("0700000000000000")
        + bytes.fromhex("0500000000000000")
        + b"hello"
    )
    assert frame == expected
    assert wire.HEADER_SIZE == 27


def test_roundtrip():
    frame = wire.encode(wire.KIND_REPLY, 13, 3, 99, b"\x00\xff" * 10)
    kind, hid, src, seq, payload = wire.decode(frame)
    assert (kind, hid, src, seq) == (wire.KIND_REPLY, 13, 3, 99)
    assert payload == b"\x00\xff" * 10


def test_reply_carries_request_token():
    # A reply is framed with the original requester's (rank, sequence).
    frame = wire.encode(wire.KIND_REPLY, 11, 0, 12345, b"")
    _, _, src, seq, _ = wire.decode(frame)
    assert (src, seq) == (0, 12345)


def test_bad_magic_rejected():
    frame = bytearray(wire.encode(wire.KIND_REQUEST, 16, 0, 1, b""))
    frame[0] ^= 0xFF
    with pytest.raises(BadFrame):
        wire.decode_header(bytes(frame))


def test_bad_kind_rejected():
    frame = struct.pack("<IBHIQQ", wire.MAGIC, 9, 16, 0, 1, 0)
    with pytest.raises(BadFrame):
        wire.decode_header(frame)


def test_truncated_header_rejected():
    with pytest.raises(BadFrame):
        wire.decode_header(b"\xf0AGP")


def test_length_mismatch_rejected():
    frame = wire.encode(wire.KIND_REQUEST, 16, 0, 1, b"abc")
    with pytest.raises(BadFrame):
        wire.decode(frame + b"extra")
