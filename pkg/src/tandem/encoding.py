"""Canonical byte encodings for scalars and arbitrary-precision integers.

Group elements carry their own `encode()`; these helpers cover the two
integer flavours.  decode(encode(x)) == x everywhere, and decoders reject
anything encode cannot emit.
"""

from __future__ import annotations


class DecodeError(ValueError):
    pass


def scalar_width(order: int) -> int:
    return (order.bit_length() + 7) // 8


def encode_scalar(x: int, order: int) -> bytes:
    x = int(x) % order
    return x.to_bytes(scalar_width(order), "big")


def decode_scalar(data: bytes, order: int) -> int:
    if len(data) != scalar_width(order):
        raise DecodeError("scalar encoding has wrong width")
    x = int.from_bytes(data, "big")
    if x >= order:
        raise DecodeError("scalar out of range")
    return x


def encode_bigint(x: int) -> bytes:
    """4-byte big-endian length prefix + minimal big-endian magnitude."""
    x = int(x)
    if x < 0:
        raise ValueError("BigInt encoding is for non-negative integers")
    mag = b"" if x == 0 else x.to_bytes((x.bit_length() + 7) // 8, "big")
    return len(mag).to_bytes(4, "big") + mag


def decode_bigint(data: bytes) -> int:
    if len(data) < 4:
        raise DecodeError("truncated BigInt encoding")
    n = int.from_bytes(data[:4], "big")
    if len(data) != 4 + n:
        raise DecodeError("BigInt length prefix mismatch")
    mag = data[4:]
    if n and mag[0] == 0:
        raise DecodeError("non-minimal BigInt magnitude")
    return int.from_bytes(mag, "big")


def encode_fixed(x: int, width: int) -> bytes:
    """Fixed-width big-endian; wire form for ciphertexts and randomizers."""
    return int(x).to_bytes(width, "big")


def decode_fixed(data: bytes, width: int) -> int:
    if len(data) != width:
        raise DecodeError(f"expected {width}-byte field, got {len(data)}")
    return int.from_bytes(data, "big")
