"""Hash-to-scalar, transcript framing, and domain separation.

Every Fiat-Shamir input is framed as length-value concatenation so that two
semantically equal transcripts hash equal and no two distinct part lists
collide.  Domain tags are ASCII strings of the form "tandem/<protocol>/<step>".
"""

from __future__ import annotations

import hashlib


def _as_bytes(tag: bytes | str) -> bytes:
    return tag.encode("ascii") if isinstance(tag, str) else bytes(tag)


def lv_cat(*parts: bytes) -> bytes:
    """Length-value concatenation; injective on tuples of byte strings."""
    out = bytearray()
    for p in parts:
        out += len(p).to_bytes(4, "big")
        out += p
    return bytes(out)


def hash_to_scalar(tag: bytes | str, message: bytes, order: int) -> int:
    """Uniform-looking scalar in [0, order): SHAKE-256 expanded to
    ceil(log2 order) + 128 bits, reduced mod order (bias < 2^-128)."""
    nbytes = (order.bit_length() + 128 + 7) // 8
    digest = hashlib.shake_256(lv_cat(_as_bytes(tag), message)).digest(nbytes)
    return int.from_bytes(digest, "big") % order


def fs_challenge(tag: bytes | str, parts: list[bytes] | tuple[bytes, ...], order: int) -> int:
    """Fiat-Shamir challenge over canonical encodings in fixed order."""
    return hash_to_scalar(tag, lv_cat(*parts), order)


def hash_to_group(group, tag: bytes | str, message: bytes):
    """Element of G1 with unknown discrete log relative to the generator."""
    return group.hash_to_g1(lv_cat(_as_bytes(tag), message))


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
