"""Pairing-group abstraction.

Protocol code is generic over a `PairingGroup`, which bundles the prime
order p, generators g (G1) and h (G2), hashing to G1, canonical
encode/decode per group, and the pairing map.  Two backends ship:

* ``bls12_381`` — the deployment curve (381-bit field, 255-bit order).
* ``toy61`` — an insecure exponent-space bilinear map over a 61-bit prime,
  for fast protocol tests and desk-scale soundness extraction.  Elements of
  the toy groups are just exponents, so discrete logs are public; never use
  it outside a test build.

Group parameters are configuration: look backends up by name via `get_group`.
"""

from __future__ import annotations

import hashlib
import secrets

from . import bls12381 as _bls


class GroupError(ValueError):
    pass


def multiexp(identity, pairs):
    """Product of base**exp over (base, exp) pairs, interleaved 4-bit windows.

    Exponents must be non-negative; callers reduce mod the group order (or
    keep integer responses as-is).
    """
    pairs = [(b, int(e)) for b, e in pairs if int(e) != 0]
    if not pairs:
        return identity
    if len(pairs) == 1:
        return pairs[0][0] ** pairs[0][1]
    for _, e in pairs:
        if e < 0:
            raise ValueError("multiexp exponents must be non-negative")
    tables = []
    for b, _ in pairs:
        row = [identity, b]
        for _ in range(14):
            row.append(row[-1] * b)
        tables.append(row)
    nbits = max(e.bit_length() for _, e in pairs)
    nwin = (nbits + 3) // 4
    acc = identity
    for w in range(nwin - 1, -1, -1):
        if w != nwin - 1:
            acc = acc * acc
            acc = acc * acc
            acc = acc * acc
            acc = acc * acc
        for i, (_, e) in enumerate(pairs):
            nib = (e >> (4 * w)) & 0xF
            if nib:
                acc = acc * tables[i][nib]
    return acc


class PairingGroup:
    """Shared behaviour; backends override the abstract members."""

    name: str
    order: int

    @property
    def scalar_bytes(self) -> int:
        return (self.order.bit_length() + 7) // 8

    def random_scalar(self, rng=secrets) -> int:
        return rng.randbelow(self.order)

    def random_nonzero_scalar(self, rng=secrets) -> int:
        while True:
            s = rng.randbelow(self.order)
            if s:
                return s

    def pairing_product(self, pairs):
        acc = None
        for p, q in pairs:
            e = self.pairing(p, q)
            acc = e if acc is None else acc * e
        return acc if acc is not None else self.identity_gt()


class Bls12381Group(PairingGroup):
    name = "bls12_381"
    order = int(_bls.R)

    def __init__(self):
        self.g = _bls.G1_GEN
        self.h = _bls.G2_GEN
        self._gt_gen = None

    @property
    def gt(self):
        if self._gt_gen is None:
            self._gt_gen = _bls.pairing(self.g, self.h)
        return self._gt_gen

    def identity_g1(self):
        return _bls.G1Point.identity()

    def identity_g2(self):
        return _bls.G2Point.identity()

    def identity_gt(self):
        return _bls.GTElement.one()

    def pairing(self, p, q):
        return _bls.pairing(p, q)

    def pairing_product(self, pairs):
        return _bls.pairing_product(pairs)

    def hash_to_g1(self, data: bytes):
        return _bls.hash_to_g1(data)

    def decode_g1(self, data: bytes):
        try:
            return _bls.g1_decode(data)
        except ValueError as exc:
            raise GroupError(str(exc)) from None

    def decode_g2(self, data: bytes):
        try:
            return _bls.g2_decode(data)
        except ValueError as exc:
            raise GroupError(str(exc)) from None

    def decode_gt(self, data: bytes):
        try:
            return _bls.gt_decode(data)
        except ValueError as exc:
            raise GroupError(str(exc)) from None

    g1_bytes = 48
    g2_bytes = 96
    gt_bytes = 576


class _ToyElem:
    """Element of a toy group in exponent space: the value IS the dlog."""

    __slots__ = ("kind", "val", "order")

    def __init__(self, kind: str, val: int, order: int):
        self.kind = kind
        self.val = val % order
        self.order = order

    def __mul__(self, other):
        if not isinstance(other, _ToyElem) or other.kind != self.kind:
            return NotImplemented
        return _ToyElem(self.kind, self.val + other.val, self.order)

    def __pow__(self, k):
        return _ToyElem(self.kind, self.val * (int(k) % self.order), self.order)

    def inv(self):
        return _ToyElem(self.kind, -self.val, self.order)

    def is_identity(self):
        return self.val == 0

    def __eq__(self, other):
        if not isinstance(other, _ToyElem):
            return NotImplemented
        return self.kind == other.kind and self.val == other.val

    def __hash__(self):
        return hash((self.kind, self.val))

    def encode(self) -> bytes:
        return self.val.to_bytes(8, "big")

    def __repr__(self):
        return f"Toy{self.kind.upper()}({self.val})"


class ToyGroup(PairingGroup):
    """Bilinear map emulated in exponent space over a 61-bit prime order."""

    name = "toy61"
    order = 2305843009213693951  # 2^61 - 1 (prime)

    g1_bytes = 8
    g2_bytes = 8
    gt_bytes = 8

    def __init__(self):
        self.g = _ToyElem("g1", 1, self.order)
        self.h = _ToyElem("g2", 1, self.order)
        self.gt = _ToyElem("gt", 1, self.order)

    def identity_g1(self):
        return _ToyElem("g1", 0, self.order)

    def identity_g2(self):
        return _ToyElem("g2", 0, self.order)

    def identity_gt(self):
        return _ToyElem("gt", 0, self.order)

    def pairing(self, p, q):
        if p.kind != "g1" or q.kind != "g2":
            raise GroupError("pairing arguments must be (G1, G2)")
        return _ToyElem("gt", p.val * q.val % self.order, self.order)

    def hash_to_g1(self, data: bytes):
        v = 0
        ctr = 0
        while v == 0:
            v = int.from_bytes(
                hashlib.sha256(b"toy-g1" + data + ctr.to_bytes(4, "big")).digest(), "big"
            ) % self.order
            ctr += 1
        return _ToyElem("g1", v, self.order)

    def _decode(self, kind: str, data: bytes):
        if len(data) != 8:
            raise GroupError("toy element encoding must be 8 bytes")
        v = int.from_bytes(data, "big")
        if v >= self.order:
            raise GroupError("toy element out of range")
        return _ToyElem(kind, v, self.order)

    def decode_g1(self, data: bytes):
        return self._decode("g1", data)

    def decode_g2(self, data: bytes):
        return self._decode("g2", data)

    def decode_gt(self, data: bytes):
        return self._decode("gt", data)


_REGISTRY: dict[str, PairingGroup] = {}


def get_group(name: str) -> PairingGroup:
    if name not in _REGISTRY:
        if name == Bls12381Group.name:
            _REGISTRY[name] = Bls12381Group()
        elif name == ToyGroup.name:
            _REGISTRY[name] = ToyGroup()
        else:
            raise GroupError(f"unknown pairing group {name!r}")
    return _REGISTRY[name]
