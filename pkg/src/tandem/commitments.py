"""Pedersen vector commitments and the hash-based extractable commitment.

Two commitment spaces are used: the pairing group G1 (token commitments)
and an auxiliary Schnorr group of large prime order q̄ > 2^beta, needed so
commitments can hold homomorphic plaintexts during registration.  Bases are
derived by hashing, so no party knows discrete-log relations between them.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from gmpy2 import mpz, is_prime, powmod

from .groups import multiexp
from .hashing import lv_cat, sha256

EXT_RANDOMIZER_BYTES = 32  # 2*ell bits


class CommitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Auxiliary Schnorr group

@dataclass(frozen=True)
class AuxGroupParams:
    modulus: int       # prime P̄
    order: int         # prime q̄ dividing P̄ - 1
    gen_g: "AuxElement" = None
    gen_h: "AuxElement" = None

    @property
    def element_bytes(self) -> int:
        return (self.modulus.bit_length() + 7) // 8

    def identity(self) -> "AuxElement":
        return AuxElement(1, self)

    def decode(self, data: bytes) -> "AuxElement":
        if len(data) != self.element_bytes:
            raise CommitError("aux element encoding has wrong width")
        v = int.from_bytes(data, "big")
        if not 0 < v < self.modulus:
            raise CommitError("aux element out of range")
        el = AuxElement(v, self)
        if powmod(v, self.order, self.modulus) != 1:
            raise CommitError("aux element outside prime-order subgroup")
        return el


class AuxElement:
    __slots__ = ("val", "params")

    def __init__(self, val: int, params: AuxGroupParams):
        self.val = int(val)
        self.params = params

    def __mul__(self, other):
        if not isinstance(other, AuxElement):
            return NotImplemented
        return AuxElement(self.val * other.val % self.params.modulus, self.params)

    def __pow__(self, k):
        k = int(k) % self.params.order
        return AuxElement(int(powmod(self.val, k, self.params.modulus)), self.params)

    def inv(self):
        return AuxElement(int(powmod(self.val, -1, self.params.modulus)), self.params)

    def is_identity(self):
        return self.val == 1

    def __eq__(self, other):
        if not isinstance(other, AuxElement):
            return NotImplemented
        return self.val == other.val and self.params.modulus == other.params.modulus

    def __hash__(self):
        return hash((self.val, self.params.modulus))

    def encode(self) -> bytes:
        return self.val.to_bytes(self.params.element_bytes, "big")

    def __repr__(self):
        return f"AuxElement({self.val % 100000}…)"


def aux_hash_to_group(params: AuxGroupParams, tag: str, message: bytes = b"") -> AuxElement:
    cofactor = (params.modulus - 1) // params.order
    ctr = 0
    while True:
        seed = lv_cat(tag.encode(), message, ctr.to_bytes(4, "big"))
        width = params.element_bytes + 16
        v = int.from_bytes(hashlib.shake_256(seed).digest(width), "big") % params.modulus
        el = int(powmod(v, cofactor, params.modulus))
        if el != 1 and v != 0:
            return AuxElement(el, params)
        ctr += 1


def generate_aux_group(modulus_bits: int, order_bits: int, rng=secrets) -> AuxGroupParams:
    """Fresh Schnorr group: prime modulus with a prime-order subgroup."""
    while True:
        q = (1 << (order_bits - 1)) | rng.randbits(order_bits - 2) << 1 | 1
        if is_prime(mpz(q), 64):
            break
    cof_bits = modulus_bits - order_bits
    while True:
        m = ((1 << (cof_bits - 1)) | rng.randbits(cof_bits - 1)) & ~1
        p = q * m + 1
        if p.bit_length() != modulus_bits:
            continue
        if is_prime(mpz(p), 64):
            break
    params = AuxGroupParams(modulus=int(p), order=int(q))
    g = aux_hash_to_group(params, "tandem/aux/base-g")
    h = aux_hash_to_group(params, "tandem/aux/base-h")
    return AuxGroupParams(modulus=int(p), order=int(q), gen_g=g, gen_h=h)


def aux_params_from_config(modulus: int, order: int) -> AuxGroupParams:
    if (modulus - 1) % order:
        raise CommitError("subgroup order does not divide modulus - 1")
    params = AuxGroupParams(modulus=modulus, order=order)
    g = aux_hash_to_group(params, "tandem/aux/base-g")
    h = aux_hash_to_group(params, "tandem/aux/base-h")
    return AuxGroupParams(modulus=modulus, order=order, gen_g=g, gen_h=h)


# ---------------------------------------------------------------------------
# Pedersen commitments, generic over the two groups

@dataclass(frozen=True)
class PedersenParams:
    bases: tuple          # (h0, g_1 … g_num_messages)
    order: int
    identity: object
    group_id: str

    @property
    def num_messages(self) -> int:
        return len(self.bases) - 1


def pedersen_setup(num_messages: int, group, domain_tag: str) -> PedersenParams:
    """num_messages + 1 independent bases derived deterministically from the tag."""
    if num_messages < 1:
        raise CommitError("need at least one message base")
    if isinstance(group, AuxGroupParams):
        bases = tuple(
            aux_hash_to_group(group, domain_tag, i.to_bytes(4, "big"))
            for i in range(num_messages + 1)
        )
        return PedersenParams(bases=bases, order=group.order, identity=group.identity(), group_id="aux")
    from .hashing import hash_to_group

    bases = tuple(
        hash_to_group(group, domain_tag, i.to_bytes(4, "big"))
        for i in range(num_messages + 1)
    )
    return PedersenParams(bases=bases, order=group.order, identity=group.identity_g1(), group_id="g1")


def aux_pedersen(aux: AuxGroupParams) -> PedersenParams:
    """The registration commitment C = ḡ^v h̄^r seen as one-message Pedersen."""
    return PedersenParams(bases=(aux.gen_h, aux.gen_g), order=aux.order,
                          identity=aux.identity(), group_id="aux")


def commit(params: PedersenParams, values, r: int):
    if len(values) != params.num_messages:
        raise CommitError(f"expected {params.num_messages} values, got {len(values)}")
    pairs = [(params.bases[0], int(r) % params.order)]
    pairs += [(b, int(v) % params.order) for b, v in zip(params.bases[1:], values)]
    return multiexp(params.identity, pairs)


def verify_opening(params: PedersenParams, commitment, values, r: int) -> bool:
    if len(values) != params.num_messages:
        return False
    return commit(params, values, r) == commitment


# ---------------------------------------------------------------------------
# Extractable commitment: digest of message and a 2*ell-bit randomizer

def ext_commit(message: bytes, r: bytes) -> bytes:
    if len(r) != EXT_RANDOMIZER_BYTES:
        raise CommitError("extractable-commitment randomizer must be 32 bytes")
    return sha256(lv_cat(b"tandem/extcommit/v1", message, r))


def ext_verify(digest: bytes, message: bytes, r: bytes) -> bool:
    if len(r) != EXT_RANDOMIZER_BYTES:
        return False
    return ext_commit(message, r) == digest


# Default deployment group: 2048-bit modulus, 416-bit prime order
# (order exceeds the 394-bit homomorphic plaintext space).  Generated once
# with generate_aux_group(2048, 416); regenerate per deployment if desired.
DEFAULT_AUX_MODULUS = 0x8BB4E8DEF7E8A8CA34C8123E75A1BC347596BCE6798DB38CE2B1516027ADD0C1C04AD44D9ACFA8D430297EF93DC340C0B8C5A5E0786D805CBD0DA877629BFFFE50F64D1E37CE697D2BD9170C5D6FAB788FC62E9134DA22780D2095607C6CCB0B897DC9D7A05A7CA33D847CE38398EE956865341D13C6B439E9C135AB7C7746A02AFB07091B5A2AD865AEA444B7D86CBB505BC963EDE54D41B71535A3B276EB00775EA74FCE9341EA0B582F6F1052584B55CFA98B4E24F2A41E5B3E972929C25C21DD3F990A29C8AD1DB38445B4A6569156D3DEA32067BE3CD233CC1B26711BC923AA6370A842A535D668603920CA08835F7A79EB65AFFA2F72BDB8FC3FF14775
DEFAULT_AUX_ORDER = 0xCA855C3C89761E0CAD2B65320311F3EE43C5EBED97D49AB43A82E7458B8809019ABE921EFD7AEB3532E8B35756531ACAA1AAA70D


def default_aux_group() -> AuxGroupParams:
    return aux_params_from_config(DEFAULT_AUX_MODULUS, DEFAULT_AUX_ORDER)
