"""Blind signatures with attributes over the pairing group.

The signer holds sk with w = h^sk; messages (m_0 … m_{L-1}) are signed as
A = (g * B^s * prod B_i^{m_i})^(1/(e+sk)), sigma = (A, e, s).  Blind
issuance runs on a Pedersen commitment C = B^r * prod B_i^{m_i}: the signer
returns (A, e, s'') for A = (g * B^{s''} * C)^(1/(e+sk)) and the user sets
s = r + s'', so the signer sees neither the hidden attributes nor the final
s.  Possession is shown with the standard randomized-A proof (C_1 = A g2^r1,
C_2 = g1^r1 g2^r2) revealing exactly a chosen subset of attributes; the
verification equation is

    e(C_1, w) e(C_1, h)^e = e(g,h) e(B,h)^s prod e(B_i,h)^{m_i}
                            e(g2,w)^{r1} e(g2,h)^{e r1}.

Tokens add a uniformly random serial-number attribute that is always
disclosed at spend time, making each signature one-time-use.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

from .groups import multiexp
from .hashing import hash_to_group
from .zkp import Proof, ProofError, Statement, prove_representation, verify_representation


class BlindSigError(ValueError):
    pass


@dataclass(frozen=True)
class BlindSigPubKey:
    group: object
    w: object                  # h^sk in G2
    base_tag: str
    num_attributes: int
    base_b: object = field(compare=False)
    bases: tuple = field(compare=False)
    gen1: object = field(compare=False)
    gen2: object = field(compare=False)
    _gt_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def gt_base(self, name: str):
        cache = self._gt_cache
        if name not in cache:
            group = self.group
            if name == "g,h":
                cache[name] = group.pairing(group.g, group.h)
            elif name == "B,h":
                cache[name] = group.pairing(self.base_b, group.h)
            elif name == "g2,w":
                cache[name] = group.pairing(self.gen2, self.w)
            elif name == "g2,h":
                cache[name] = group.pairing(self.gen2, group.h)
            elif name.startswith("B"):
                i = int(name[1:].split(",")[0])
                cache[name] = group.pairing(self.bases[i], group.h)
            else:
                raise KeyError(name)
        return cache[name]

    def to_wire(self) -> dict:
        return {
            "w": self.w.encode(),
            "tag": self.base_tag,
            "n": self.num_attributes,
        }


@dataclass(frozen=True)
class BlindSigKeyPair:
    pk: BlindSigPubKey
    sk: int


@dataclass(frozen=True)
class BlindSignature:
    a_el: object
    e: int
    s: int


def _derive_bases(group, tag: str, num_attributes: int):
    base_b = hash_to_group(group, tag, b"B")
    bases = tuple(hash_to_group(group, tag, b"B%d" % i) for i in range(num_attributes))
    gen1 = hash_to_group(group, tag, b"g1")
    gen2 = hash_to_group(group, tag, b"g2")
    return base_b, bases, gen1, gen2


def pk_from_wire(group, data: dict) -> BlindSigPubKey:
    w = group.decode_g2(data["w"])
    tag = data["tag"]
    n = int(data["n"])
    if not isinstance(tag, str) or not 1 <= n <= 4096:
        raise BlindSigError("malformed public key")
    base_b, bases, gen1, gen2 = _derive_bases(group, tag, n)
    return BlindSigPubKey(group=group, w=w, base_tag=tag, num_attributes=n,
                          base_b=base_b, bases=bases, gen1=gen1, gen2=gen2)


def bs_keygen(group, num_attributes: int, tag: str = "tandem/bs/v1", rng=secrets) -> BlindSigKeyPair:
    if num_attributes < 1:
        raise BlindSigError("need at least one attribute")
    sk = group.random_nonzero_scalar(rng)
    base_b, bases, gen1, gen2 = _derive_bases(group, tag, num_attributes)
    pk = BlindSigPubKey(group=group, w=group.h ** sk, base_tag=tag, num_attributes=num_attributes,
                        base_b=base_b, bases=bases, gen1=gen1, gen2=gen2)
    return BlindSigKeyPair(pk=pk, sk=sk)


def commit_attributes(pk: BlindSigPubKey, attributes, r: int):
    if len(attributes) != pk.num_attributes:
        raise BlindSigError("attribute vector has wrong arity")
    order = pk.group.order
    pairs = [(pk.base_b, int(r) % order)]
    pairs += [(b, int(a) % order) for b, a in zip(pk.bases, attributes)]
    return multiexp(pk.group.identity_g1(), pairs)


def blind_sign_respond(keypair: BlindSigKeyPair, commitment, rng=secrets) -> tuple:
    """Signer side of BlindSign; the caller has already checked the
    representation proof for the commitment."""
    group = keypair.pk.group
    order = group.order
    while True:
        e = group.random_nonzero_scalar(rng)
        if (e + keypair.sk) % order:
            break
    s2 = group.random_scalar(rng)
    from gmpy2 import invert

    exp = int(invert((e + keypair.sk) % order, order))
    a_el = (group.g * (keypair.pk.base_b ** s2) * commitment) ** exp
    return a_el, e, s2


def unblind(pk: BlindSigPubKey, attributes, r: int, a_el, e: int, s2: int) -> BlindSignature:
    """Finalize the user side; raises if the signer's tuple is invalid."""
    sig = BlindSignature(a_el=a_el, e=int(e), s=(int(r) + int(s2)) % pk.group.order)
    if not bs_verify(pk, sig, attributes):
        raise BlindSigError("signer returned an invalid signature tuple")
    return sig


def _signed_base(pk: BlindSigPubKey, attributes, s: int):
    order = pk.group.order
    pairs = [(pk.base_b, int(s) % order)]
    pairs += [(b, int(a) % order) for b, a in zip(pk.bases, attributes)]
    return pk.group.g * multiexp(pk.group.identity_g1(), pairs)


def bs_verify(pk: BlindSigPubKey, sig: BlindSignature, attributes, r_tilde: int | None = None, c_tilde=None) -> bool:
    """Pairing check for sigma over the attribute vector; if a recommitment
    opening (c_tilde, r_tilde) is supplied it is checked too."""
    if len(attributes) != pk.num_attributes:
        return False
    group = pk.group
    if c_tilde is not None or r_tilde is not None:
        if c_tilde is None or r_tilde is None:
            return False
        if commit_attributes(pk, attributes, r_tilde) != c_tilde:
            return False
    lhs = group.pairing_product(
        [
            (sig.a_el, (group.h ** sig.e) * pk.w),
            (_signed_base(pk, attributes, sig.s).inv(), group.h),
        ]
    )
    return lhs == group.identity_gt()


def recommit(pk: BlindSigPubKey, attributes, rng=secrets) -> tuple:
    r_tilde = pk.group.random_scalar(rng)
    return commit_attributes(pk, attributes, r_tilde), r_tilde


# ---------------------------------------------------------------------------
# Possession proof with selective disclosure

@dataclass(frozen=True)
class ShowPublics:
    c1: object
    c2: object


def show_publics(pk: BlindSigPubKey, sig: BlindSignature, rng=secrets):
    """Randomized commitments and the witness dict for the possession proof."""
    group = pk.group
    order = group.order
    r1 = group.random_nonzero_scalar(rng)
    r2 = group.random_scalar(rng)
    publics = ShowPublics(
        c1=sig.a_el * (pk.gen2 ** r1),
        c2=(pk.gen1 ** r1) * (pk.gen2 ** r2),
    )
    witnesses = {
        "show/r1": r1,
        "show/r2": r2,
        "show/e": sig.e,
        "show/alpha1": sig.e * r1 % order,
        "show/alpha2": sig.e * r2 % order,
        "show/s": sig.s,
    }
    return publics, witnesses


def add_show_relations(statement: Statement, pk: BlindSigPubKey, publics: ShowPublics,
                       disclosed: dict, hidden_slot) -> None:
    """Relations proving possession of a signature on a vector whose
    disclosed positions equal `disclosed` and whose hidden position i is
    bound to witness slot hidden_slot(i)."""
    group = pk.group
    order = group.order
    ident1 = group.identity_g1()
    statement.add(
        "show/c2", publics.c2,
        [(pk.gen1, "show/r1"), (pk.gen2, "show/r2")],
        order, ident1,
    )
    statement.add(
        "show/c2e", ident1,
        [(publics.c2, "show/e"), (pk.gen1.inv(), "show/alpha1"), (pk.gen2.inv(), "show/alpha2")],
        order, ident1,
    )
    e_c1_w = group.pairing(publics.c1, pk.w)
    e_c1_h = group.pairing(publics.c1, group.h)
    disclosed_part = multiexp(
        group.identity_gt(),
        [(pk.gt_base(f"B{i},h").inv(), int(val) % order) for i, val in disclosed.items()],
    )
    target = e_c1_w * pk.gt_base("g,h").inv() * disclosed_part
    terms = [
        (e_c1_h.inv(), "show/e"),
        (pk.gt_base("B,h"), "show/s"),
        (pk.gt_base("g2,w"), "show/r1"),
        (pk.gt_base("g2,h"), "show/alpha1"),
    ]
    for i in range(pk.num_attributes):
        if i not in disclosed:
            terms.append((pk.gt_base(f"B{i},h"), hidden_slot(i)))
    statement.add("show/pair", target, terms, order, group.identity_gt())


def bs_show(pk: BlindSigPubKey, sig: BlindSignature, attributes, disclose_set, context: bytes = b"", rng=secrets):
    """Standalone possession proof revealing exactly the attributes in
    disclose_set (by index)."""
    if not bs_verify(pk, sig, attributes):
        raise ProofError("refusing to show an invalid signature")
    disclose_set = set(disclose_set)
    publics, witnesses = show_publics(pk, sig, rng)
    for i, a in enumerate(attributes):
        if i not in disclose_set:
            witnesses[f"attr/{i}"] = int(a) % pk.group.order
    disclosed = {i: int(attributes[i]) % pk.group.order for i in disclose_set}
    statement = Statement(domain_tag="tandem/bs/show/v1", context=context)
    add_show_relations(statement, pk, publics, disclosed, lambda i: f"attr/{i}")
    proof = prove_representation(statement, witnesses, rng)
    return publics, disclosed, proof


def bs_verify_show(pk: BlindSigPubKey, publics: ShowPublics, disclosed: dict, proof: Proof, context: bytes = b"") -> bool:
    if publics.c1.is_identity():
        return False
    statement = Statement(domain_tag="tandem/bs/show/v1", context=context)
    add_show_relations(statement, pk, publics, disclosed, lambda i: f"attr/{i}")
    return verify_representation(statement, proof)
