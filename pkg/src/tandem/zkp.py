"""Non-interactive sigma protocols (Fiat-Shamir compiled).

Three building blocks:

* Representation proofs over one or more groups: a `Statement` is a list of
  relations `target = prod(base_i ^ w_{slot_i})`, where witness slots may be
  shared between relations.  A slot used by relations over groups of a
  single order gets standard mod-order responses; a slot spanning orders
  gets integer responses with 128-bit statistical slack, which keeps
  cross-group equality sound.
* The bitwise range proof: per-bit commitments, 0/1 OR-proofs with split
  challenges, and a weighted-product consistency check.  The exact mode
  handles an arbitrary bound via the two-sided decomposition (v and
  bound-1-v both fit the bit width); the proxy mode proves a power-of-two
  bound directly.
* The discrete-log-inequality proof used for non-revocation: the prover
  publishes A = (g^sk / pk)^rho with a companion commitment R = g^rho h^tau
  and proves the multiplicative consistency in the same statement that binds
  sk; the verifier additionally checks A != identity.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field

from .encoding import encode_scalar, scalar_width
from .groups import multiexp
from .hashing import fs_challenge, hash_to_group, lv_cat

CHALLENGE_SLACK_BITS = 128


class ProofError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    base: object
    slot: str


@dataclass(frozen=True)
class Relation:
    tag: str
    target: object
    terms: tuple
    order: int
    identity: object


@dataclass
class Statement:
    domain_tag: str
    context: bytes
    relations: list = field(default_factory=list)
    scalar_order: int | None = None  # challenge space; defaults to the smallest relation order

    def add(self, tag: str, target, terms, order: int, identity) -> None:
        self.relations.append(
            Relation(tag=tag, target=target, terms=tuple(Term(b, s) for b, s in terms), order=order, identity=identity)
        )

    def slots(self) -> list[str]:
        seen: dict[str, None] = {}
        for rel in self.relations:
            for term in rel.terms:
                seen.setdefault(term.slot, None)
        return list(seen)

    def slot_orders(self) -> dict[str, set[int]]:
        orders: dict[str, set[int]] = {}
        for rel in self.relations:
            for term in rel.terms:
                orders.setdefault(term.slot, set()).add(rel.order)
        return orders

    def challenge_order(self) -> int:
        if not self.relations:
            raise ProofError("empty statement")
        smallest = min(rel.order for rel in self.relations)
        if self.scalar_order is not None:
            if self.scalar_order > smallest:
                raise ProofError("challenge space must not exceed any relation order")
            return self.scalar_order
        return smallest

    def _base_parts(self) -> list[bytes]:
        parts = [self.domain_tag.encode(), self.context]
        for rel in self.relations:
            parts.append(rel.tag.encode())
            parts.append(rel.target.encode())
            for term in rel.terms:
                parts.append(term.base.encode())
                parts.append(term.slot.encode())
        return parts

    def integer_response_bits(self) -> int:
        """Width of integer-mode responses: witness + challenge + slack."""
        wbits = max(rel.order.bit_length() for rel in self.relations)
        return wbits + self.challenge_order().bit_length() + CHALLENGE_SLACK_BITS


@dataclass
class Proof:
    commitments: list
    challenge: int
    responses: dict


def _slot_modes(statement: Statement) -> dict[str, int | None]:
    """order for mod-order slots, None for integer-mode (cross-group) slots."""
    return {
        slot: (next(iter(orders)) if len(orders) == 1 else None)
        for slot, orders in statement.slot_orders().items()
    }


def _relation_holds(rel: Relation, witnesses: dict) -> bool:
    val = multiexp(rel.identity, [(t.base, int(witnesses[t.slot]) % rel.order) for t in rel.terms])
    return val == rel.target


def _commitment(rel: Relation, values: dict) -> object:
    return multiexp(rel.identity, [(t.base, int(values[t.slot]) % rel.order) for t in rel.terms])


def _challenge(statement: Statement, commitments) -> int:
    parts = statement._base_parts() + [c.encode() for c in commitments]
    return fs_challenge(statement.domain_tag, parts, statement.challenge_order())


def prove_representation(statement: Statement, witnesses: dict, rng=secrets) -> Proof:
    for rel in statement.relations:
        for term in rel.terms:
            if term.slot not in witnesses:
                raise ProofError(f"missing witness for slot {term.slot!r}")
        if not _relation_holds(rel, witnesses):
            raise ProofError(f"witnesses do not satisfy relation {rel.tag!r}")
    modes = _slot_modes(statement)
    int_bits = statement.integer_response_bits()
    nonces = {}
    for slot, order in modes.items():
        if order is not None:
            nonces[slot] = rng.randbelow(order)
        else:
            nonces[slot] = rng.randbits(int_bits)
    commitments = [_commitment(rel, nonces) for rel in statement.relations]
    c = _challenge(statement, commitments)
    responses = {}
    for slot, order in modes.items():
        w = int(witnesses[slot])
        if order is not None:
            responses[slot] = (nonces[slot] + c * w) % order
        else:
            if w < 0:
                raise ProofError("integer-mode witnesses must be non-negative")
            responses[slot] = nonces[slot] + c * w
    return Proof(commitments=commitments, challenge=c, responses=responses)


def verify_transcript(statement: Statement, commitments, challenge: int, responses: dict) -> bool:
    """Algebraic sigma-protocol check; does not recompute the challenge."""
    if len(commitments) != len(statement.relations):
        return False
    for slot in statement.slots():
        if slot not in responses:
            return False
    for rel, comm in zip(statement.relations, commitments):
        pairs = [(rel.target.inv(), challenge % rel.order)]
        pairs += [(t.base, int(responses[t.slot]) % rel.order) for t in rel.terms]
        if multiexp(rel.identity, pairs) != comm:
            return False
    return True


def verify_representation(statement: Statement, proof: Proof) -> bool:
    try:
        if proof.challenge != _challenge(statement, proof.commitments):
            return False
        modes = _slot_modes(statement)
        limit = 1 << (statement.integer_response_bits() + 1)
        for slot, order in modes.items():
            resp = int(proof.responses.get(slot, -1))
            if order is not None:
                if not 0 <= resp < order:
                    return False
            elif not 0 <= resp < limit:
                return False
        return verify_transcript(statement, proof.commitments, proof.challenge, proof.responses)
    except (AttributeError, TypeError, KeyError):
        return False


def simulate(statement: Statement, challenge: int, rng=secrets):
    """Transcript with the challenge chosen first; passes verify_transcript."""
    modes = _slot_modes(statement)
    int_bits = statement.integer_response_bits()
    responses = {
        slot: (rng.randbelow(order) if order is not None else rng.randbits(int_bits))
        for slot, order in modes.items()
    }
    commitments = []
    for rel in statement.relations:
        pairs = [(rel.target.inv(), challenge % rel.order)]
        pairs += [(t.base, int(responses[t.slot]) % rel.order) for t in rel.terms]
        commitments.append(multiexp(rel.identity, pairs))
    return commitments, challenge, responses


def extract_witness(statement: Statement, challenge1: int, responses1: dict, challenge2: int, responses2: dict) -> dict:
    """Special-soundness extractor for two accepting transcripts that share
    commitments; works for mod-order slots of prime order."""
    from gmpy2 import invert

    out = {}
    for slot, order in _slot_modes(statement).items():
        if order is None:
            continue
        dc = (challenge1 - challenge2) % order
        if dc == 0:
            raise ProofError("challenges must differ")
        dr = (responses1[slot] - responses2[slot]) % order
        out[slot] = int(dr * invert(dc, order) % order)
    return out


# ---------------------------------------------------------------------------
# Proof wire form: canonical CBOR array [commitments…, challenge, responses…]

def proof_to_wire(statement: Statement, proof: Proof) -> list:
    modes = _slot_modes(statement)
    int_width = (statement.integer_response_bits() + 1 + 7) // 8
    items: list[bytes] = [c.encode() for c in proof.commitments]
    items.append(encode_scalar(proof.challenge, statement.challenge_order()))
    for slot in statement.slots():
        order = modes[slot]
        if order is not None:
            items.append(encode_scalar(proof.responses[slot], order))
        else:
            items.append(int(proof.responses[slot]).to_bytes(int_width, "big"))
    return items


def proof_from_wire(statement: Statement, items: list, decoders: list) -> Proof:
    """decoders: one callable per relation turning bytes into a group element."""
    nrel = len(statement.relations)
    slots = statement.slots()
    if not isinstance(items, list) or len(items) != nrel + 1 + len(slots):
        raise ProofError("malformed proof encoding")
    if not all(isinstance(b, bytes) for b in items):
        raise ProofError("malformed proof encoding")
    commitments = [dec(raw) for dec, raw in zip(decoders, items[:nrel])]
    challenge = int.from_bytes(items[nrel], "big")
    if challenge >= statement.challenge_order() or len(items[nrel]) != scalar_width(statement.challenge_order()):
        raise ProofError("malformed challenge")
    modes = _slot_modes(statement)
    int_width = (statement.integer_response_bits() + 1 + 7) // 8
    responses = {}
    for slot, raw in zip(slots, items[nrel + 1 :]):
        order = modes[slot]
        if order is not None:
            if len(raw) != scalar_width(order):
                raise ProofError("malformed response width")
        elif len(raw) != int_width:
            raise ProofError("malformed response width")
        responses[slot] = int.from_bytes(raw, "big")
    return Proof(commitments=commitments, challenge=challenge, responses=responses)


# ---------------------------------------------------------------------------
# Bitwise range proof over a two-base Pedersen commitment

_OR_CHAL_BYTES = 16


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _bits_hash(domain: str, parts: list[bytes]) -> bytes:
    return hashlib.sha256(lv_cat(domain.encode(), *parts)).digest()[:_OR_CHAL_BYTES]


def _prove_bits(params, C, v: int, r: int, nbits: int, domain: str, rng):
    """v in [0, 2^nbits) for C = h0^r g0^v; bit commitments multiply back to C."""
    h0, g0 = params.bases[0], params.bases[1]
    order = params.order
    bits = [(v >> j) & 1 for j in range(nbits)]
    rand = [0] * nbits
    acc = 0
    for j in range(1, nbits):
        rand[j] = rng.randbelow(order)
        acc = (acc + (rand[j] << j)) % order
    rand[0] = (r - acc) % order
    cs = [multiexp(params.identity, [(h0, rand[j]), (g0, bits[j])]) for j in range(nbits)]

    branch_data = []
    transcript = [C.encode()] + [c.encode() for c in cs]
    for j in range(nbits):
        t_real = rng.randbelow(order)
        c_sim = rng.randbits(8 * _OR_CHAL_BYTES).to_bytes(_OR_CHAL_BYTES, "big")
        z_sim = rng.randbelow(order)
        u_real = h0 ** t_real
        # branch targets: T0 = C_j (bit 0), T1 = C_j * g0^-1 (bit 1)
        t_other = cs[j] * g0.inv() if bits[j] == 0 else cs[j]
        u_sim = (t_other ** (-int.from_bytes(c_sim, "big"))) * (h0 ** z_sim)
        if bits[j] == 0:
            u0, u1 = u_real, u_sim
        else:
            u0, u1 = u_sim, u_real
        branch_data.append((t_real, c_sim, z_sim))
        transcript += [u0.encode(), u1.encode()]
    c_global = _bits_hash(domain, transcript)
    out_bits = []
    for j in range(nbits):
        t_real, c_sim, z_sim = branch_data[j]
        c_real = _xor(c_global, c_sim)
        z_real = (t_real + int.from_bytes(c_real, "big") * rand[j]) % order
        if bits[j] == 0:
            c0, z0, c1, z1 = c_real, z_real, c_sim, z_sim
        else:
            c0, z0, c1, z1 = c_sim, z_sim, c_real, z_real
        out_bits.append((cs[j].encode(), c0, z0.to_bytes(scalar_width(order), "big"), c1, z1.to_bytes(scalar_width(order), "big")))
    return out_bits


def _verify_bits(params, C, nbits: int, out_bits, domain: str, decode) -> bool:
    if len(out_bits) != nbits:
        return False
    h0, g0 = params.bases[0], params.bases[1]
    order = params.order
    sw = scalar_width(order)
    cs = []
    transcript = [C.encode()]
    entries = []
    try:
        for item in out_bits:
            cj_raw, c0, z0_raw, c1, z1_raw = item
            if len(c0) != _OR_CHAL_BYTES or len(c1) != _OR_CHAL_BYTES:
                return False
            if len(z0_raw) != sw or len(z1_raw) != sw:
                return False
            cj = decode(cj_raw)
            cs.append(cj)
            entries.append((cj, c0, int.from_bytes(z0_raw, "big"), c1, int.from_bytes(z1_raw, "big")))
            transcript.append(cj_raw)
    except (ValueError, TypeError):
        return False
    us = []
    for cj, c0, z0, c1, z1 in entries:
        if z0 >= order or z1 >= order:
            return False
        u0 = (cj ** (-int.from_bytes(c0, "big"))) * (h0 ** z0)
        t1 = cj * g0.inv()
        u1 = (t1 ** (-int.from_bytes(c1, "big"))) * (h0 ** z1)
        us += [u0.encode(), u1.encode()]
    c_global = _bits_hash(domain, transcript + us)
    for _, c0, _, c1, _ in entries:
        if _xor(c0, c1) != c_global:
            return False
    combined = params.identity
    for j, cj in enumerate(cs):
        combined = combined * (cj ** (1 << j))
    return combined == C


def prove_range_bits(params, C, v: int, r: int, bound: int, rng=secrets, mode: str = "exact") -> dict:
    """Proof that the value committed in C lies in [0, bound).

    mode "exact": two bitwise proofs (v and bound-1-v), any bound.
    mode "proxy": one bitwise proof; bound must be a power of two.
    """
    v, r, bound = int(v), int(r) % params.order, int(bound)
    if not 0 <= v < bound:
        raise ProofError("value outside the claimed range")
    if 4 * bound >= params.order:
        raise ProofError("range bound too close to the commitment group order")
    from .commitments import verify_opening

    if not verify_opening(params, C, [v], r):
        raise ProofError("commitment does not open to the claimed value")
    if mode == "proxy":
        if bound & (bound - 1):
            raise ProofError("proxy mode needs a power-of-two bound")
        nbits = bound.bit_length() - 1
        return {
            "mode": "proxy",
            "lo": _prove_bits(params, C, v, r, nbits, "tandem/range/proxy", rng),
        }
    if mode != "exact":
        raise ProofError(f"unknown range-proof mode {mode!r}")
    nbits = max((bound - 1).bit_length(), 1)
    g0 = params.bases[1]
    c_hi = (g0 ** (bound - 1)) * C.inv()
    return {
        "mode": "exact",
        "lo": _prove_bits(params, C, v, r, nbits, "tandem/range/lo", rng),
        "hi": _prove_bits(params, c_hi, bound - 1 - v, (-r) % params.order, nbits, "tandem/range/hi", rng),
    }


def verify_range_bits(params, C, bound: int, proof: dict, decode) -> bool:
    bound = int(bound)
    if 4 * bound >= params.order:
        return False
    try:
        mode = proof["mode"]
        if mode == "proxy":
            if bound & (bound - 1):
                return False
            nbits = bound.bit_length() - 1
            return _verify_bits(params, C, nbits, proof["lo"], "tandem/range/proxy", decode)
        if mode != "exact":
            return False
        nbits = max((bound - 1).bit_length(), 1)
        g0 = params.bases[1]
        c_hi = (g0 ** (bound - 1)) * C.inv()
        return _verify_bits(params, C, nbits, proof["lo"], "tandem/range/lo", decode) and _verify_bits(
            params, c_hi, nbits, proof["hi"], "tandem/range/hi", decode
        )
    except (KeyError, TypeError, ValueError):
        return False


# ---------------------------------------------------------------------------
# Discrete-log inequality (non-revocation building block)

def inequality_commitments(group, sk: int, blocked_keys, rng=secrets):
    """Per blocked key: A = (g^sk/pk)^rho and R = g^rho h0^tau, plus the
    extra witnesses tying them to the sk slot."""
    g = group.g
    h0 = hash_to_group(group, "tandem/ineq/base", b"")
    publics = []
    extra = {}
    gsk = g ** sk
    for i, pk in enumerate(blocked_keys):
        if gsk == pk:
            raise ProofError("secret key matches a blocked public key")
        rho = group.random_nonzero_scalar(rng)
        tau = group.random_scalar(rng)
        a_el = (gsk * pk.inv()) ** rho
        r_el = (g ** rho) * (h0 ** tau)
        publics.append((a_el, r_el))
        extra[f"ineq/rho/{i}"] = rho
        extra[f"ineq/tau/{i}"] = tau
        extra[f"ineq/alpha/{i}"] = sk * rho % group.order
        extra[f"ineq/beta/{i}"] = sk * tau % group.order
    return publics, extra


def add_inequality_relations(statement: Statement, group, sk_slot: str, blocked_keys, publics) -> None:
    g = group.g
    h0 = hash_to_group(group, "tandem/ineq/base", b"")
    ident = group.identity_g1()
    for i, (pk, (a_el, r_el)) in enumerate(zip(blocked_keys, publics)):
        statement.add(
            f"ineq/R/{i}", r_el,
            [(g, f"ineq/rho/{i}"), (h0, f"ineq/tau/{i}")],
            group.order, ident,
        )
        statement.add(
            f"ineq/A/{i}", a_el,
            [(g, f"ineq/alpha/{i}"), (pk.inv(), f"ineq/rho/{i}")],
            group.order, ident,
        )
        statement.add(
            f"ineq/link/{i}", ident,
            [(r_el, sk_slot), (g.inv(), f"ineq/alpha/{i}"), (h0.inv(), f"ineq/beta/{i}")],
            group.order, ident,
        )


def verify_inequality_publics(group, publics) -> bool:
    return all(not a_el.is_identity() for a_el, _ in publics)


def prove_dlog_inequality(group, pk_blocked, sk: int, context: bytes = b"", rng=secrets):
    """Standalone PK{ sk : g^sk != pk_blocked } (single blocked key)."""
    publics, extra = inequality_commitments(group, sk, [pk_blocked], rng)
    statement = Statement(domain_tag="tandem/ineq/v1", context=context)
    add_inequality_relations(statement, group, "ineq/sk", [pk_blocked], publics)
    witnesses = dict(extra)
    witnesses["ineq/sk"] = sk
    proof = prove_representation(statement, witnesses, rng)
    return publics, proof


def verify_dlog_inequality(group, pk_blocked, publics, proof: Proof, context: bytes = b"") -> bool:
    if len(publics) != 1 or not verify_inequality_publics(group, publics):
        return False
    statement = Statement(domain_tag="tandem/ineq/v1", context=context)
    add_inequality_relations(statement, group, "ineq/sk", [pk_blocked], publics)
    return verify_representation(statement, proof)
