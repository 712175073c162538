"""Threshold-cryptographic protocols run on fresh shares.

Each protocol splits the user's secret x = x̃_U + x̃_S (mod p) between the
device and the share server; the device mediates every flow, the server
never talks to the verifier/issuer.  Provided: threshold Schnorr
identification, threshold ElGamal decryption, threshold credential issuance
and showing (two-attribute credentials: the hidden key x and an
issuer-chosen attribute a_1), and the issuance-signaling signature.

All of these are linearly randomizable: replacing (x̃_U, x̃_S) by
(x̃_U - m, x̃_S + m) changes no outcome.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from gmpy2 import invert

from .blindsig import BlindSigPubKey, BlindSigKeyPair, bs_keygen
from .groups import multiexp
from .hashing import fs_challenge, lv_cat

SCHNORR_TAG = "tandem/tcp/schnorr/v1"
ISSUE_TAG = "tandem/tcp/bbs-issue/v1"
SHOW_TAG = "tandem/tcp/bbs-show/v1"
SIGNAL_TAG = "tandem/tcp/signal/v1"


# ===========================================================================
# Threshold Schnorr identification
# ===========================================================================

class SchnorrTs:
    """Server side: u_S = g^t_S, then r_S = t_S + c*x̃_S."""

    def __init__(self, group, x_tilde_s: int, rng=secrets):
        self.group = group
        self.x_tilde_s = x_tilde_s
        self.t_s = group.random_scalar(rng)

    def commitment(self):
        return self.group.g ** self.t_s

    def respond(self, c: int) -> int:
        return (self.t_s + c * self.x_tilde_s) % self.group.order


class SchnorrUser:
    def __init__(self, group, x_tilde_u: int, rng=secrets):
        self.group = group
        self.x_tilde_u = x_tilde_u
        self.t_u = group.random_scalar(rng)

    def commitment(self, u_s):
        self.u = u_s * (self.group.g ** self.t_u)
        return self.u

    def respond(self, c: int, r_s: int) -> int:
        r_u = (self.t_u + c * self.x_tilde_u) % self.group.order
        return (r_u + r_s) % self.group.order


class SchnorrSp:
    """Verifier: sends a random challenge, accepts iff u = g^r h^-c."""

    def __init__(self, group, h, rng=secrets):
        self.group = group
        self.h = h
        self.c = group.random_scalar(rng)

    def challenge(self, u) -> int:
        self.u = u
        return self.c

    def check(self, r: int) -> bool:
        return self.u == (self.group.g ** r) * (self.h ** (-self.c % self.group.order))


def run_threshold_schnorr(group, x_tilde_u: int, x_tilde_s: int, h, rng=secrets) -> bool:
    ts = SchnorrTs(group, x_tilde_s, rng)
    user = SchnorrUser(group, x_tilde_u, rng)
    sp = SchnorrSp(group, h, rng)
    u = user.commitment(ts.commitment())
    c = sp.challenge(u)
    return sp.check(user.respond(c, ts.respond(c)))


# ===========================================================================
# Threshold ElGamal decryption
# ===========================================================================

def elgamal_encrypt(group, h, message, rng=secrets):
    r = group.random_scalar(rng)
    return (group.g ** r, message * (h ** r))


def elgamal_ts_share(group, x_tilde_s: int, c1):
    """alpha = c1^(-x̃_S); the server never sees the message."""
    return c1 ** ((-x_tilde_s) % group.order)


def elgamal_user_decrypt(group, x_tilde_u: int, c1, c2, alpha):
    return c2 * alpha * (c1 ** ((-x_tilde_u) % group.order))


# ===========================================================================
# Threshold credential issuance (two attributes: hidden x, issuer's a_1)
# ===========================================================================

@dataclass(frozen=True)
class Credential:
    a_el: object
    e: int
    s: int
    a1: int


def issuer_keygen(group, rng=secrets) -> BlindSigKeyPair:
    return bs_keygen(group, 2, tag="tandem/issuer/v1", rng=rng)


def issue_context(pk: BlindSigPubKey, commitment) -> bytes:
    return lv_cat(commitment.encode(), pk.base_b.encode(), pk.bases[0].encode())


class BbsIssueTs:
    """Server half of the joint commitment proof (and B.3 signaling)."""

    def __init__(self, group, x_tilde_s: int, signal_sk: int | None = None, rng=secrets):
        self.group = group
        self.x_tilde_s = x_tilde_s
        self.signal_sk = signal_sk
        self.rng = rng

    def share_base(self, b0):
        """B0^x̃_S, needed by the user to assemble the commitment U."""
        return b0 ** self.x_tilde_s

    def respond(self, b0, ctx: bytes, nonce: bytes, u_partial):
        t_s = self.group.random_scalar(self.rng)
        u_full = u_partial * (b0 ** t_s)
        c = fs_challenge(ISSUE_TAG, [u_full.encode(), ctx, nonce], self.group.order)
        r_s = (t_s + c * self.x_tilde_s) % self.group.order
        signal = None
        if self.signal_sk is not None:
            signal = signal_sign(self.group, self.signal_sk, c)
        return u_full, r_s, signal


class BbsIssueUser:
    def __init__(self, pk: BlindSigPubKey, x_tilde_u: int, rng=secrets):
        self.pk = pk
        self.group = pk.group
        self.x_tilde_u = x_tilde_u
        self.rng = rng
        self.s_prime = self.group.random_scalar(rng)

    def commitment(self, v_s):
        """U = B^s' B0^x̃_U B0^x̃_S given the server's B0^x̃_S."""
        self.u_commit = (self.pk.base_b ** self.s_prime) * (self.pk.bases[0] ** self.x_tilde_u) * v_s
        return self.u_commit

    def proof_start(self, nonce: bytes):
        self.nonce = nonce
        self.t_u = self.group.random_scalar(self.rng)
        self.s_hat = self.group.random_scalar(self.rng)
        u_partial = (self.pk.base_b ** self.s_hat) * (self.pk.bases[0] ** self.t_u)
        return u_partial

    def proof_finish(self, u_full, r_s: int):
        order = self.group.order
        ctx = issue_context(self.pk, self.u_commit)
        c = fs_challenge(ISSUE_TAG, [u_full.encode(), ctx, self.nonce], order)
        s_resp = (self.s_hat + c * self.s_prime) % order
        r = ((self.t_u + c * self.x_tilde_u) % order + r_s) % order
        return c, s_resp, r

    def finalize(self, a_el, e: int, s2: int, a1: int) -> Credential:
        """Check the pairing equation via U (the user never holds x)."""
        group = self.group
        pk = self.pk
        base = group.g * (pk.base_b ** s2) * self.u_commit * (pk.bases[1] ** a1)
        ok = group.pairing_product(
            [(a_el, (group.h ** e) * pk.w), (base.inv(), group.h)]
        ) == group.identity_gt()
        if not ok:
            raise ValueError("issuer returned an invalid credential tuple")
        return Credential(a_el=a_el, e=e, s=(self.s_prime + s2) % group.order, a1=a1)


class BbsIssuer:
    def __init__(self, keypair: BlindSigKeyPair, a1: int, signal_pk=None, rng=secrets):
        self.keypair = keypair
        self.pk = keypair.pk
        self.group = keypair.pk.group
        self.a1 = a1
        self.signal_pk = signal_pk  # require issuance signaling when set
        self.rng = rng

    def nonce(self) -> bytes:
        return self.rng.randbits(128).to_bytes(16, "big")

    def issue(self, u_commit, nonce: bytes, c: int, s_resp: int, r: int, signal=None):
        group = self.group
        order = group.order
        ctx = issue_context(self.pk, u_commit)
        u_check = (u_commit ** ((-c) % order)) * (self.pk.base_b ** s_resp) * (self.pk.bases[0] ** r)
        if c != fs_challenge(ISSUE_TAG, [u_check.encode(), ctx, nonce], order):
            raise ValueError("commitment proof failed")
        if self.signal_pk is not None:
            if signal is None or not signal_verify(group, self.signal_pk, c, signal):
                raise ValueError("issuance signal missing or invalid")
        while True:
            e = group.random_nonzero_scalar(self.rng)
            if (e + self.keypair.sk) % order:
                break
        s2 = group.random_scalar(self.rng)
        exp = int(invert((e + self.keypair.sk) % order, order))
        a_el = (group.g * (self.pk.base_b ** s2) * u_commit * (self.pk.bases[1] ** self.a1)) ** exp
        return a_el, e, s2


def run_threshold_issue(group, x_tilde_u, x_tilde_s, issuer: BbsIssuer,
                        signal_sk: int | None = None, rng=secrets) -> Credential:
    ts = BbsIssueTs(group, x_tilde_s, signal_sk=signal_sk, rng=rng)
    user = BbsIssueUser(issuer.pk, x_tilde_u, rng=rng)
    u_commit = user.commitment(ts.share_base(issuer.pk.bases[0]))
    nonce = issuer.nonce()
    u_partial = user.proof_start(nonce)
    u_full, r_s, signal = ts.respond(issuer.pk.bases[0], issue_context(issuer.pk, u_commit), nonce, u_partial)
    c, s_resp, r = user.proof_finish(u_full, r_s)
    a_el, e, s2 = issuer.issue(u_commit, nonce, c, s_resp, r, signal=signal)
    return user.finalize(a_el, e, s2, issuer.a1)


# ===========================================================================
# Threshold credential showing
# ===========================================================================

def show_context(pk: BlindSigPubKey, c1, c2) -> bytes:
    parts = [pk.w.encode(), pk.base_b.encode(), pk.bases[0].encode(), pk.bases[1].encode(),
             pk.gen1.encode(), pk.gen2.encode(), c1.encode(), c2.encode()]
    return lv_cat(*parts)


class BbsShowTs:
    """Server contribution to the pairing conjunct of the showing proof."""

    def __init__(self, group, x_tilde_s: int, rng=secrets):
        self.group = group
        self.x_tilde_s = x_tilde_s
        self.rng = rng

    def respond(self, e_b0_h, ctx: bytes, nonce: bytes, e1, e2, e3_partial):
        t_s = self.group.random_scalar(self.rng)
        e3 = e3_partial * (e_b0_h ** t_s)
        c = fs_challenge(SHOW_TAG, [e1.encode(), e2.encode(), e3.encode(), ctx, nonce], self.group.order)
        r_s = (t_s + c * self.x_tilde_s) % self.group.order
        return e3, r_s


class BbsShowUser:
    def __init__(self, pk: BlindSigPubKey, cred: Credential, x_tilde_u: int, rng=secrets):
        self.pk = pk
        self.group = pk.group
        self.cred = cred
        self.x_tilde_u = x_tilde_u
        self.rng = rng

    def start(self, nonce: bytes):
        group, pk, cred = self.group, self.pk, self.cred
        order = group.order
        rng = self.rng
        self.nonce = nonce
        self.r1 = group.random_nonzero_scalar(rng)
        self.r2 = group.random_scalar(rng)
        self.alpha1 = cred.e * self.r1 % order
        self.alpha2 = cred.e * self.r2 % order
        self.c1 = cred.a_el * (pk.gen2 ** self.r1)
        self.c2 = (pk.gen1 ** self.r1) * (pk.gen2 ** self.r2)
        t = {name: group.random_scalar(rng) for name in ("r1", "r2", "e", "a1c", "a2c", "s", "x")}
        self.t = t
        self.e1 = (pk.gen1 ** t["r1"]) * (pk.gen2 ** t["r2"])
        self.e2 = (self.c2 ** t["e"]) * (pk.gen1 ** ((-t["a1c"]) % order)) * (pk.gen2 ** ((-t["a2c"]) % order))
        e_c1_h = group.pairing(self.c1, group.h)
        self.e_b0_h = pk.gt_base("B0,h")
        self.e3_partial = multiexp(
            group.identity_gt(),
            [
                (e_c1_h.inv(), t["e"]),
                (pk.gt_base("B,h"), t["s"]),
                (self.e_b0_h, t["x"]),
                (pk.gt_base("g2,w"), t["r1"]),
                (pk.gt_base("g2,h"), t["a1c"]),
            ],
        )
        return self.c1, self.c2, self.e1, self.e2, self.e3_partial, self.e_b0_h

    def ctx(self) -> bytes:
        return show_context(self.pk, self.c1, self.c2)

    def finish(self, e3, r_s: int):
        order = self.group.order
        c = fs_challenge(SHOW_TAG, [self.e1.encode(), self.e2.encode(), e3.encode(), self.ctx(), self.nonce], order)
        t, cred = self.t, self.cred
        responses = {
            "r1": (t["r1"] + c * self.r1) % order,
            "r2": (t["r2"] + c * self.r2) % order,
            "e": (t["e"] + c * cred.e) % order,
            "a1c": (t["a1c"] + c * self.alpha1) % order,
            "a2c": (t["a2c"] + c * self.alpha2) % order,
            "s": (t["s"] + c * cred.s) % order,
            "x": ((t["x"] + c * self.x_tilde_u) % order + r_s) % order,
        }
        return {
            "c1": self.c1, "c2": self.c2,
            "e1": self.e1, "e2": self.e2, "e3": e3,
            "c": c, "z": responses, "a1": cred.a1,
        }


def verify_show(pk: BlindSigPubKey, show: dict, nonce: bytes) -> bool:
    """Service-provider check of the three-conjunct showing proof."""
    group = pk.group
    order = group.order
    c1, c2, e1, e2, e3 = show["c1"], show["c2"], show["e1"], show["e2"], show["e3"]
    c, z, a1 = show["c"], show["z"], show["a1"]
    if c1.is_identity():
        return False
    ctx = show_context(pk, c1, c2)
    if c != fs_challenge(SHOW_TAG, [e1.encode(), e2.encode(), e3.encode(), ctx, nonce], order):
        return False
    neg_c = (-c) % order
    if e1 != (c2 ** neg_c) * (pk.gen1 ** z["r1"]) * (pk.gen2 ** z["r2"]):
        return False
    if e2 != (c2 ** z["e"]) * (pk.gen1 ** ((-z["a1c"]) % order)) * (pk.gen2 ** ((-z["a2c"]) % order)):
        return False
    target = group.pairing_product(
        [(c1, pk.w), ((group.g * (pk.bases[1] ** (a1 % order))).inv(), group.h)]
    )
    e_c1_h = group.pairing(c1, group.h)
    rhs = multiexp(
        group.identity_gt(),
        [
            (target.inv(), c),
            (e_c1_h.inv(), z["e"]),
            (pk.gt_base("B,h"), z["s"]),
            (pk.gt_base("B0,h"), z["x"]),
            (pk.gt_base("g2,w"), z["r1"]),
            (pk.gt_base("g2,h"), z["a1c"]),
        ],
    )
    return e3 == rhs


def run_threshold_show(group, x_tilde_u, x_tilde_s, pk: BlindSigPubKey,
                       cred: Credential, rng=secrets) -> bool:
    ts = BbsShowTs(group, x_tilde_s, rng=rng)
    user = BbsShowUser(pk, cred, x_tilde_u, rng=rng)
    nonce = rng.randbits(128).to_bytes(16, "big")
    c1, c2, e1, e2, e3_partial, e_b0_h = user.start(nonce)
    e3, r_s = ts.respond(e_b0_h, user.ctx(), nonce, e1, e2, e3_partial)
    show = user.finish(e3, r_s)
    return verify_show(pk, show, nonce)


# ===========================================================================
# Issuance signaling (ordinary Schnorr signature under a separate key)
# ===========================================================================

def signal_sign(group, sk: int, challenge: int, rng=secrets) -> tuple[bytes, bytes]:
    order = group.order
    t = group.random_scalar(rng)
    r_el = group.g ** t
    msg = int(challenge % order).to_bytes((order.bit_length() + 7) // 8, "big")
    c = fs_challenge(SIGNAL_TAG, [r_el.encode(), msg], order)
    z = (t + c * sk) % order
    return r_el.encode(), z.to_bytes((order.bit_length() + 7) // 8, "big")


def signal_verify(group, pk, challenge: int, signal) -> bool:
    try:
        r_bytes, z_bytes = signal
        r_el = group.decode_g1(r_bytes)
        z = int.from_bytes(z_bytes, "big")
    except Exception:
        return False
    order = group.order
    msg = int(challenge % order).to_bytes((order.bit_length() + 7) // 8, "big")
    c = fs_challenge(SIGNAL_TAG, [r_el.encode(), msg], order)
    return (group.g ** z) == r_el * (pk ** c)
