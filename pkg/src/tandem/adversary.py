"""Executable malicious behaviours used by tests and the attack CLI.

Attacks only use public interfaces plus the secrets their role legitimately
holds: a cheating token obtainer submits malformed witness ciphertexts, a
ciphertext substitutor tampers with spend messages, a malicious share
server tries to register an out-of-range share, and the linkage auditor
scans transcripts for byte-level overlap between the authenticated and the
anonymous phases.  Randomness is seeded for reproducibility.
"""

from __future__ import annotations

import random
from itertools import combinations
from math import comb

from . import homenc
from .commitments import generate_aux_group
from .protocol import (
    TsGenSharesSession,
    TsObtainSession,
    TsRegisterSession,
    UserGenSharesSession,
    UserObtainSession,
    UserRegisterSession,
    register_user,
)
from .state import ProtocolAbort, TandemParams, UserAbort, setup
from .zkp import _prove_bits


class SeededRng:
    """random.Random behind the secrets-module surface the protocols use."""

    def __init__(self, seed):
        self._r = random.Random(seed)

    def randbelow(self, n: int) -> int:
        return self._r.randrange(n)

    def randbits(self, k: int) -> int:
        return self._r.getrandbits(k)


_AUX_CACHE: dict[int, object] = {}


def toy_params(k: int, rng=None, rate_limit: int = 1 << 20, epoch_len: int = 86400) -> TandemParams:
    if "aux" not in _AUX_CACHE:
        _AUX_CACHE["aux"] = generate_aux_group(512, 128, rng=rng or SeededRng(0xA0))
    aux = _AUX_CACHE["aux"]
    beta = homenc.min_beta(61, 16, max(k, 63))
    return TandemParams(
        group_name="toy61", ell=16, k=k, rate_limit=rate_limit, epoch_len=epoch_len,
        modulus_bits=max(2 * beta + 64, 384), beta=beta,
        aux_modulus=aux.modulus, aux_order=aux.order,
    )


def toy_env(k: int, seed=0, **kwargs):
    """Server state plus one registered honest user, on the toy backend.
    The server clock is pinned to the middle of the current epoch so runs
    cannot straddle an epoch boundary."""
    import time

    rng = SeededRng(seed)
    params = toy_params(k, rng=rng, **kwargs)
    pinned = (int(time.time()) // params.epoch_len) * params.epoch_len + params.epoch_len // 2
    state = setup(params, rng=rng, now_fn=lambda: float(pinned))
    user, rec = register_user(state, "user-0", "pass-0", rng=rng)
    return state, user, rec, rng


# ===========================================================================
# Cheating token obtainer (the cut-and-choose detection bound)
# ===========================================================================

class CheatingObtainSession(UserObtainSession):
    """Submits malformed witness ciphertexts at the chosen slot indices.

    A bad slot carries a fresh encryption unrelated to the server share, so
    no (mu, kappa) opening can satisfy the issuance check for it."""

    def __init__(self, *args, bad_slots=(), **kwargs):
        super().__init__(*args, **kwargs)
        self.bad_slots = set(bad_slots)

    def msg4(self, reply: dict) -> dict:
        body = super().msg4(reply)
        params, hpk = self.params, self.hpk
        w = hpk.ciphertext_bytes
        from .commitments import commit as ped_commit, ext_commit
        from .encoding import encode_fixed
        from .hashing import lv_cat
        from .protocol import hash_ciphertext

        for i in self.bad_slots:
            bogus = homenc.encrypt(hpk, self.rng.randbits(params.ell_mu), homenc.random_unit(hpk, self.rng))
            self.cts[i] = bogus
            self.etas[i] = hash_ciphertext(params, bogus, w)
            self.cbars[i] = ped_commit(self.ped_ci, [self.etas[i]], self.crs[i])
            self.dlts[i] = ext_commit(
                lv_cat(encode_fixed(self.mus[i], params.mu_bytes), encode_fixed(self.kappas[i], w)),
                self.xis[i],
            )
        body["Cs"] = [c.encode() for c in self.cbars]
        body["Deltas"] = list(self.dlts)
        return body


def _attempt_cheat(state, user, bad_slots, subset, rng) -> bool:
    """One full issuance attempt with a forced disclosure subset; True if the
    cheater walks away with a token."""
    sid = rng.randbits(128).to_bytes(16, "big")
    cheat = CheatingObtainSession(user, state.hpk, state.bs_keypair.pk, sid=sid,
                                  rng=rng, bad_slots=bad_slots)
    ts = TsObtainSession(state, sid=sid, rng=rng, forced_subset=sorted(subset))
    try:
        cheat.run(ts)
        return True
    except (ProtocolAbort, UserAbort, ValueError):
        return False
    finally:
        rec = state.users[user.user_id]
        rec.status = "active"  # reset the ban so the next trial is independent
        rec.issued.clear()


def run_cheating_obtain(k: int, bad_slots: int, trials: int | None = None,
                        exhaustive: bool = False, seed=0) -> dict:
    """Acceptance rate of a user submitting bad_slots malformed witnesses.

    Exhaustive mode plays every C(2k, k) disclosure subset through the real
    protocol.  Trial mode samples subsets with the server's own sampler and
    applies the same disclosure-hit predicate (a trial is accepted exactly
    when the sampled subset avoids every bad slot, which is what the full
    run establishes case by case in exhaustive mode).
    """
    if bad_slots > 2 * k:
        raise ValueError("cannot corrupt more than 2k slots")
    state, user, _, rng = toy_env(k, seed=seed)
    bad = set(range(bad_slots))
    result = {
        "attack": "cheating-obtain", "k": k, "bad_slots": bad_slots,
        "bound": 1.0 / comb(2 * k, k) if bad_slots == k else None,
    }
    if exhaustive:
        accepted = 0
        total = 0
        for subset in combinations(range(2 * k), k):
            total += 1
            accepted += _attempt_cheat(state, user, bad, subset, rng)
        result.update(mode="exhaustive", trials=total, accepted=accepted,
                      rate=accepted / total)
        return result
    trials = trials or 10000
    from .protocol import _sample_subset

    accepted = 0
    for _ in range(trials):
        subset = _sample_subset(2 * k, k, rng)
        if not bad.intersection(subset):
            accepted += 1
    result.update(mode="sampled", trials=trials, accepted=accepted, rate=accepted / trials)
    return result


# ===========================================================================
# Ciphertext substitution at spend time (Lemma 2 enforcement)
# ===========================================================================

class SubstitutingSpendSession(UserGenSharesSession):
    """Keeps the valid signature but swaps the share ciphertext c."""

    def msg2(self, reply: dict) -> dict:
        body = super().msg2(reply)
        hpk = self.hpk
        bogus = homenc.encrypt(hpk, self.rng.randbits(hpk.beta), homenc.random_unit(hpk, self.rng))
        body["c"] = bogus.value.to_bytes(hpk.ciphertext_bytes, "big")
        return body


def run_spend_substitution(k: int = 2, trials: int = 100, seed=0) -> dict:
    """The substituted ciphertext must trip either the disclosed-hash check
    inside the possession proof or the difference checks of Eq.-style
    verification; counts rejections."""
    state, user, _, rng = toy_env(k, seed=seed)
    rejected = 0
    for t in range(trials):
        sid = rng.randbits(128).to_bytes(16, "big")
        obtain = UserObtainSession(user, state.hpk, state.bs_keypair.pk, sid=sid, rng=rng)
        token = obtain.run(TsObtainSession(state, sid=sid, rng=rng))
        sid2 = rng.randbits(128).to_bytes(16, "big")
        spend = SubstitutingSpendSession(user, state.hpk, state.bs_keypair.pk, token,
                                         sid=sid2, rng=rng)
        ts = TsGenSharesSession(state, sid=sid2, rng=rng)
        try:
            spend.run(ts)
        except (ProtocolAbort, UserAbort):
            rejected += 1
    return {"attack": "spend-substitution", "k": k, "trials": trials,
            "rejected": rejected, "rate": rejected / trials}


# ===========================================================================
# Malicious server at registration (the modular-reduction attack)
# ===========================================================================

class MismatchedShareRegister(TsRegisterSession):
    """Registration server running the modular-reduction embedding: the
    commitment C and its range proof cover an in-range value x_s, but the
    ciphertext encrypts x_s + embed (>= p), which would let the server
    recognize this user's tokens at spend time via the wrap modulo the
    plaintext space.

    Because openable slots fail the difference checks under a mismatched
    ciphertext and fabricated slots fail openings, the server pre-commits to
    a guess of the disclosure subset: slots in the guess are openable,
    slots outside it are fabricated to pass only the difference checks.
    The user accepts exactly when the sampled subset equals the guess.
    """

    def __init__(self, state, guess, embed: int | None = None, sid: bytes = b"", rng=None):
        super().__init__(state, sid=sid, rng=rng)
        self.guess = set(guess)
        self.embed = state.params.p if embed is None else embed

    def step1(self, body):
        reply = super().step1(body)
        # re-encrypt a shifted share behind the honest commitment and proof
        state = self.state
        self.x_s_true = self.x_s           # committed + range-proven value
        self.x_s_enc_val = self.x_s + self.embed
        self.kappa0 = homenc.random_unit(state.hpk, self.rng)
        self.x_s_enc = homenc.encrypt(state.hpk, self.x_s_enc_val, self.kappa0)
        reply["xse"] = self.x_s_enc.value.to_bytes(state.hpk.ciphertext_bytes, "big")
        return reply

    def step2(self, body):
        reply = super().step2(body)
        state, params = self.state, self.state.params
        aux = state.aux
        w = state.hpk.ciphertext_bytes
        self.fab = {}
        for i in range(2 * params.k):
            if i in self.guess:
                continue  # honest openable slot already in place
            gamma = self.rng.randbits(params.ell_mu - 1)
            rho = self.rng.randbelow(aux.order)
            nu = homenc.random_unit(state.hpk, self.rng)
            self.cts[i] = homenc.add_ciphertexts(state.hpk, self.x_s_enc, homenc.encrypt(state.hpk, gamma, nu))
            self.cbars[i] = self.C * (aux.gen_g ** gamma) * (aux.gen_h ** rho)
            self.fab[i] = (gamma, rho, nu)
        reply["cs"] = [ct.value.to_bytes(w, "big") for ct in self.cts]
        reply["Cs"] = [cb.encode() for cb in self.cbars]
        return reply

    def step3(self, body):
        from .encoding import encode_fixed, encode_scalar

        reply = super().step3(body)
        state, params = self.state, self.state.params
        aux = state.aux
        w = state.hpk.ciphertext_bytes
        mu_w = params.mu_bytes
        opened = sorted(body["D"])
        unopened = [i for i in range(2 * params.k) if i not in set(opened)]
        open_msgs = []
        for i, msg in zip(opened, reply["open"]):
            if i in self.guess:
                open_msgs.append(msg)
            else:  # no valid opening exists for a fabricated slot
                open_msgs.append([bytes(mu_w), encode_fixed(1, w), encode_scalar(0, aux.order)])
        diff_msgs = []
        from gmpy2 import invert

        kappa0_inv = int(invert(self.kappa0, state.hpk.n))
        for i in unopened:
            if i in self.fab:
                gamma, rho, nu = self.fab[i]
                diff_msgs.append([encode_fixed(gamma, mu_w), encode_scalar(rho, aux.order), encode_fixed(nu, w)])
            else:
                # honest slot unopened: the ciphertext difference and the
                # commitment difference disagree by `embed`; send the
                # ciphertext-consistent one and fail the commitment check
                gamma = self.mus[i] - self.x_s_enc_val
                gamma = max(gamma, 0)
                rho = (self.rs[i] - self.r_c) % aux.order
                nu = self.kappas[i] * kappa0_inv % state.hpk.n
                diff_msgs.append([encode_fixed(gamma, mu_w), encode_scalar(rho, aux.order), encode_fixed(nu, w)])
        return {"open": open_msgs, "diff": diff_msgs}


def forge_range_proof(aux, stmt, C, x_s, r_c, bound, rng):
    """What a cheating server can actually produce for an out-of-range
    share: an honest representation proof (valid for any committed value)
    and bit proofs over truncations, which cannot satisfy both product
    checks."""
    from .commitments import aux_pedersen
    from .zkp import prove_representation

    rep = prove_representation(stmt, {"reg/xs": x_s % aux.order, "reg/r": r_c}, rng)
    params = aux_pedersen(aux)
    nbits = max((bound - 1).bit_length(), 1)
    v_lo = x_s % (1 << nbits)
    # the low part opens only if x_s happens to fit; the high side is garbage
    r_lo = r_c if v_lo == x_s else rng.randbelow(aux.order)
    c_hi = (params.bases[1] ** (bound - 1)) * C.inv()
    v_hi = (bound - 1 - x_s) % aux.order % (1 << nbits)
    lo = _forged_bits(params, C, v_lo, r_lo, nbits, "tandem/range/lo", rng, honest=v_lo == x_s)
    hi = _forged_bits(params, c_hi, v_hi, rng.randbelow(aux.order), nbits, "tandem/range/hi", rng, honest=False)
    return rep, {"mode": "exact", "lo": lo, "hi": hi}


def _forged_bits(params, C, v, r, nbits, domain, rng, honest: bool):
    if honest:
        return _prove_bits(params, C, v, r, nbits, domain, rng)
    # commit to the claimed bits with fresh randomness; the weighted product
    # cannot match C, so verification fails (binding holds the forger here)
    fake_c = (params.bases[0] ** r) * (params.bases[1] ** v)
    return _prove_bits(params, fake_c, v, r, nbits, domain, rng)


def run_malicious_ts_registration(offset: int, k: int = 2, seed=0,
                                  mode: str = "embed", state=None) -> dict:
    """One registration against a malicious server; returns the device's
    verdict.

    mode "embed" (offset >= 0): honest-looking commitment and range proof
    for an in-range share, but the ciphertext encrypts share + p + offset —
    the modular-reduction embedding.  Detection happens in the cut-and-choose
    steps, except with probability 1/C(2k,k) when the server guesses the
    disclosure subset.
    mode "oversized" (offset >= 0): the server actually uses x_s = p + offset
    and must forge the bitwise range proof, which the device rejects at step 1.
    offset < 0 runs an honest server (expected: accept).
    """
    rng = SeededRng(seed)
    if state is None:
        params = toy_params(k, rng=rng)
        state = setup(params, rng=rng)
    else:
        params = state.params
    honest = offset < 0
    if honest:
        ts = TsRegisterSession(state, rng=rng)
        intended = None
    elif mode == "embed":
        guess = _sample_guess(2 * k, k, rng)
        ts = MismatchedShareRegister(state, guess, embed=params.p + offset, rng=rng)
        intended = "x_s + p + offset"
    elif mode == "oversized":
        ts = TsRegisterSession(state, rng=rng, override_x_s=params.p + offset,
                               range_forger=forge_range_proof)
        intended = params.p + offset
    else:
        raise ValueError(f"unknown mode {mode!r}")
    u = UserRegisterSession(params, state.hpk, f"victim-{seed}-{rng.randbits(32)}", "pw", rng=rng)
    try:
        r1 = ts.step1(u.msg1())
        r2 = ts.step2(u.msg2(r1))
        r3 = ts.step3(u.msg3(r2))
        ts.step4(u.msg4(r3))
        verdict = "accept"
    except UserAbort as exc:
        verdict = f"reject: {exc}"
    except ProtocolAbort as exc:
        verdict = f"ts-abort: {exc.code}"
    return {"attack": "malicious-ts-registration", "offset": offset, "mode": mode,
            "intended_x_s": intended, "verdict": verdict,
            "rejected": verdict.startswith("reject")}


def _sample_guess(n: int, k: int, rng) -> list[int]:
    picked: set[int] = set()
    while len(picked) < k:
        picked.add(rng.randbelow(n))
    return sorted(picked)


def run_register_cut_and_choose_enumeration(k: int = 2, seed=0) -> dict:
    """Exhaustive Lemma-3 check: an embedding server that guessed subset G
    is accepted exactly when the device samples G; enumerate all subsets."""
    rng = SeededRng(seed)
    params = toy_params(k, rng=rng)
    state = setup(params, rng=rng)
    guess = list(range(k))
    accepted = 0
    total = 0
    for subset in combinations(range(2 * k), k):
        total += 1
        ts = MismatchedShareRegister(state, guess, rng=SeededRng(seed + total))
        u = _FixedSubsetRegister(params, state.hpk, f"u{total}", "pw",
                                 rng=SeededRng(seed + 10_000 + total), subset=sorted(subset))
        try:
            r1 = ts.step1(u.msg1())
            r2 = ts.step2(u.msg2(r1))
            r3 = ts.step3(u.msg3(r2))
            ts.step4(u.msg4(r3))
            accepted += 1
        except (UserAbort, ProtocolAbort):
            pass
        state.users.pop(f"u{total}", None)
    return {"attack": "register-cut-and-choose", "k": k, "trials": total,
            "accepted": accepted, "rate": accepted / total,
            "bound": 1.0 / comb(2 * k, k)}


class _FixedSubsetRegister(UserRegisterSession):
    def __init__(self, *args, subset, **kwargs):
        super().__init__(*args, **kwargs)
        self._forced_subset = subset

    def msg2(self, reply):
        body = super().msg2(reply)
        from .commitments import ext_commit
        from .protocol import _subset_bytes

        self.subset = list(self._forced_subset)
        body["delta"] = ext_commit(_subset_bytes(self.subset), self.theta)
        return body


# ===========================================================================
# Linkage auditor
# ===========================================================================

def collect_byte_leaves(obj, out: set | None = None) -> set:
    if out is None:
        out = set()
    if isinstance(obj, bytes):
        if len(obj) >= 8:
            out.add(obj)
    elif isinstance(obj, dict):
        for v in obj.values():
            collect_byte_leaves(v, out)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            collect_byte_leaves(v, out)
    return out


def audit_linkability(obtain_transcripts, spend_transcripts, whitelist=()) -> dict:
    """Byte-exact overlap between what the server stored while issuing and
    what the user sent while spending; public key material is whitelisted."""
    stored = set()
    for transcript in obtain_transcripts:
        for direction, _step, body in transcript:
            collect_byte_leaves(body, stored)
    sent = set()
    for transcript in spend_transcripts:
        for direction, _step, body in transcript:
            if direction == "send":
                collect_byte_leaves(body, sent)
    overlap = (stored & sent) - set(whitelist)
    return {
        "attack": "linkage-audit",
        "stored_values": len(stored),
        "spend_values": len(sent),
        "overlap": sorted(overlap),
        "clean": not overlap,
    }


def field_length_profile(transcript) -> list:
    """(step, field, length) triples for user-sent messages; fixed-width wire
    fields make this identical across users."""
    profile = []
    for direction, step, body in transcript:
        if direction != "send":
            continue
        for key in sorted(body):
            profile.append((step, key, _field_len(body[key])))
    return profile


def _field_len(value):
    if isinstance(value, bytes):
        return len(value)
    if isinstance(value, list):
        return tuple(_field_len(v) for v in value)
    if isinstance(value, dict):
        return tuple((k, _field_len(v)) for k, v in sorted(value.items()))
    if isinstance(value, int):
        return "int"
    return type(value).__name__


ATTACKS = {
    "cheating-obtain": run_cheating_obtain,
    "spend-substitution": run_spend_substitution,
    "malicious-ts": run_malicious_ts_registration,
    "register-enum": run_register_cut_and_choose_enumeration,
}
