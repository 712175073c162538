"""Negative security paths beyond the per-module suites: stolen tokens
without the device key, foreign-server tokens, wholesale proof mutation,
and issuance-side secrecy of the token contents."""

import pytest

from tandem import protocol as pr
from tandem.adversary import SeededRng, collect_byte_leaves, toy_env, toy_params
from tandem.encoding import encode_scalar
from tandem.state import ProtocolAbort, UserAbort, setup
from tandem.zkp import ProofError


def _obtain(state, user, rng):
    sid = rng.randbits(128).to_bytes(16, "big")
    sess = pr.UserObtainSession(user, state.hpk, state.bs_keypair.pk, sid=sid, rng=rng)
    return sess.run(pr.TsObtainSession(state, sid=sid, rng=rng))


def test_stolen_token_without_device_key_unusable():
    """A token is only spendable together with sk_U: a thief who has the
    token bytes but a different key can neither prove honestly nor slip a
    doctored proof past the server."""
    state, user, rec, rng = toy_env(2, seed=301)
    token = _obtain(state, user, rng)
    real_sk = user.sk_u
    user.sk_u = (real_sk + 1) % state.params.p  # thief's key
    sid = rng.randbits(128).to_bytes(16, "big")
    sess = pr.UserGenSharesSession(user, state.hpk, state.bs_keypair.pk, token, sid=sid, rng=rng)
    ts = pr.TsGenSharesSession(state, sid=sid, rng=rng)
    with pytest.raises((ProofError, ProtocolAbort, UserAbort)):
        sess.run(ts)
    assert ts.shares is None
    user.sk_u = real_sk


def test_foreign_server_token_rejected():
    """A token issued by a different server (same parameters, different
    signing key) fails the possession proof."""
    state_a, user_a, _, rng = toy_env(2, seed=302)
    params = state_a.params
    state_b = setup(params, rng=SeededRng(303))
    token = _obtain(state_a, user_a, rng)
    sid = rng.randbits(128).to_bytes(16, "big")
    sess = pr.UserGenSharesSession(user_a, state_b.hpk, state_b.bs_keypair.pk, token,
                                   sid=sid, rng=rng)
    ts = pr.TsGenSharesSession(state_b, sid=sid, rng=rng)
    with pytest.raises((ProofError, ProtocolAbort, UserAbort, ValueError)):
        sess.run(ts)
    assert ts.shares is None


def test_spend_message_byte_flips_rejected():
    """Random single-byte corruption anywhere in the spend message is
    rejected (100 random positions over one honest message)."""
    state, user, rec, rng = toy_env(2, seed=304)
    token = _obtain(state, user, rng)
    sid = rng.randbits(128).to_bytes(16, "big")
    sess = pr.UserGenSharesSession(user, state.hpk, state.bs_keypair.pk, token, sid=sid, rng=rng)
    ts = pr.TsGenSharesSession(state, sid=sid, rng=rng)
    reply1 = ts.step1(sess.msg1())
    body = sess.msg2(reply1)

    flat = []  # (path, length) for every bytes leaf

    def walk(obj, path):
        if isinstance(obj, bytes):
            flat.append((path, len(obj)))
        elif isinstance(obj, list):
            for i, v in enumerate(obj):
                walk(v, path + [i])
        elif isinstance(obj, dict):
            for k2, v in obj.items():
                walk(v, path + [k2])

    walk(body, [])
    assert flat

    import copy

    rejected = 0
    for trial in range(100):
        mutated = copy.deepcopy(body)
        path, length = flat[rng.randbelow(len(flat))]
        byte_idx = rng.randbelow(length)
        node = mutated
        for step in path[:-1]:
            node = node[step]
        raw = bytearray(node[path[-1]])
        raw[byte_idx] ^= 1 + rng.randbelow(255)
        node[path[-1]] = bytes(raw)
        ts_trial = pr.TsGenSharesSession(state, sid=sid, rng=SeededRng(500 + trial))
        ts_trial.step1({})
        try:
            ts_trial.step2(mutated)
        except ProtocolAbort:
            rejected += 1
            continue
        # a flip inside the epoch integer or similar could only "succeed" by
        # reproducing the original message; anything accepted must decode to
        # the same serial and still satisfy every check, which single-byte
        # flips of canonical encodings cannot
        pytest.fail(f"mutation accepted at {path}[{byte_idx}]")
    assert rejected == 100


def test_issuance_transcript_hides_token_secrets():
    """The server-side obtain transcript contains neither the randomized
    ciphertext c, the unopened witness ciphertexts, delta, kappa, nor the
    serial number."""
    state, user, rec, rng = toy_env(2, seed=305)
    sid = rng.randbits(128).to_bytes(16, "big")
    sess = pr.UserObtainSession(user, state.hpk, state.bs_keypair.pk, sid=sid, rng=rng)
    ts = pr.TsObtainSession(state, sid=sid, rng=rng)
    token = sess.run(ts)
    stored = set()
    for _dir, _step, body in ts.transcript:
        collect_byte_leaves(body, stored)
    blob = b"".join(sorted(stored))
    w = state.hpk.ciphertext_bytes
    secrets_ = [token.c.value.to_bytes(w, "big"), token.delta.to_bytes(state.params.mu_bytes + 1, "big"),
                token.kappa.to_bytes(w, "big"), encode_scalar(token.serial, state.params.p)]
    for ct, mu, kappa in token.witnesses:
        secrets_ += [ct.value.to_bytes(w, "big"), mu.to_bytes(state.params.mu_bytes, "big"),
                     kappa.to_bytes(w, "big")]
    for item in secrets_:
        assert item not in stored
        assert item not in blob  # not even as a substring of stored values


def test_rate_limit_not_bypassed_by_parallel_sessions():
    """Interleaved obtain sessions cannot exceed the per-epoch limit: the
    counter is reserved at signing time under the state lock."""
    import dataclasses

    rng = SeededRng(306)
    params = dataclasses.replace(toy_params(2, rng=rng), rate_limit=2)
    state = setup(params, rng=rng)
    user, rec = pr.register_user(state, "para", "pw", rng=rng)

    sessions = []
    for i in range(4):
        sid = (400 + i).to_bytes(16, "big")
        u = pr.UserObtainSession(user, state.hpk, state.bs_keypair.pk, sid=sid, rng=rng)
        t = pr.TsObtainSession(state, sid=sid, rng=rng)
        r = t.step2(u.msg2(t.step1(u.msg1())))  # all pass the early rate check
        sessions.append((u, t, r))
    issued = 0
    for u, t, r in sessions:
        try:
            r = t.step3(u.msg3(r))
            r = t.step4(u.msg4(r))
            r = t.step5(u.msg5(r))
            r = t.step6(u.msg6(r))
            r = t.step7(u.msg7(r))  # reserves the counter
            r = t.step8(u.msg8(r))
            u.finish(r)
            issued += 1
        except ProtocolAbort as exc:
            assert exc.code == "E_RATE"
    assert issued == 2
