"""The four token protocols: registration (with the cut-and-choose range
proof on the encrypted server share), token issuance, share generation, and
key blocking.

Each protocol is a pair of session classes (Ts*/User*) exchanging CBOR-able
dict bodies; the service layer moves those dicts over the wire, tests drive
them directly.  Server sessions raise ProtocolAbort on any failed check;
device sessions raise UserAbort.  All transcripts are recorded on the
session objects for the linkage audit.

Wire fields carry fixed-width encodings: ciphertexts and randomizer units
at the modulus width, plaintext randomizers at their domain width, scalars
at the group width.  Spend-side messages therefore have a constant
field-length profile.
"""

from __future__ import annotations

import secrets

from . import homenc
from .blindsig import (
    BlindSigPubKey,
    blind_sign_respond,
    commit_attributes,
    recommit,
    show_publics,
    add_show_relations,
    unblind,
)
from .commitments import (
    EXT_RANDOMIZER_BYTES,
    AuxGroupParams,
    AuxElement,
    aux_pedersen,
    commit,
    ext_commit,
    ext_verify,
    pedersen_setup,
    verify_opening,
)
from .cbor import encode as cbor_encode
from .encoding import decode_fixed, encode_fixed, encode_scalar, scalar_width
from .hashing import hash_to_scalar, lv_cat, sha256
from .state import (
    STATUS_BANNED,
    STATUS_BLOCKED,
    BlockedDetected,
    KeyShareToken,
    ProtocolAbort,
    TandemParams,
    TsState,
    UserAbort,
    UserRecord,
    UserState,
    epoch_index,
)
from .zkp import (
    ProofError,
    Statement,
    add_inequality_relations,
    inequality_commitments,
    proof_from_wire,
    proof_to_wire,
    prove_range_bits,
    prove_representation,
    verify_inequality_publics,
    verify_range_bits,
    verify_representation,
)

CI_COMMIT_TAG = "tandem/obtain/ci/v1"
HASH_CT_TAG = "tandem/hash-ciphertext/v1"


def hash_ciphertext(params: TandemParams, ct: homenc.HomCiphertext, width: int) -> int:
    return hash_to_scalar(HASH_CT_TAG, encode_fixed(ct.value, width), params.p)


def ci_commit_params(params: TandemParams):
    return pedersen_setup(1, params.group, CI_COMMIT_TAG)


def _decoder_for(identity, group, aux: AuxGroupParams | None = None):
    from .groups import _ToyElem

    if isinstance(identity, _ToyElem):
        return {"g1": group.decode_g1, "g2": group.decode_g2, "gt": group.decode_gt}[identity.kind]
    if isinstance(identity, AuxElement):
        if aux is None:
            raise ProofError("aux decoder unavailable")
        return aux.decode
    from .bls12381 import G1Point, G2Point, GTElement

    if isinstance(identity, G1Point):
        return group.decode_g1
    if isinstance(identity, G2Point):
        return group.decode_g2
    if isinstance(identity, GTElement):
        return group.decode_gt
    raise ProofError("no decoder for this element type")


def statement_decoders(statement: Statement, group, aux: AuxGroupParams | None = None):
    return [_decoder_for(rel.identity, group, aux) for rel in statement.relations]


def _subset_bytes(subset) -> bytes:
    return cbor_encode(sorted(int(i) for i in subset))


def _sample_subset(n: int, k: int, rng) -> list[int]:
    picked: set[int] = set()
    while len(picked) < k:
        picked.add(rng.randbelow(n))
    return sorted(picked)


class _Transcript:
    def __init__(self):
        self.transcript: list[tuple[str, str, dict]] = []

    def record(self, direction: str, step: str, body: dict) -> None:
        self.transcript.append((direction, step, body))


# ===========================================================================
# RegisterUser, including the encrypted-share range proof (cut and choose)
# ===========================================================================

REG_STMT_TAG = "tandem/register/share-commit/v1"


def _register_share_statement(aux: AuxGroupParams, C: AuxElement, context: bytes,
                              scalar_order: int | None = None) -> Statement:
    st = Statement(domain_tag=REG_STMT_TAG, context=context, scalar_order=scalar_order)
    st.add("share", C, [(aux.gen_h, "reg/r"), (aux.gen_g, "reg/xs")], aux.order, aux.identity())
    return st


class TsRegisterSession(_Transcript):
    """Server side; range-prover hooks are injectable for attack harnesses."""

    KIND = "register"

    def __init__(self, state: TsState, sid: bytes = b"", rng=secrets,
                 override_x_s: int | None = None, range_forger=None):
        super().__init__()
        self.state = state
        self.sid = sid
        self.rng = rng
        self.override_x_s = override_x_s
        self.range_forger = range_forger
        self._step = 0

    def step1(self, body: dict) -> dict:
        self.record("recv", "register.1", body)
        state, params = self.state, self.state.params
        user_id = body["user"]
        if not isinstance(user_id, str) or not 1 <= len(user_id) <= 128:
            raise ProtocolAbort("E_PROTO", "bad user id")
        if user_id in state.users:
            raise ProtocolAbort("E_EXISTS", "user id already registered")
        try:
            pk_u = params.group.decode_g1(body["pk_u"])
        except Exception:
            raise ProtocolAbort("E_PROTO", "malformed user public key") from None
        block_hash = body["block"]
        if not isinstance(block_hash, bytes) or len(block_hash) != 32:
            raise ProtocolAbort("E_PROTO", "malformed blocking credential hash")

        self.user_id, self.pk_u, self.block_hash = user_id, pk_u, block_hash
        x_s = self.rng.randbelow(params.p) if self.override_x_s is None else self.override_x_s
        self.x_s = x_s
        self.kappa0 = homenc.random_unit(state.hpk, self.rng)
        self.x_s_enc = homenc.encrypt(state.hpk, x_s, self.kappa0)
        aux = state.aux
        self.r_c = self.rng.randbelow(aux.order)
        self.C = (aux.gen_g ** x_s) * (aux.gen_h ** self.r_c)
        context = lv_cat(self.sid, self.C.encode())
        stmt = _register_share_statement(aux, self.C, context, scalar_order=params.p)
        if self.range_forger is None:
            rep = prove_representation(stmt, {"reg/xs": x_s % aux.order, "reg/r": self.r_c}, self.rng)
            range_proof = prove_range_bits(aux_pedersen(aux), self.C, x_s, self.r_c, params.p, self.rng)
        else:
            rep, range_proof = self.range_forger(aux, stmt, self.C, x_s, self.r_c, params.p, self.rng)
        self._step = 1
        reply = {
            "xse": encode_fixed(self.x_s_enc.value, state.hpk.ciphertext_bytes),
            "pkx": (params.group.g ** (x_s % params.p)).encode(),
            "C": self.C.encode(),
            "rep": proof_to_wire(stmt, rep),
            "range": _range_to_wire(range_proof),
        }
        self.record("send", "register.1r", reply)
        return reply

    def step2(self, body: dict) -> dict:
        self.record("recv", "register.2", body)
        if self._step != 1:
            raise ProtocolAbort("E_STEP", "out-of-order registration step")
        delta_commit = body["delta"]
        if not isinstance(delta_commit, bytes) or len(delta_commit) != 32:
            raise ProtocolAbort("E_PROTO", "malformed subset commitment")
        self.delta_commit = delta_commit
        state, params = self.state, self.state.params
        k2 = 2 * params.k
        aux = state.aux
        self.mus, self.kappas, self.rs = [], [], []
        self.cts, self.cbars = [], []
        for _ in range(k2):
            while True:
                mu = self.rng.randbits(params.ell_mu)
                if mu >= self.x_s:
                    break
            kap = homenc.random_unit(state.hpk, self.rng)
            r_i = self.rng.randbelow(aux.order)
            self.mus.append(mu)
            self.kappas.append(kap)
            self.rs.append(r_i)
            self.cts.append(homenc.encrypt(state.hpk, mu, kap))
            self.cbars.append((aux.gen_g ** mu) * (aux.gen_h ** r_i))
        self._step = 2
        w = state.hpk.ciphertext_bytes
        reply = {
            "cs": [encode_fixed(ct.value, w) for ct in self.cts],
            "Cs": [cb.encode() for cb in self.cbars],
        }
        self.record("send", "register.2r", reply)
        return reply

    def step3(self, body: dict) -> dict:
        self.record("recv", "register.3", body)
        if self._step != 2:
            raise ProtocolAbort("E_STEP", "out-of-order registration step")
        state, params = self.state, self.state.params
        k2 = 2 * params.k
        subset = body["D"]
        theta = body["theta"]
        if (not isinstance(subset, list) or len(set(subset)) != params.k
                or not all(isinstance(i, int) and 0 <= i < k2 for i in subset)):
            raise ProtocolAbort("E_PROTO", "malformed subset")
        if not isinstance(theta, bytes) or not ext_verify(self.delta_commit, _subset_bytes(subset), theta):
            raise ProtocolAbort("E_PROTO", "subset commitment does not open")
        opened = sorted(subset)
        unopened = [i for i in range(k2) if i not in set(opened)]
        aux = state.aux
        w = state.hpk.ciphertext_bytes
        mu_w = params.mu_bytes
        open_msgs = []
        for i in opened:
            open_msgs.append([
                encode_fixed(self.mus[i], mu_w),
                encode_fixed(self.kappas[i], w),
                encode_scalar(self.rs[i], aux.order),
            ])
        diff_msgs = []
        from gmpy2 import invert

        kappa0_inv = int(invert(self.kappa0, state.hpk.n))
        for i in unopened:
            gamma = self.mus[i] - self.x_s
            rho = (self.rs[i] - self.r_c) % aux.order
            nu = self.kappas[i] * kappa0_inv % state.hpk.n
            diff_msgs.append([
                encode_fixed(gamma, mu_w),
                encode_scalar(rho, aux.order),
                encode_fixed(nu, w),
            ])
        self._step = 3
        reply = {"open": open_msgs, "diff": diff_msgs}
        self.record("send", "register.3r", reply)
        return reply

    def step4(self, body: dict) -> dict:
        self.record("recv", "register.4", body)
        if self._step != 3:
            raise ProtocolAbort("E_STEP", "out-of-order registration step")
        if body.get("accept") is not True:
            raise ProtocolAbort("E_PROTO", "user did not accept registration")
        rec = UserRecord(
            user_id=self.user_id,
            x_s=self.x_s,
            x_s_enc=self.x_s_enc,
            pk_u=self.pk_u,
            block_hash=self.block_hash,
        )
        self.state.add_user(rec)
        self._step = 4
        reply = {"ok": True}
        self.record("send", "register.4r", reply)
        return reply

    def handle(self, step: int, body: dict) -> dict:
        return [self.step1, self.step2, self.step3, self.step4][step - 1](body)


def _range_to_wire(proof: dict) -> dict:
    out = {"mode": proof["mode"], "lo": [list(b) for b in proof["lo"]]}
    if "hi" in proof:
        out["hi"] = [list(b) for b in proof["hi"]]
    return out


def _range_from_wire(data: dict) -> dict:
    if not isinstance(data, dict) or data.get("mode") not in ("exact", "proxy"):
        raise UserAbort("malformed range proof")
    out = {"mode": data["mode"], "lo": [tuple(b) for b in data["lo"]]}
    if data["mode"] == "exact":
        out["hi"] = [tuple(b) for b in data["hi"]]
    return out


class UserRegisterSession(_Transcript):
    """Device side of RegisterUser; verifies the share range proof."""

    def __init__(self, params: TandemParams, hpk: homenc.HomEncPubKey, user_id: str,
                 blocking_passphrase: str, sid: bytes = b"", rng=secrets):
        super().__init__()
        self.params = params
        self.hpk = hpk
        self.aux = params.aux_group()
        self.user_id = user_id
        self.sid = sid
        self.rng = rng
        self.sk_u = params.group.random_nonzero_scalar(rng)
        self.x_u = rng.randbelow(params.p)
        self.block_hash = blocking_credential_hash(user_id, blocking_passphrase)

    def msg1(self) -> dict:
        body = {
            "user": self.user_id,
            "pk_u": (self.params.group.g ** self.sk_u).encode(),
            "block": self.block_hash,
        }
        self.record("send", "register.1", body)
        return body

    def msg2(self, reply: dict) -> dict:
        self.record("recv", "register.1r", reply)
        params, aux = self.params, self.aux
        w = self.hpk.ciphertext_bytes
        val = decode_fixed(reply["xse"], w)
        if not 0 < val < self.hpk.n:
            raise UserAbort("encrypted share out of range")
        self.x_s_enc = homenc.HomCiphertext(val)
        self.pk_xs = params.group.decode_g1(reply["pkx"])
        self.C = aux.decode(reply["C"])
        context = lv_cat(self.sid, self.C.encode())
        stmt = _register_share_statement(aux, self.C, context, scalar_order=params.p)
        try:
            rep = proof_from_wire(stmt, reply["rep"], statement_decoders(stmt, params.group, aux))
        except (ProofError, ValueError, TypeError, KeyError):
            raise UserAbort("malformed share-commitment proof") from None
        if not verify_representation(stmt, rep):
            raise UserAbort("share-commitment proof failed")
        if not verify_range_bits(aux_pedersen(aux), self.C, params.p, _range_from_wire(reply["range"]), aux.decode):
            raise UserAbort("share range proof failed")
        self.subset = _sample_subset(2 * params.k, params.k, self.rng)
        self.theta = self.rng.randbits(8 * EXT_RANDOMIZER_BYTES).to_bytes(EXT_RANDOMIZER_BYTES, "big")
        body = {"delta": ext_commit(_subset_bytes(self.subset), self.theta)}
        self.record("send", "register.2", body)
        return body

    def msg3(self, reply: dict) -> dict:
        self.record("recv", "register.2r", reply)
        params = self.params
        k2 = 2 * params.k
        w = self.hpk.ciphertext_bytes
        cs, cbars = reply["cs"], reply["Cs"]
        if len(cs) != k2 or len(cbars) != k2:
            raise UserAbort("wrong witness count")
        self.cts = [homenc.HomCiphertext(decode_fixed(b, w)) for b in cs]
        self.cbars = [self.aux.decode(b) for b in cbars]
        body = {"D": list(self.subset), "theta": self.theta}
        self.record("send", "register.3", body)
        return body

    def msg4(self, reply: dict) -> dict:
        self.record("recv", "register.3r", reply)
        params, aux, hpk = self.params, self.aux, self.hpk
        w = hpk.ciphertext_bytes
        mu_w = params.mu_bytes
        opened = sorted(self.subset)
        unopened = [i for i in range(2 * params.k) if i not in set(opened)]
        if len(reply["open"]) != len(opened) or len(reply["diff"]) != len(unopened):
            raise UserAbort("wrong opening count")
        mu_limit = 1 << params.ell_mu
        for i, msg in zip(opened, reply["open"]):
            mu = decode_fixed(msg[0], mu_w)
            kap = decode_fixed(msg[1], w)
            r_i = int.from_bytes(msg[2], "big")
            if mu >= mu_limit:
                raise UserAbort("opened randomizer out of range")
            if homenc.encrypt(hpk, mu, kap) != self.cts[i]:
                raise UserAbort("opened ciphertext mismatch")
            if (aux.gen_g ** mu) * (aux.gen_h ** r_i) != self.cbars[i]:
                raise UserAbort("opened commitment mismatch")
        for i, msg in zip(unopened, reply["diff"]):
            gamma = decode_fixed(msg[0], mu_w)
            rho = int.from_bytes(msg[1], "big")
            nu = decode_fixed(msg[2], w)
            if gamma >= mu_limit:
                raise UserAbort("difference out of range")
            if homenc.add_ciphertexts(hpk, self.x_s_enc, homenc.encrypt(hpk, gamma, nu)) != self.cts[i]:
                raise UserAbort("difference does not explain witness ciphertext")
            if self.C * (aux.gen_g ** gamma) * (aux.gen_h ** rho) != self.cbars[i]:
                raise UserAbort("difference does not link to share commitment")
        body = {"accept": True}
        self.record("send", "register.4", body)
        return body

    def finish(self, reply: dict) -> UserState:
        self.record("recv", "register.4r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("registration not acknowledged")
        return UserState(
            user_id=self.user_id,
            x_u=self.x_u,
            x_s_enc=self.x_s_enc,
            sk_u=self.sk_u,
            params=self.params,
            pk_x=self.pk_xs * (self.params.group.g ** self.x_u),
        )


def blocking_credential_hash(user_id: str, passphrase: str) -> bytes:
    return sha256(lv_cat(b"tandem/block-credential/v1", user_id.encode(), passphrase.encode()))


def register_user(state: TsState, user_id: str, passphrase: str, rng=secrets,
                  ts_session: TsRegisterSession | None = None) -> tuple[UserState, UserRecord]:
    """Run the full registration locally (testing convenience)."""
    ts = ts_session or TsRegisterSession(state, rng=rng)
    u = UserRegisterSession(state.params, state.hpk, user_id, passphrase, rng=rng)
    r1 = ts.step1(u.msg1())
    r2 = ts.step2(u.msg2(r1))
    r3 = ts.step3(u.msg3(r2))
    r4 = ts.step4(u.msg4(r3))
    user_state = u.finish(r4)
    return user_state, state.users[user_id]


# ===========================================================================
# ObtainKeyShareToken
# ===========================================================================

OBTAIN_AUTH_TAG = "tandem/obtain/auth/v1"
OBTAIN_STMT_TAG = "tandem/obtain/commit-proof/v1"


def _auth_statement(group, pk_u, context: bytes) -> Statement:
    st = Statement(domain_tag=OBTAIN_AUTH_TAG, context=context)
    st.add("pk", pk_u, [(group.g, "sk")], group.order, group.identity_g1())
    return st


def _obtain_statement(params: TandemParams, bs_pk: BlindSigPubKey, ped_ci, pk_u,
                      eps_scalar: int, C, cbars: dict[int, object], context: bytes) -> Statement:
    """Step-7 statement: every unopened witness commitment opens to the hash
    committed in C, the commitment carries the authenticated key, and the
    epoch slot equals the current epoch."""
    group = params.group
    st = Statement(domain_tag=OBTAIN_STMT_TAG, context=context)
    ident = group.identity_g1()
    st.add("pk", pk_u, [(group.g, "sk")], group.order, ident)
    for i in sorted(cbars):
        st.add(
            f"ci/{i}", cbars[i],
            [(ped_ci.bases[0], f"cr/{i}"), (ped_ci.bases[1], f"eta/{i}")],
            group.order, ident,
        )
    # C = B^r B0^sk B1^eps B2^eta_c B_{3+j}^eta_{i_j} B_{k+3}^serial, eps public
    target = C * (bs_pk.bases[1] ** ((-eps_scalar) % group.order))
    terms = [(bs_pk.base_b, "r"), (bs_pk.bases[0], "sk"), (bs_pk.bases[2], "eta/c")]
    for j, i in enumerate(sorted(cbars)):
        terms.append((bs_pk.bases[3 + j], f"eta/{i}"))
    terms.append((bs_pk.bases[params.k + 3], "serial"))
    st.add("C", target, terms, group.order, ident)
    return st


class TsObtainSession(_Transcript):
    KIND = "obtain"

    def __init__(self, state: TsState, sid: bytes = b"", rng=secrets,
                 forced_subset: list[int] | None = None):
        super().__init__()
        self.state = state
        self.sid = sid
        self.rng = rng
        self.forced_subset = forced_subset
        self.ped_ci = ci_commit_params(state.params)
        self._step = 0

    def _require(self, step: int) -> None:
        if self._step != step:
            raise ProtocolAbort("E_STEP", "out-of-order obtain step")

    def step1(self, body: dict) -> dict:
        self.record("recv", "obtain.1", body)
        self._require(0)
        user_id = body["user"]
        rec = self.state.users.get(user_id)
        if rec is None:
            raise ProtocolAbort("E_UNKNOWN", "unknown user")
        self.rec = rec
        self.nonce = self.rng.randbits(128).to_bytes(16, "big")
        self._step = 1
        reply = {"nonce": self.nonce}
        self.record("send", "obtain.1r", reply)
        return reply

    def step2(self, body: dict) -> dict:
        self.record("recv", "obtain.2", body)
        self._require(1)
        state = self.state
        stmt = _auth_statement(state.group, self.rec.pk_u, lv_cat(self.sid, self.nonce))
        try:
            proof = proof_from_wire(stmt, body["proof"], statement_decoders(stmt, state.group))
        except (ProofError, ValueError, TypeError, KeyError):
            raise ProtocolAbort("E_AUTH", "malformed authentication proof") from None
        if not verify_representation(stmt, proof):
            raise ProtocolAbort("E_AUTH", "authentication failed")
        if self.rec.status == STATUS_BANNED:
            raise ProtocolAbort("E_BANNED", "user is banned")
        if self.rec.status == STATUS_BLOCKED:
            raise ProtocolAbort("E_BLOCKED", "user is blocked")
        self.epoch = state.epoch_now()
        state.check_rate(self.rec.user_id, self.epoch)
        self._step = 2
        reply = {"ok": True, "epoch": self.epoch}
        self.record("send", "obtain.2r", reply)
        return reply

    def step3(self, body: dict) -> dict:
        self.record("recv", "obtain.3", body)
        self._require(2)
        k, k2 = self.state.params.k, 2 * self.state.params.k
        self.subset = self.forced_subset if self.forced_subset is not None else _sample_subset(k2, k, self.rng)
        self.theta = self.rng.randbits(8 * EXT_RANDOMIZER_BYTES).to_bytes(EXT_RANDOMIZER_BYTES, "big")
        self._step = 3
        reply = {"delta": ext_commit(_subset_bytes(self.subset), self.theta)}
        self.record("send", "obtain.3r", reply)
        return reply

    def step4(self, body: dict) -> dict:
        self.record("recv", "obtain.4", body)
        self._require(3)
        params = self.state.params
        k2 = 2 * params.k
        cbars, deltas = body["Cs"], body["Deltas"]
        if not (isinstance(cbars, list) and isinstance(deltas, list)
                and len(cbars) == k2 and len(deltas) == k2):
            raise ProtocolAbort("E_PROTO", "wrong commitment count")
        try:
            self.cbars = [self.state.group.decode_g1(b) for b in cbars]
        except Exception:
            raise ProtocolAbort("E_PROTO", "malformed witness commitment") from None
        if not all(isinstance(d, bytes) and len(d) == 32 for d in deltas):
            raise ProtocolAbort("E_PROTO", "malformed extractable commitment")
        self.deltas = deltas
        self._step = 4
        reply = {"D": list(self.subset), "theta": self.theta}
        self.record("send", "obtain.4r", reply)
        return reply

    def step5(self, body: dict) -> dict:
        self.record("recv", "obtain.5", body)
        self._require(4)
        state, params = self.state, self.state.params
        hpk = state.hpk
        w = hpk.ciphertext_bytes
        mu_w = params.mu_bytes
        openings = body["open"]
        if not isinstance(openings, list) or len(openings) != params.k:
            self.state.ban(self.rec.user_id)
            raise ProtocolAbort("E_BAN", "wrong opening count; user banned")
        mu_limit = 1 << params.ell_mu
        try:
            for i, msg in zip(self.subset, openings):
                ct = homenc.HomCiphertext(decode_fixed(msg[0], w))
                mu = decode_fixed(msg[1], mu_w)
                kap = decode_fixed(msg[2], w)
                r_i = int.from_bytes(msg[3], "big")
                xi = msg[4]
                if mu >= mu_limit:
                    raise ValueError("randomizer too large")
                expect = homenc.add_ciphertexts(hpk, self.rec.x_s_enc, homenc.encrypt(hpk, mu, kap))
                if ct != expect:
                    raise ValueError("witness ciphertext not a randomization of the share")
                eta = hash_ciphertext(params, ct, w)
                if not verify_opening(self.ped_ci, self.cbars[i], [eta], r_i):
                    raise ValueError("witness commitment mismatch")
                if not ext_verify(self.deltas[i], lv_cat(msg[1], msg[2]), xi):
                    raise ValueError("extractable commitment mismatch")
        except (ValueError, TypeError, IndexError, KeyError) as exc:
            self.state.ban(self.rec.user_id)
            raise ProtocolAbort("E_BAN", f"cut-and-choose check failed ({exc}); user banned") from None
        self._step = 5
        reply = {"ok": True}
        self.record("send", "obtain.5r", reply)
        return reply

    def step6(self, body: dict) -> dict:
        self.record("recv", "obtain.6", body)
        self._require(5)
        state, params = self.state, self.state.params
        try:
            C = state.group.decode_g1(body["C"])
        except Exception:
            self.state.ban(self.rec.user_id)
            raise ProtocolAbort("E_BAN", "malformed token commitment; user banned") from None
        unopened = {i: self.cbars[i] for i in range(2 * params.k) if i not in set(self.subset)}
        stmt = _obtain_statement(
            params, state.bs_keypair.pk, self.ped_ci, self.rec.pk_u,
            state.epoch_scalar(self.epoch), C, unopened, lv_cat(self.sid, self.nonce),
        )
        try:
            proof = proof_from_wire(stmt, body["proof"], statement_decoders(stmt, state.group))
        except (ProofError, ValueError, TypeError, KeyError):
            self.state.ban(self.rec.user_id)
            raise ProtocolAbort("E_BAN", "malformed commitment proof; user banned") from None
        if not verify_representation(stmt, proof):
            self.state.ban(self.rec.user_id)
            raise ProtocolAbort("E_BAN", "commitment proof failed; user banned")
        self.C = C
        self._step = 6
        reply = {"ok": True}
        self.record("send", "obtain.6r", reply)
        return reply

    def step7(self, body: dict) -> dict:
        self.record("recv", "obtain.7", body)
        self._require(6)
        state = self.state
        state.bump_issued(self.rec.user_id, self.epoch)
        a_el, e, s2 = blind_sign_respond(state.bs_keypair, self.C, self.rng)
        self._step = 7
        reply = {
            "A": a_el.encode(),
            "e": encode_scalar(e, state.params.p),
            "s2": encode_scalar(s2, state.params.p),
        }
        self.record("send", "obtain.7r", reply)
        return reply

    def step8(self, body: dict) -> dict:
        self.record("recv", "obtain.8", body)
        self._require(7)
        self._step = 8
        reply = {"done": True}
        self.record("send", "obtain.8r", reply)
        return reply

    def handle(self, step: int, body: dict) -> dict:
        return [self.step1, self.step2, self.step3, self.step4,
                self.step5, self.step6, self.step7, self.step8][step - 1](body)


class UserObtainSession(_Transcript):
    def __init__(self, user: UserState, hpk: homenc.HomEncPubKey, bs_pk: BlindSigPubKey,
                 sid: bytes = b"", rng=secrets, now_fn=None):
        super().__init__()
        self.user = user
        self.params = user.params
        self.hpk = hpk
        self.bs_pk = bs_pk
        self.sid = sid
        self.rng = rng
        import time as _time

        self.now_fn = now_fn or _time.time
        self.ped_ci = ci_commit_params(self.params)

    def msg1(self) -> dict:
        body = {"user": self.user.user_id}
        self.record("send", "obtain.1", body)
        return body

    def msg2(self, reply: dict) -> dict:
        self.record("recv", "obtain.1r", reply)
        nonce = reply["nonce"]
        group = self.params.group
        stmt = _auth_statement(group, self.user.pk_u(), lv_cat(self.sid, nonce))
        proof = prove_representation(stmt, {"sk": self.user.sk_u}, self.rng)
        body = {"proof": proof_to_wire(stmt, proof)}
        self.record("send", "obtain.2", body)
        return body

    def msg3(self, reply: dict) -> dict:
        self.record("recv", "obtain.2r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("authentication rejected")
        ts_epoch = reply.get("epoch")
        local = epoch_index(self.params, self.now_fn())
        if not isinstance(ts_epoch, int) or abs(ts_epoch - local) > 1:
            raise UserAbort("server epoch is implausible")
        self.epoch = ts_epoch  # both sides commit to the server's pinned epoch
        body = {}
        self.record("send", "obtain.3", body)
        return body

    def msg4(self, reply: dict) -> dict:
        self.record("recv", "obtain.3r", reply)
        self.delta_commit = reply["delta"]
        if not isinstance(self.delta_commit, bytes) or len(self.delta_commit) != 32:
            raise UserAbort("malformed subset commitment")
        params, hpk = self.params, self.hpk
        k2 = 2 * params.k
        w = hpk.ciphertext_bytes
        self.mus, self.kappas, self.crs, self.xis = [], [], [], []
        self.cts, self.etas, self.cbars, self.dlts = [], [], [], []
        for _ in range(k2):
            mu = self.rng.randbits(params.ell_mu)
            kap = homenc.random_unit(hpk, self.rng)
            r_i = self.rng.randbelow(params.p)
            xi = self.rng.randbits(8 * EXT_RANDOMIZER_BYTES).to_bytes(EXT_RANDOMIZER_BYTES, "big")
            ct = homenc.add_ciphertexts(hpk, self.user.x_s_enc, homenc.encrypt(hpk, mu, kap))
            eta = hash_ciphertext(params, ct, w)
            self.mus.append(mu)
            self.kappas.append(kap)
            self.crs.append(r_i)
            self.xis.append(xi)
            self.cts.append(ct)
            self.etas.append(eta)
            self.cbars.append(commit(self.ped_ci, [eta], r_i))
            self.dlts.append(ext_commit(lv_cat(encode_fixed(mu, params.mu_bytes), encode_fixed(kap, w)), xi))
        body = {"Cs": [c.encode() for c in self.cbars], "Deltas": list(self.dlts)}
        self.record("send", "obtain.4", body)
        return body

    def msg5(self, reply: dict) -> dict:
        self.record("recv", "obtain.4r", reply)
        params = self.params
        subset = reply["D"]
        theta = reply["theta"]
        k2 = 2 * params.k
        if (not isinstance(subset, list) or len(set(subset)) != params.k
                or not all(isinstance(i, int) and 0 <= i < k2 for i in subset)):
            raise UserAbort("malformed disclosure subset")
        if not isinstance(theta, bytes) or not ext_verify(self.delta_commit, _subset_bytes(subset), theta):
            raise UserAbort("server subset commitment does not open")
        self.subset = sorted(subset)
        w = self.hpk.ciphertext_bytes
        mu_w = params.mu_bytes
        openings = []
        for i in self.subset:
            openings.append([
                encode_fixed(self.cts[i].value, w),
                encode_fixed(self.mus[i], mu_w),
                encode_fixed(self.kappas[i], w),
                encode_scalar(self.crs[i], params.p),
                self.xis[i],
            ])
        body = {"open": openings}
        self.record("send", "obtain.5", body)
        return body

    def msg6(self, reply: dict) -> dict:
        self.record("recv", "obtain.5r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("opening rejected")
        params, hpk = self.params, self.hpk
        group = params.group
        eps_scalar = self.epoch % params.p
        self.delta = (1 << params.ell_mu) + self.rng.randbits(params.ell_mu)
        self.kappa_c = homenc.random_unit(hpk, self.rng)
        self.c = homenc.add_ciphertexts(hpk, self.user.x_s_enc, homenc.encrypt(hpk, self.delta, self.kappa_c))
        self.eta_c = hash_ciphertext(params, self.c, hpk.ciphertext_bytes)
        self.serial = group.random_scalar(self.rng)
        self.unopened = [i for i in range(2 * params.k) if i not in set(self.subset)]
        self.attributes = [self.user.sk_u, eps_scalar, self.eta_c]
        self.attributes += [self.etas[i] for i in self.unopened]
        self.attributes.append(self.serial)
        self.r_commit = group.random_scalar(self.rng)
        C = commit_attributes(self.bs_pk, self.attributes, self.r_commit)
        stmt = _obtain_statement(
            params, self.bs_pk, self.ped_ci, self.user.pk_u(), eps_scalar, C,
            {i: self.cbars[i] for i in self.unopened}, lv_cat(self.sid, self.nonce_from_auth),
        )
        witnesses = {"sk": self.user.sk_u, "r": self.r_commit, "eta/c": self.eta_c, "serial": self.serial}
        for i in self.unopened:
            witnesses[f"cr/{i}"] = self.crs[i]
            witnesses[f"eta/{i}"] = self.etas[i]
        proof = prove_representation(stmt, witnesses, self.rng)
        self.C = C
        body = {"C": C.encode(), "proof": proof_to_wire(stmt, proof)}
        self.record("send", "obtain.6", body)
        return body

    def msg7(self, reply: dict) -> dict:
        self.record("recv", "obtain.6r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("commitment proof rejected")
        body = {}
        self.record("send", "obtain.7", body)
        return body

    def msg8(self, reply: dict) -> dict:
        self.record("recv", "obtain.7r", reply)
        group = self.params.group
        try:
            a_el = group.decode_g1(reply["A"])
            e = int.from_bytes(reply["e"], "big")
            s2 = int.from_bytes(reply["s2"], "big")
        except Exception:
            raise UserAbort("malformed signature tuple") from None
        try:
            self.sigma = unblind(self.bs_pk, self.attributes, self.r_commit, a_el, e, s2)
        except Exception:
            raise UserAbort("signer returned an invalid signature") from None
        body = {"ack": True}
        self.record("send", "obtain.8", body)
        return body

    def finish(self, reply: dict) -> KeyShareToken:
        self.record("recv", "obtain.8r", reply)
        c_tilde, r_tilde = recommit(self.bs_pk, self.attributes, self.rng)
        token = KeyShareToken(
            sigma=self.sigma,
            c_tilde=c_tilde,
            r_tilde=r_tilde,
            attributes=list(self.attributes),
            epoch=self.epoch,
            c=self.c,
            delta=self.delta,
            kappa=self.kappa_c,
            witnesses=[(self.cts[i], self.mus[i], self.kappas[i]) for i in self.unopened],
            obtained_at=self.now_fn(),
        )
        self.user.tokens.append(token)
        return token

    # msg2 needs the auth nonce later for the step-7 context
    @property
    def nonce_from_auth(self) -> bytes:
        for direction, step, body in self.transcript:
            if step == "obtain.1r":
                return body["nonce"]
        raise UserAbort("missing authentication nonce")

    def run(self, ts: TsObtainSession) -> KeyShareToken:
        r = ts.step1(self.msg1())
        r = ts.step2(self.msg2(r))
        r = ts.step3(self.msg3(r))
        r = ts.step4(self.msg4(r))
        r = ts.step5(self.msg5(r))
        r = ts.step6(self.msg6(r))
        r = ts.step7(self.msg7(r))
        r = ts.step8(self.msg8(r))
        return self.finish(r)


# ===========================================================================
# GenShares
# ===========================================================================

GENSHARES_STMT_TAG = "tandem/genshares/token-proof/v1"


def _genshares_statement(params: TandemParams, bs_pk: BlindSigPubKey, publics,
                         disclosed: dict, group, blocked_keys, ineq_publics,
                         context: bytes) -> Statement:
    st = Statement(domain_tag=GENSHARES_STMT_TAG, context=context)
    add_show_relations(st, bs_pk, publics, disclosed, lambda i: f"attr/{i}")
    add_inequality_relations(st, group, "attr/0", blocked_keys, ineq_publics)
    return st


def _genshares_disclosed(params: TandemParams, hpk, epoch_scalar: int,
                         c: homenc.HomCiphertext, cts: list, serial: int) -> dict:
    w = hpk.ciphertext_bytes
    disclosed = {1: epoch_scalar, 2: hash_ciphertext(params, c, w)}
    for j, ct in enumerate(cts):
        disclosed[3 + j] = hash_ciphertext(params, ct, w)
    disclosed[params.k + 3] = serial % params.p
    return disclosed


class TsGenSharesSession(_Transcript):
    KIND = "genshares"

    def __init__(self, state: TsState, sid: bytes = b"", rng=secrets, crash_hook=None):
        super().__init__()
        self.state = state
        self.sid = sid
        self.rng = rng
        self.crash_hook = crash_hook
        self._step = 0
        self.shares = None  # x_tilde_s once derived

    def step1(self, body: dict) -> dict:
        self.record("recv", "genshares.1", body)
        if self._step != 0:
            raise ProtocolAbort("E_STEP", "out-of-order genshares step")
        version, entries = self.state.rlist_snapshot()
        self.rlist_version, self.rlist_entries = version, entries
        self._step = 1
        reply = {"version": version, "rlist": list(entries), "epoch": self.state.epoch_now()}
        self.record("send", "genshares.1r", reply)
        return reply

    def step2(self, body: dict) -> dict:
        self.record("recv", "genshares.2", body)
        if self._step != 1:
            raise ProtocolAbort("E_STEP", "out-of-order genshares step")
        state, params = self.state, self.state.params
        hpk = state.hpk
        group, w = state.group, hpk.ciphertext_bytes

        epoch = body["epoch"]
        if not isinstance(epoch, int) or epoch != state.epoch_now():
            raise ProtocolAbort("E_EPOCH", "token epoch does not match the current epoch")
        try:
            serial = int.from_bytes(body["serial"], "big")
            if not (isinstance(body["serial"], bytes) and len(body["serial"]) == scalar_width(params.p) and serial < params.p):
                raise ValueError("bad serial")
            c = homenc.HomCiphertext(decode_fixed(body["c"], w))
            cts = [homenc.HomCiphertext(decode_fixed(b, w)) for b in body["cs"]]
            if len(cts) != params.k:
                raise ValueError("wrong witness count")
            c1 = group.decode_g1(body["c1"])
            c2 = group.decode_g1(body["c2"])
            ineq_publics = [
                (group.decode_g1(a), group.decode_g1(r)) for a, r in body["ineq"]
            ]
        except (ProtocolAbort, ValueError, TypeError, KeyError, IndexError):
            raise ProtocolAbort("E_PROTO", "malformed spend message") from None
        if len(ineq_publics) != len(self.rlist_entries):
            raise ProtocolAbort("E_REVOKED", "non-revocation proof does not cover the list")
        if not verify_inequality_publics(group, ineq_publics):
            raise ProtocolAbort("E_REVOKED", "revoked key detected")
        if c1.is_identity():
            raise ProtocolAbort("E_PROTO", "degenerate signature commitment")

        from .blindsig import ShowPublics

        publics = ShowPublics(c1=c1, c2=c2)
        disclosed = _genshares_disclosed(params, hpk, state.epoch_scalar(epoch), c, cts,
                                         int.from_bytes(body["serial"], "big"))
        blocked = [group.decode_g1(b) for b in self.rlist_entries]
        context = lv_cat(self.sid, self.rlist_version.to_bytes(8, "big"))
        stmt = _genshares_statement(params, state.bs_keypair.pk, publics, disclosed,
                                    group, blocked, ineq_publics, context)
        try:
            proof = proof_from_wire(stmt, body["proof"], statement_decoders(stmt, group, state.aux))
        except (ProofError, ValueError, TypeError, KeyError):
            raise ProtocolAbort("E_PROTO", "malformed token proof") from None
        if not verify_representation(stmt, proof):
            raise ProtocolAbort("E_PROOF", "token possession proof failed")
        if not state.spend_serial(epoch, body["serial"], crash_hook=self.crash_hook):
            raise ProtocolAbort("E_SERIAL", "token already spent")
        self.c, self.cts, self.epoch = c, cts, epoch
        self._step = 2
        reply = {"ok": True}
        self.record("send", "genshares.2r", reply)
        return reply

    def step3(self, body: dict) -> dict:
        self.record("recv", "genshares.3", body)
        if self._step != 2:
            raise ProtocolAbort("E_STEP", "out-of-order genshares step")
        state, params = self.state, self.state.params
        hpk = state.hpk
        w = hpk.ciphertext_bytes
        gammas, nus = body["gammas"], body["nus"]
        if len(gammas) != params.k or len(nus) != params.k:
            raise ProtocolAbort("E_PROTO", "wrong difference count")
        limit = 1 << (params.ell_mu + 1)
        try:
            for ct, graw, nraw in zip(self.cts, gammas, nus):
                gamma = decode_fixed(graw, params.gamma_bytes)
                nu = decode_fixed(nraw, w)
                if not 0 < gamma < limit:
                    raise ValueError("difference out of range")
                if homenc.add_ciphertexts(hpk, ct, homenc.encrypt(hpk, gamma, nu)) != self.c:
                    raise ValueError("difference does not relate witness to token ciphertext")
        except (ValueError, TypeError) as exc:
            raise ProtocolAbort("E_GAMMA", str(exc)) from None
        plain = homenc.decrypt(state.hsk, hpk, self.c)
        self.shares = plain % params.p
        self._step = 3
        reply = {"ok": True}
        self.record("send", "genshares.3r", reply)
        return reply

    def step4(self, body: dict) -> dict:
        self.record("recv", "genshares.4", body)
        if self._step != 3:
            raise ProtocolAbort("E_STEP", "out-of-order genshares step")
        self._step = 4
        reply = {"ready": True}
        self.record("send", "genshares.4r", reply)
        return reply

    def handle(self, step: int, body: dict) -> dict:
        return [self.step1, self.step2, self.step3, self.step4][step - 1](body)


class UserGenSharesSession(_Transcript):
    """Device side; marks the token spent before the spend message leaves."""

    def __init__(self, user: UserState, hpk: homenc.HomEncPubKey, bs_pk: BlindSigPubKey,
                 token: KeyShareToken, sid: bytes = b"", rng=secrets, on_spent=None):
        super().__init__()
        self.user = user
        self.params = user.params
        self.hpk = hpk
        self.bs_pk = bs_pk
        self.token = token
        self.sid = sid
        self.rng = rng
        self.on_spent = on_spent
        self.x_tilde_u = None

    def msg1(self) -> dict:
        if self.token.spent:
            raise UserAbort("token already spent")
        body = {}
        self.record("send", "genshares.1", body)
        return body

    def msg2(self, reply: dict) -> dict:
        self.record("recv", "genshares.1r", reply)
        params, group = self.params, self.params.group
        version = reply["version"]
        entries = reply["rlist"]
        my_pk = (group.g ** self.user.sk_u).encode()
        if my_pk in entries:
            self.user.tokens.clear()
            if self.on_spent is not None:
                self.on_spent()
            raise BlockedDetected("own key found on the revocation list; tokens destroyed")
        if reply["epoch"] != self.token.epoch:
            raise UserAbort("token epoch no longer current")
        # one-time-use: mark spent (and persist) before anything is sent
        self.token.spent = True
        if self.on_spent is not None:
            self.on_spent()
        blocked = [group.decode_g1(b) for b in entries]
        ineq_publics, ineq_witnesses = inequality_commitments(group, self.user.sk_u, blocked, self.rng)
        publics, witnesses = show_publics(self.bs_pk, self.token.sigma, self.rng)
        witnesses.update(ineq_witnesses)
        witnesses["attr/0"] = self.user.sk_u
        hpk = self.hpk
        cts = [wit[0] for wit in self.token.witnesses]
        disclosed = _genshares_disclosed(params, hpk, self.token.epoch % params.p,
                                         self.token.c, cts, self.token.serial)
        context = lv_cat(self.sid, int(version).to_bytes(8, "big"))
        stmt = _genshares_statement(params, self.bs_pk, publics, disclosed, group,
                                    blocked, ineq_publics, context)
        proof = prove_representation(stmt, witnesses, self.rng)
        w = hpk.ciphertext_bytes
        body = {
            "epoch": self.token.epoch,
            "serial": encode_scalar(self.token.serial, params.p),
            "c": encode_fixed(self.token.c.value, w),
            "cs": [encode_fixed(ct.value, w) for ct in cts],
            "c1": publics.c1.encode(),
            "c2": publics.c2.encode(),
            "ineq": [[a.encode(), r.encode()] for a, r in ineq_publics],
            "proof": proof_to_wire(stmt, proof),
        }
        self.record("send", "genshares.2", body)
        return body

    def msg3(self, reply: dict) -> dict:
        self.record("recv", "genshares.2r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("spend rejected")
        params, hpk = self.params, self.hpk
        from gmpy2 import invert

        w = hpk.ciphertext_bytes
        gammas, nus = [], []
        for ct, mu, kap in self.token.witnesses:
            gamma = self.token.delta - mu
            nu = int(invert(kap, hpk.n)) * self.token.kappa % hpk.n
            gammas.append(encode_fixed(gamma, params.gamma_bytes))
            nus.append(encode_fixed(nu, w))
        body = {"gammas": gammas, "nus": nus}
        self.record("send", "genshares.3", body)
        return body

    def msg4(self, reply: dict) -> dict:
        self.record("recv", "genshares.3r", reply)
        if reply.get("ok") is not True:
            raise UserAbort("difference check rejected")
        self.x_tilde_u = (self.user.x_u - self.token.delta) % self.params.p
        body = {}
        self.record("send", "genshares.4", body)
        return body

    def finish(self, reply: dict) -> int:
        self.record("recv", "genshares.4r", reply)
        if reply.get("ready") is not True:
            raise UserAbort("share session not ready")
        return self.x_tilde_u

    def run(self, ts: TsGenSharesSession) -> tuple[int, int]:
        r = ts.step1(self.msg1())
        r = ts.step2(self.msg2(r))
        r = ts.step3(self.msg3(r))
        r = ts.step4(self.msg4(r))
        x_tilde_u = self.finish(r)
        return x_tilde_u, ts.shares


# ===========================================================================
# BlockShare
# ===========================================================================

class TsBlockSession(_Transcript):
    KIND = "block"

    def __init__(self, state: TsState, sid: bytes = b"", rng=secrets):
        super().__init__()
        self.state = state
        self.sid = sid

    def step1(self, body: dict) -> dict:
        self.record("recv", "block.1", body)
        user_id = body.get("user")
        cred = body.get("cred")
        rec = self.state.users.get(user_id) if isinstance(user_id, str) else None
        if rec is None:
            raise ProtocolAbort("E_UNKNOWN", "unknown user")
        if not isinstance(cred, str) or blocking_credential_hash(user_id, cred) != rec.block_hash:
            raise ProtocolAbort("E_AUTH", "blocking credential rejected")
        self.state.block(user_id)
        reply = {"ok": True}
        self.record("send", "block.1r", reply)
        return reply

    def handle(self, step: int, body: dict) -> dict:
        if step != 1:
            raise ProtocolAbort("E_STEP", "block has a single step")
        return self.step1(body)


def block_share(state: TsState, user_id: str, passphrase: str) -> None:
    TsBlockSession(state).step1({"user": user_id, "cred": passphrase})
