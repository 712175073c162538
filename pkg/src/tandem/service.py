"""The share server executable: framing, session dispatch, persistence.

Wire format: 4-byte big-endian length, then a canonical-CBOR map
{"v": 1, "type": text, "sid": 16 bytes, "body": map}.  Every malformed or
out-of-place input is answered with an error frame carrying a distinct code;
the connection never hangs.

Sessions are keyed by sid, advance one protocol step per frame, expire
after a timeout, and are destroyed on completion or abort.  A completed or
destroyed sid cannot be reused.  Share-generation sessions continue into
the threshold-protocol endpoints (tcp.*) on the same sid, operating on the
shares that session derived.

Persistence is a write-ahead log of state mutations plus periodic
snapshots, both canonical CBOR; secret keys live in a separate file with
0600 permissions.  restore(persist(s)) reproduces users, the revocation
list, spent serials, and counters exactly.
"""

from __future__ import annotations

import os
import secrets
import socket
import socketserver
import threading

from . import cbor, homenc
from .blindsig import BlindSigKeyPair, pk_from_wire
from .protocol import (
    TsBlockSession,
    TsGenSharesSession,
    TsObtainSession,
    TsRegisterSession,
)
from .state import ProtocolAbort, TandemParams, TsState, UserRecord
from .tcp import BbsIssueTs, BbsShowTs, SchnorrTs

PROTOCOL_VERSION = 1
SID_BYTES = 16
MAX_FRAME = 16 * 1024 * 1024
SESSION_TIMEOUT = 60.0


class WireError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def encode_frame(ftype: str, sid: bytes, body: dict) -> bytes:
    payload = cbor.encode({"v": PROTOCOL_VERSION, "type": ftype, "sid": sid, "body": body})
    if len(payload) > MAX_FRAME:
        raise WireError("E_SIZE", "frame too large")
    return len(payload).to_bytes(4, "big") + payload


def decode_payload(payload: bytes) -> tuple[str, bytes, dict]:
    try:
        obj = cbor.decode(payload)
    except cbor.CBORError as exc:
        raise WireError("E_DECODE", str(exc)) from None
    if not isinstance(obj, dict) or obj.get("v") != PROTOCOL_VERSION:
        raise WireError("E_DECODE", "bad envelope")
    ftype, sid, body = obj.get("type"), obj.get("sid"), obj.get("body")
    if not isinstance(ftype, str) or not isinstance(sid, bytes) or len(sid) != SID_BYTES:
        raise WireError("E_DECODE", "bad envelope fields")
    if not isinstance(body, dict):
        raise WireError("E_DECODE", "body must be a map")
    return ftype, sid, body


def read_frame(sock) -> bytes | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    length = int.from_bytes(header, "big")
    if length > MAX_FRAME:
        raise WireError("E_SIZE", "frame too large")
    payload = _read_exact(sock, length)
    if payload is None:
        raise WireError("E_DECODE", "truncated frame")
    return payload


def _read_exact(sock, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else None
        buf += chunk
    return buf


class _Session:
    __slots__ = ("sid", "kind", "handler", "step", "deadline", "lock", "tcp_state", "done")

    def __init__(self, sid: bytes, kind: str, handler, deadline: float):
        self.sid = sid
        self.kind = kind
        self.handler = handler
        self.step = 0
        self.deadline = deadline
        self.lock = threading.Lock()
        self.tcp_state = {}
        self.done = False


_KIND_STEPS = {"register": 4, "obtain": 8, "genshares": 4, "block": 1}


class TandemService:
    """Frame dispatcher over a TsState; one logical writer, many sessions."""

    def __init__(self, state: TsState, persister=None, timeout: float = SESSION_TIMEOUT, rng=secrets):
        self.state = state
        self.persister = persister
        self.timeout = timeout
        self.rng = rng
        self.sessions: dict[bytes, _Session] = {}
        self.finished_sids: set[bytes] = set()
        self.table_lock = threading.Lock()
        self.genshares_logs: dict[bytes, list] = {}  # sid -> transcript, for audits

    # -- session bookkeeping -------------------------------------------------
    def _new_session(self, sid: bytes, kind: str) -> _Session:
        with self.table_lock:
            if sid in self.finished_sids or sid in self.sessions:
                raise WireError("E_SID", "session id already used")
            handler = self._make_handler(kind, sid)
            sess = _Session(sid, kind, handler, self.state.now_fn() + self.timeout)
            self.sessions[sid] = sess
            return sess

    def _make_handler(self, kind: str, sid: bytes):
        state = self.state
        if kind == "register":
            return TsRegisterSession(state, sid=sid, rng=self.rng)
        if kind == "obtain":
            return TsObtainSession(state, sid=sid, rng=self.rng)
        if kind == "genshares":
            return TsGenSharesSession(state, sid=sid, rng=self.rng)
        if kind == "block":
            return TsBlockSession(state, sid=sid, rng=self.rng)
        raise WireError("E_TYPE", f"unknown protocol kind {kind!r}")

    def _lookup(self, sid: bytes, kind: str) -> _Session:
        with self.table_lock:
            sess = self.sessions.get(sid)
            if sess is None:
                if sid in self.finished_sids:
                    raise WireError("E_SID", "session already completed")
                raise WireError("E_SESSION", "no such session")
            if sess.kind != kind:
                raise WireError("E_TYPE", "session bound to a different protocol")
            return sess

    def _destroy(self, sid: bytes, finished: bool) -> None:
        with self.table_lock:
            self.sessions.pop(sid, None)
            self.finished_sids.add(sid)

    def expire_sessions(self) -> None:
        now = self.state.now_fn()
        with self.table_lock:
            for sid in [s for s, sess in self.sessions.items() if sess.deadline < now]:
                del self.sessions[sid]
                self.finished_sids.add(sid)

    # -- dispatch -------------------------------------------------------------
    def handle_frame(self, payload: bytes) -> bytes:
        try:
            ftype, sid, body = decode_payload(payload)
        except WireError as exc:
            return encode_frame("error", bytes(SID_BYTES), {"code": exc.code, "msg": exc.message})
        try:
            rtype, rbody = self.handle(ftype, sid, body)
            return encode_frame(rtype, sid, rbody)
        except WireError as exc:
            return encode_frame("error", sid, {"code": exc.code, "msg": exc.message})
        except ProtocolAbort as exc:
            self._destroy(sid, finished=False)
            return encode_frame("error", sid, {"code": exc.code, "msg": exc.message})
        except Exception as exc:  # pragma: no cover - defensive
            self._destroy(sid, finished=False)
            return encode_frame("error", sid, {"code": "E_INTERNAL", "msg": type(exc).__name__})

    def handle(self, ftype: str, sid: bytes, body: dict) -> tuple[str, dict]:
        self.expire_sessions()
        if ftype == "rlist.get":
            version, entries = self.state.rlist_snapshot()
            return "rlist", {"version": version, "entries": list(entries)}
        if ftype == "info.get":
            return "info", self.server_info()
        if ftype.startswith("tcp."):
            return self._handle_tcp(ftype, sid, body)
        if "." not in ftype:
            raise WireError("E_TYPE", f"unknown frame type {ftype!r}")
        kind, _, stepstr = ftype.rpartition(".")
        if kind not in _KIND_STEPS or not stepstr.isdigit():
            raise WireError("E_TYPE", f"unknown frame type {ftype!r}")
        step = int(stepstr)
        if not 1 <= step <= _KIND_STEPS[kind]:
            raise WireError("E_TYPE", f"unknown frame type {ftype!r}")
        sess = self._new_session(sid, kind) if step == 1 else self._lookup(sid, kind)
        with sess.lock:
            if sess.deadline < self.state.now_fn():
                self._destroy(sid, finished=False)
                raise WireError("E_EXPIRED", "session expired")
            if sess.step != step - 1:
                self._destroy(sid, finished=False)
                raise WireError("E_STEP", "out-of-order step; session destroyed")
            try:
                reply = sess.handler.handle(step, body)
            except ProtocolAbort:
                self._record_genshares(sess)
                raise
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                self._record_genshares(sess)
                raise ProtocolAbort("E_PROTO", f"malformed body ({type(exc).__name__})") from None
            sess.step = step
            if kind != "genshares" and step == _KIND_STEPS[kind]:
                sess.done = True
                self._destroy(sid, finished=True)
            if kind == "genshares":
                self._record_genshares(sess)
            if self.persister is not None and kind in ("register", "block") and sess.done:
                self.persister.snapshot(self.state)
        return f"{ftype}.ok", reply

    def _record_genshares(self, sess: _Session) -> None:
        if sess.kind == "genshares":
            self.genshares_logs[sess.sid] = sess.handler.transcript

    def _handle_tcp(self, ftype: str, sid: bytes, body: dict) -> tuple[str, dict]:
        sess = self._lookup(sid, "genshares")
        with sess.lock:
            if sess.step != 4 or sess.handler.shares is None:
                raise WireError("E_STEP", "threshold protocols need completed share generation")
            shares = sess.handler.shares
            group = self.state.group
            ts = sess.tcp_state
            if ftype == "tcp.schnorr.1":
                if "schnorr" in ts:
                    raise WireError("E_STEP", "schnorr already started")
                ts["schnorr"] = SchnorrTs(group, shares, rng=self.rng)
                return "tcp.schnorr.1.ok", {"u_s": ts["schnorr"].commitment().encode()}
            if ftype == "tcp.schnorr.2":
                if "schnorr" not in ts:
                    raise WireError("E_STEP", "schnorr not started")
                c = body.get("c")
                if not isinstance(c, bytes):
                    raise WireError("E_DECODE", "challenge must be bytes")
                r_s = ts.pop("schnorr").respond(int.from_bytes(c, "big") % group.order)
                return "tcp.schnorr.2.ok", {"r_s": r_s.to_bytes(group.scalar_bytes, "big")}
            if ftype == "tcp.schnorr.3":
                self._destroy(sid, finished=True)
                return "tcp.schnorr.3.ok", {"done": True}
            if ftype == "tcp.elgamal.1":
                try:
                    c1 = group.decode_g1(body["c1"])
                except Exception:
                    raise WireError("E_DECODE", "malformed ciphertext half") from None
                from .tcp import elgamal_ts_share

                alpha = elgamal_ts_share(group, shares, c1)
                self._destroy(sid, finished=True)
                return "tcp.elgamal.1.ok", {"alpha": alpha.encode()}
            if ftype == "tcp.bbs.issue.1":
                try:
                    b0 = group.decode_g1(body["b0"])
                except Exception:
                    raise WireError("E_DECODE", "malformed base") from None
                ts["issue"] = BbsIssueTs(group, shares, signal_sk=self.state.signal_sk, rng=self.rng)
                return "tcp.bbs.issue.1.ok", {"v_s": ts["issue"].share_base(b0).encode()}
            if ftype == "tcp.bbs.issue.2":
                if "issue" not in ts:
                    raise WireError("E_STEP", "issue not started")
                try:
                    b0 = group.decode_g1(body["b0"])
                    u_partial = group.decode_g1(body["u_partial"])
                    ctx, nonce = body["ctx"], body["nonce"]
                    if not isinstance(ctx, bytes) or not isinstance(nonce, bytes):
                        raise ValueError
                except Exception:
                    raise WireError("E_DECODE", "malformed issuance request") from None
                u_full, r_s, signal = ts.pop("issue").respond(b0, ctx, nonce, u_partial)
                self._destroy(sid, finished=True)
                return "tcp.bbs.issue.2.ok", {
                    "u": u_full.encode(),
                    "r_s": r_s.to_bytes(group.scalar_bytes, "big"),
                    "signal": list(signal),
                }
            if ftype == "tcp.bbs.show.1":
                try:
                    e_b0_h = group.decode_gt(body["e_b0_h"])
                    e1 = group.decode_g1(body["e1"])
                    e2 = group.decode_g1(body["e2"])
                    e3p = group.decode_gt(body["e3p"])
                    ctx, nonce = body["ctx"], body["nonce"]
                    if not isinstance(ctx, bytes) or not isinstance(nonce, bytes):
                        raise ValueError
                except Exception:
                    raise WireError("E_DECODE", "malformed showing request") from None
                shower = BbsShowTs(group, shares, rng=self.rng)
                e3, r_s = shower.respond(e_b0_h, ctx, nonce, e1, e2, e3p)
                ts["show_done"] = True
                return "tcp.bbs.show.1.ok", {
                    "e3": e3.encode(),
                    "r_s": r_s.to_bytes(group.scalar_bytes, "big"),
                }
            if ftype == "tcp.bbs.show.2":
                self._destroy(sid, finished=True)
                return "tcp.bbs.show.2.ok", {"done": True}
        raise WireError("E_TYPE", f"unknown frame type {ftype!r}")

    def server_info(self) -> dict:
        state = self.state
        p = state.params
        return {
            "group": p.group_name,
            "ell": p.ell,
            "k": p.k,
            "q": p.rate_limit,
            "epoch_len": p.epoch_len,
            "modulus_bits": p.modulus_bits,
            "beta": p.beta,
            "hom_n": _int_bytes(state.hpk.n),
            "hom_y": _int_bytes(state.hpk.y),
            "bs_pk": state.bs_keypair.pk.to_wire(),
            "signal_pk": (state.group.g ** state.signal_sk).encode(),
            "aux_modulus": _int_bytes(state.aux.modulus),
            "aux_order": _int_bytes(state.aux.order),
        }


def _int_bytes(x: int) -> bytes:
    x = int(x)
    return x.to_bytes((x.bit_length() + 7) // 8 or 1, "big")


def _bytes_int(b: bytes) -> int:
    return int.from_bytes(b, "big")


# ===========================================================================
# Persistence: snapshot + write-ahead log, secrets kept separately
# ===========================================================================

SNAPSHOT_FILE = "state.cbor"
WAL_FILE = "wal.cbor"
SECRETS_FILE = "secrets.cbor"


class Persister:
    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self._wal_lock = threading.Lock()
        self._wal_fh = None

    # -- WAL -------------------------------------------------------------
    def wal_append(self, record: list) -> None:
        data = cbor.encode(record)
        with self._wal_lock:
            if self._wal_fh is None:
                self._wal_fh = open(os.path.join(self.data_dir, WAL_FILE), "ab")
            self._wal_fh.write(len(data).to_bytes(4, "big") + data)
            self._wal_fh.flush()
            os.fsync(self._wal_fh.fileno())

    def _wal_records(self) -> list:
        path = os.path.join(self.data_dir, WAL_FILE)
        records = []
        if not os.path.exists(path):
            return records
        raw = open(path, "rb").read()
        pos = 0
        while pos + 4 <= len(raw):
            n = int.from_bytes(raw[pos : pos + 4], "big")
            if pos + 4 + n > len(raw):
                break  # torn tail write; ignore the partial record
            records.append(cbor.decode(raw[pos + 4 : pos + 4 + n]))
            pos += 4 + n
        return records

    # -- snapshot ----------------------------------------------------------
    def save_secrets(self, state: TsState) -> None:
        path = os.path.join(self.data_dir, SECRETS_FILE)
        data = cbor.encode(
            {
                "hom_r": _int_bytes(state.hsk.prime_r),
                "bs_sk": _int_bytes(state.bs_keypair.sk),
                "signal_sk": _int_bytes(state.signal_sk),
            }
        )
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)

    def snapshot(self, state: TsState) -> bytes:
        with state.lock:
            doc = _state_doc(state)
            data = cbor.encode(doc)
            tmp = os.path.join(self.data_dir, SNAPSHOT_FILE + ".tmp")
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, os.path.join(self.data_dir, SNAPSHOT_FILE))
            with self._wal_lock:
                if self._wal_fh is not None:
                    self._wal_fh.close()
                    self._wal_fh = None
                open(os.path.join(self.data_dir, WAL_FILE), "wb").close()
        return data

    def restore(self, now_fn=None) -> TsState:
        snap_path = os.path.join(self.data_dir, SNAPSHOT_FILE)
        sec_path = os.path.join(self.data_dir, SECRETS_FILE)
        if not os.path.exists(snap_path) or not os.path.exists(sec_path):
            raise FileNotFoundError("no snapshot to restore")
        try:
            doc = cbor.decode(open(snap_path, "rb").read())
            sec = cbor.decode(open(sec_path, "rb").read())
            state = _state_from_doc(doc, sec, now_fn=now_fn)
        except (cbor.CBORError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"corrupt snapshot: {exc}") from None
        for rec in self._wal_records():
            _apply_wal(state, rec)
        state.wal = self.wal_append
        return state


def _state_doc(state: TsState) -> dict:
    p = state.params
    users = {}
    for uid, rec in state.users.items():
        users[uid] = {
            "xs": _int_bytes(rec.x_s),
            "xse": _int_bytes(rec.x_s_enc.value),
            "pku": rec.pk_u.encode(),
            "block": rec.block_hash,
            "status": rec.status,
            "issued": {str(e): n for e, n in sorted(rec.issued.items())},
        }
    return {
        "v": 1,
        "params": {
            "group": p.group_name,
            "ell": p.ell,
            "k": p.k,
            "q": p.rate_limit,
            "epoch_len": p.epoch_len,
            "modulus_bits": p.modulus_bits,
            "beta": p.beta,
            "aux_modulus": _int_bytes(p.aux_modulus) if p.aux_modulus else b"",
            "aux_order": _int_bytes(p.aux_order) if p.aux_order else b"",
        },
        "hom_n": _int_bytes(state.hpk.n),
        "hom_y": _int_bytes(state.hpk.y),
        "bs_pk": state.bs_keypair.pk.to_wire(),
        "users": users,
        "rlist": list(state.rlist),
        "rlist_version": state.rlist_version,
        "spent": {str(e): sorted(s) for e, s in sorted(state.spent.items())},
    }


def _state_from_doc(doc: dict, sec: dict, now_fn=None) -> TsState:
    pd = doc["params"]
    params = TandemParams(
        group_name=pd["group"],
        ell=pd["ell"],
        k=pd["k"],
        rate_limit=pd["q"],
        epoch_len=pd["epoch_len"],
        modulus_bits=pd["modulus_bits"],
        beta=pd["beta"],
        aux_modulus=_bytes_int(pd["aux_modulus"]),
        aux_order=_bytes_int(pd["aux_order"]),
    )
    group = params.group
    hpk = homenc.HomEncPubKey(n=_bytes_int(doc["hom_n"]), y=_bytes_int(doc["hom_y"]), beta=pd["beta"])
    hsk = homenc.HomEncPrivKey(prime_r=_bytes_int(sec["hom_r"]))
    bs_pk = pk_from_wire(group, doc["bs_pk"])
    bs_kp = BlindSigKeyPair(pk=bs_pk, sk=_bytes_int(sec["bs_sk"]))
    state = TsState(params, hpk, hsk, bs_kp, _bytes_int(sec["signal_sk"]), now_fn=now_fn)
    for uid, u in doc["users"].items():
        state.users[uid] = UserRecord(
            user_id=uid,
            x_s=_bytes_int(u["xs"]),
            x_s_enc=homenc.HomCiphertext(_bytes_int(u["xse"])),
            pk_u=group.decode_g1(u["pku"]),
            block_hash=u["block"],
            status=u["status"],
            issued={int(e): n for e, n in u["issued"].items()},
        )
    state.rlist = list(doc["rlist"])
    state.rlist_version = doc["rlist_version"]
    state.spent = {int(e): set(s) for e, s in doc["spent"].items()}
    return state


def _apply_wal(state: TsState, rec: list) -> None:
    op = rec[0]
    if op == "user":
        _, uid, xs, xse, pku, block = rec
        state.users[uid] = UserRecord(
            user_id=uid,
            x_s=_bytes_int(xs),
            x_s_enc=homenc.HomCiphertext(_bytes_int(xse)),
            pk_u=state.group.decode_g1(pku),
            block_hash=block,
        )
    elif op == "status":
        state.users[rec[1]].status = rec[2]
    elif op == "issued":
        state.users[rec[1]].issued[int(rec[2])] = int(rec[3])
    elif op == "rlist":
        if rec[1] not in state.rlist:
            state.rlist.append(rec[1])
            state.rlist_version += 1
    elif op == "serial":
        state.spent.setdefault(int(rec[1]), set()).add(rec[2])
    elif op == "drop_epoch":
        state.spent.pop(int(rec[1]), None)
    else:
        raise ValueError(f"unknown WAL record {op!r}")




# ===========================================================================
# TCP server
# ===========================================================================

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service = self.server.service
        self.request.settimeout(120)
        try:
            while True:
                payload = read_frame(self.request)
                if payload is None:
                    return
                reply = service.handle_frame(payload)
                self.request.sendall(reply)
        except (WireError, ConnectionError, socket.timeout):
            return


class TandemServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], service: TandemService):
        super().__init__(addr, _Handler)
        self.service = service


def serve(state: TsState, host: str, port: int, persister: Persister | None = None) -> TandemServer:
    service = TandemService(state, persister=persister)
    server = TandemServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
