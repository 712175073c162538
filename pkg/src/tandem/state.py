"""Parameters, server state, and device state for the token protocols.

All TsState mutations go through methods that hold the state lock, emit a
write-ahead record first, and only then apply the change, so a crash never
loses a spent serial or an issued-token count.  Epoch arithmetic and the
randomizer-length rule live here too.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field

from . import homenc
from .commitments import AuxGroupParams, aux_params_from_config
from .groups import get_group

STATUS_ACTIVE = "active"
STATUS_BANNED = "banned"
STATUS_BLOCKED = "blocked"


class ProtocolAbort(Exception):
    """Server-side protocol failure; code becomes the wire error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class UserAbort(Exception):
    """Device-side verification failure; the session must not continue."""


class BlockedDetected(UserAbort):
    """The user's own key appeared on the revocation list."""


@dataclass(frozen=True)
class TandemParams:
    group_name: str = "bls12_381"
    ell: int = 128
    k: int = 20
    rate_limit: int = 16
    epoch_len: int = 86400
    modulus_bits: int = 2048
    beta: int = 394
    aux_modulus: int = 0
    aux_order: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("token difficulty k must be at least 1")
        if self.ell < 8:
            raise ValueError("security parameter too small")
        if self.rate_limit < 1:
            raise ValueError("rate limit must be at least 1")
        if self.epoch_len < 1:
            raise ValueError("epoch length must be positive")
        if self.beta < homenc.min_beta(self.p_bits, self.ell, self.k):
            raise ValueError(
                f"plaintext space too small: beta must be at least "
                f"{homenc.min_beta(self.p_bits, self.ell, self.k)} for these parameters"
            )
        if self.aux_modulus and self.aux_order.bit_length() <= self.beta:
            raise ValueError("aux group order must exceed the plaintext space")

    @property
    def group(self):
        return get_group(self.group_name)

    @property
    def p(self) -> int:
        return self.group.order

    @property
    def p_bits(self) -> int:
        return self.group.order.bit_length()

    @property
    def ell_mu(self) -> int:
        return homenc.ell_mu_bits(self.p_bits, self.ell, self.k)

    @property
    def mu_bytes(self) -> int:
        return (self.ell_mu + 7) // 8

    @property
    def gamma_bytes(self) -> int:
        # genshares differences satisfy gamma < 2^(ell_mu + 1)
        return (self.ell_mu + 1 + 7) // 8

    @property
    def num_attributes(self) -> int:
        # sk_U, epoch, H(c), k witness hashes, serial number
        return self.k + 4

    def aux_group(self) -> AuxGroupParams:
        from .commitments import DEFAULT_AUX_MODULUS, DEFAULT_AUX_ORDER

        mod = self.aux_modulus or DEFAULT_AUX_MODULUS
        order = self.aux_order or DEFAULT_AUX_ORDER
        if order.bit_length() <= self.beta:
            raise ValueError("aux group order must exceed the plaintext space")
        return aux_params_from_config(mod, order)


def current_epoch(params: TandemParams, wall_time: float | None = None) -> int:
    """Epoch scalar for a wall-clock time (index mod group order)."""
    t = time.time() if wall_time is None else wall_time
    return (int(t) // params.epoch_len) % params.p


def epoch_index(params: TandemParams, wall_time: float | None = None) -> int:
    t = time.time() if wall_time is None else wall_time
    return int(t) // params.epoch_len


@dataclass
class UserRecord:
    user_id: str
    x_s: int
    x_s_enc: homenc.HomCiphertext
    pk_u: object
    block_hash: bytes
    status: str = STATUS_ACTIVE
    issued: dict = field(default_factory=dict)  # epoch index -> count


@dataclass
class KeyShareToken:
    sigma: object                 # BlindSignature
    c_tilde: object
    r_tilde: int
    attributes: list              # full vector incl. serial at the last slot
    epoch: int                    # epoch index at issue time
    c: homenc.HomCiphertext
    delta: int
    kappa: int
    witnesses: list               # k triples (c_i, mu_i, kappa_i)
    spent: bool = False
    obtained_at: float = 0.0

    @property
    def serial(self) -> int:
        return self.attributes[-1]


@dataclass
class UserState:
    user_id: str
    x_u: int
    x_s_enc: homenc.HomCiphertext
    sk_u: int
    params: TandemParams
    tokens: list = field(default_factory=list)
    pk_x: object = None  # h = g^(x_u + x_s), assembled from the server's g^x_s

    def pk_u(self):
        return self.params.group.g ** self.sk_u

    def unspent_tokens(self) -> list:
        return [t for t in self.tokens if not t.spent]


class TsState:
    """Server state: keys, user records, revocation list, spent serials.

    Mutations are linearizable under `lock`; every mutation emits a WAL
    record before it is applied in memory.
    """

    def __init__(self, params: TandemParams, hpk, hsk, bs_keypair, signal_sk: int,
                 now_fn=None, wal=None):
        self.params = params
        self.group = params.group
        self.aux = params.aux_group()
        self.hpk = hpk
        self.hsk = hsk
        self.bs_keypair = bs_keypair
        self.signal_sk = signal_sk
        self.users: dict[str, UserRecord] = {}
        self.rlist: list[bytes] = []
        self.rlist_version = 0
        self.spent: dict[int, set[bytes]] = {}
        self.lock = threading.RLock()
        self.now_fn = now_fn or time.time
        self.wal = wal

    # -- epoch helpers ------------------------------------------------------
    def epoch_now(self) -> int:
        return epoch_index(self.params, self.now_fn())

    def epoch_scalar(self, index: int | None = None) -> int:
        if index is None:
            index = self.epoch_now()
        return index % self.params.p

    # -- mutations ----------------------------------------------------------
    def _emit(self, record: list) -> None:
        if self.wal is not None:
            self.wal(record)

    def add_user(self, rec: UserRecord) -> None:
        with self.lock:
            if rec.user_id in self.users:
                raise ProtocolAbort("E_EXISTS", "user id already registered")
            xs = int(rec.x_s)
            xse = int(rec.x_s_enc.value)
            self._emit(["user", rec.user_id,
                        xs.to_bytes((xs.bit_length() + 7) // 8 or 1, "big"),
                        xse.to_bytes((xse.bit_length() + 7) // 8 or 1, "big"),
                        rec.pk_u.encode(), rec.block_hash])
            self.users[rec.user_id] = rec

    def set_status(self, user_id: str, status: str) -> None:
        with self.lock:
            rec = self.users[user_id]
            if rec.status != STATUS_ACTIVE and status == STATUS_ACTIVE:
                raise ProtocolAbort("E_STATUS", "banned/blocked are absorbing")
            self._emit(["status", user_id, status])
            rec.status = status

    def ban(self, user_id: str) -> None:
        self.set_status(user_id, STATUS_BANNED)

    def block(self, user_id: str) -> None:
        with self.lock:
            rec = self.users.get(user_id)
            if rec is None:
                raise ProtocolAbort("E_UNKNOWN", "unknown user")
            pk_bytes = rec.pk_u.encode()
            if rec.status != STATUS_BLOCKED:
                self._emit(["status", user_id, STATUS_BLOCKED])
                rec.status = STATUS_BLOCKED
            if pk_bytes not in self.rlist:
                self._emit(["rlist", pk_bytes])
                self.rlist.append(pk_bytes)
                self.rlist_version += 1

    def bump_issued(self, user_id: str, epoch: int) -> None:
        with self.lock:
            rec = self.users[user_id]
            count = rec.issued.get(epoch, 0)
            if count >= self.params.rate_limit:
                raise ProtocolAbort("E_RATE", "rate limit exceeded for this epoch")
            self._emit(["issued", user_id, epoch, count + 1])
            rec.issued[epoch] = count + 1

    def check_rate(self, user_id: str, epoch: int) -> None:
        with self.lock:
            if self.users[user_id].issued.get(epoch, 0) >= self.params.rate_limit:
                raise ProtocolAbort("E_RATE", "rate limit exceeded for this epoch")

    def spend_serial(self, epoch: int, serial: bytes, crash_hook=None) -> bool:
        """Atomically record a serial; False if it was already spent."""
        with self.lock:
            spent = self.spent.setdefault(epoch, set())
            if serial in spent:
                return False
            self._emit(["serial", epoch, serial])
            if crash_hook is not None:
                crash_hook()
            spent.add(serial)
            return True

    def drop_epoch(self, epoch: int) -> None:
        with self.lock:
            if epoch in self.spent:
                self._emit(["drop_epoch", epoch])
                del self.spent[epoch]

    def rlist_snapshot(self) -> tuple[int, list[bytes]]:
        with self.lock:
            return self.rlist_version, list(self.rlist)


def setup(params: TandemParams, rng=secrets, now_fn=None, wal=None,
          homenc_keys=None) -> TsState:
    """Fresh server state: homomorphic and blind-signature keypairs, empty
    revocation list and user table."""
    from .blindsig import bs_keygen

    params.aux_group()  # validates the aux configuration early
    if homenc_keys is None:
        hpk, hsk = homenc.keygen(params.modulus_bits, params.beta, rng=rng)
    else:
        hpk, hsk = homenc_keys
        if hpk.beta != params.beta:
            raise ValueError("homomorphic key plaintext size does not match params")
    bs_kp = bs_keygen(params.group, params.num_attributes, rng=rng)
    signal_sk = params.group.random_nonzero_scalar(rng)
    return TsState(params, hpk, hsk, bs_kp, signal_sk, now_fn=now_fn, wal=wal)
