"""Additively homomorphic encryption with power-residue-symbol decryption.

Keys are (n = r*s, y, beta) with r = s = 1 (mod 2^beta) and y a
quadratic non-residue modulo both primes (Jacobi symbol +1 modulo n).
Encryption of m in [0, 2^beta) with a unit randomizer kappa is
c = y^m * kappa^(2^beta) mod n; multiplying ciphertexts adds plaintexts
modulo 2^beta.

Decryption recovers m digit by digit from the 2^beta-th power residue
symbol: D = y^((r-1)/2^beta) generates a cyclic group of order 2^beta
modulo r and c^((r-1)/2^beta) = D^m, so m is a discrete log in a 2-group,
taken `table_width` bits at a time against a small precomputed table.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

from gmpy2 import mpz, gcd, invert, is_prime, legendre, powmod


class DecryptionError(ValueError):
    pass


@dataclass(frozen=True)
class HomEncPubKey:
    n: int
    y: int
    beta: int

    @property
    def ciphertext_bytes(self) -> int:
        return (int(self.n).bit_length() + 7) // 8

    @property
    def plaintext_limit(self) -> int:
        return 1 << self.beta


@dataclass
class HomEncPrivKey:
    prime_r: int
    table_width: int = 8
    _cache: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class HomCiphertext:
    value: int

    def __mul__(self, other):
        raise TypeError("use add_ciphertexts(pk, c1, c2)")


def ell_mu_bits(p_bits: int, ell: int, k: int) -> int:
    """Randomizer bit length that statistically hides the server share:
    ceil(log2 p) + ell + ceil(log2(k+1)) + 2."""
    if k < 1:
        raise ValueError("k must be at least 1")
    log_k1 = (k + 1).bit_length() - (1 if (k + 1) & k == 0 else 0)
    return p_bits + ell + log_k1 + 2


def min_beta(p_bits: int, ell: int, k: int) -> int:
    """Smallest plaintext bit size with 2^beta > 2^(ell_mu + 2)."""
    return ell_mu_bits(p_bits, ell, k) + 3


def _sample_prime(half_bits: int, beta: int, rng) -> int:
    top_bits = half_bits - beta
    if top_bits < 8:
        raise ValueError("modulus too small for this plaintext size")
    while True:
        # top two bits set so the two-prime product has exactly 2*half_bits bits
        t = (0b11 << (top_bits - 2)) | rng.randbits(top_bits - 2)
        cand = (mpz(t) << beta) + 1
        if cand.bit_length() != half_bits:
            continue
        if is_prime(cand, 64):
            return int(cand)


def keygen(modulus_bits: int, beta: int, rng=secrets) -> tuple[HomEncPubKey, HomEncPrivKey]:
    if beta < 2:
        raise ValueError("beta must be at least 2")
    if modulus_bits < 2 * beta + 64:
        raise ValueError("modulus_bits must be at least 2*beta + 64")
    r = _sample_prime(modulus_bits // 2, beta, rng)
    while True:
        s = _sample_prime(modulus_bits - modulus_bits // 2, beta, rng)
        if s != r:
            break
    return keygen_from_primes(r, s, beta, rng=rng)


def keygen_from_primes(r: int, s: int, beta: int, y: int | None = None, rng=secrets) -> tuple[HomEncPubKey, HomEncPrivKey]:
    if (r - 1) % (1 << beta) or (s - 1) % (1 << beta):
        raise ValueError("primes must be 1 mod 2^beta")
    n = r * s
    if (1 << beta) >= n:
        raise ValueError("plaintext space must be smaller than the modulus")
    if y is None:
        while True:
            cand = 2 + rng.randbelow(n - 2)
            if gcd(cand, n) != 1:
                continue
            if legendre(cand, r) == -1 and legendre(cand, s) == -1:
                y = int(cand)
                break
    else:
        if legendre(y, r) != -1 or legendre(y, s) != -1:
            raise ValueError("y must be a non-residue modulo both primes")
    return HomEncPubKey(n=n, y=y, beta=beta), HomEncPrivKey(prime_r=r)


def random_unit(pk: HomEncPubKey, rng=secrets) -> int:
    while True:
        k = 1 + rng.randbelow(pk.n - 1)
        if gcd(k, pk.n) == 1:
            return k


def encrypt(pk: HomEncPubKey, m: int, kappa: int) -> HomCiphertext:
    m = int(m)
    if m < 0 or m >= pk.plaintext_limit:
        raise ValueError("plaintext out of range")
    if gcd(kappa, pk.n) != 1:
        raise ValueError("randomizer must be a unit")
    n = mpz(pk.n)
    c = powmod(pk.y, m, n) * powmod(kappa, mpz(1) << pk.beta, n) % n
    return HomCiphertext(int(c))


def add_ciphertexts(pk: HomEncPubKey, c1: HomCiphertext, c2: HomCiphertext) -> HomCiphertext:
    return HomCiphertext(c1.value * c2.value % pk.n)


def _decrypt_state(sk: HomEncPrivKey, pk: HomEncPubKey):
    key = (pk.y, pk.beta, sk.table_width)
    state = sk._cache.get(key)
    if state is None:
        r = mpz(sk.prime_r)
        beta = pk.beta
        w = min(sk.table_width, beta)
        exp = (r - 1) >> beta
        d_gen = powmod(pk.y, exp, r)
        d_inv = invert(d_gen, r)
        e_gen = d_gen
        for _ in range(beta - w):
            e_gen = e_gen * e_gen % r
        table = {}
        acc = mpz(1)
        for d in range(1 << w):
            table[int(acc)] = d
            acc = acc * e_gen % r
        state = (r, exp, d_inv, table, w)
        sk._cache[key] = state
    return state


def decrypt(sk: HomEncPrivKey, pk: HomEncPubKey, c: HomCiphertext) -> int:
    if gcd(c.value, pk.n) != 1:
        raise DecryptionError("ciphertext is not a unit modulo n")
    r, exp, d_inv, table, w = _decrypt_state(sk, pk)
    beta = pk.beta
    cw = powmod(c.value, exp, r)
    dinv_pow = d_inv  # d_inv^(2^(w*t)), updated per digit
    m = 0
    t = 0
    while w * t < beta:
        rem = beta - w * t
        cur = min(w, rem)
        z = cw
        for _ in range(rem - cur):
            z = z * z % r
        val = table.get(int(z))
        if val is None:
            raise DecryptionError("residue symbol outside decryption table")
        digit = val >> (w - cur)
        if digit:
            m |= digit << (w * t)
            cw = cw * powmod(dinv_pow, digit, r) % r
        if w * (t + 1) < beta:
            for _ in range(w):
                dinv_pow = dinv_pow * dinv_pow % r
        t += 1
    return m
