"""BLS12-381 pairing group: G1/G2 point arithmetic, GT, and the ate pairing.

Field towers are plain tuples of gmpy2 integers operated on by module-level
functions; only the group API surfaces as classes.  Nothing here is
constant-time (documented non-goal); correctness is checked by the
bilinearity and encoding tests.

Encodings follow the common 48/96-byte compressed form (flag bits 0x80
compression, 0x40 infinity, 0x20 lexicographically-larger y); GT serializes
as the twelve 48-byte base-field limbs.  Decoding rejects off-curve points,
non-canonical field limbs, and points outside the prime-order subgroup.
"""

from __future__ import annotations

import hashlib

from gmpy2 import mpz, invert, legendre

# Base field, group order, curve parameter (negative), cofactors.
Q = mpz(0x1A0111EA397FE69A4B1BA7B6434BACD764774B84F38512BF6730D2A0F6B0F6241EABFFFEB153FFFFB9FEFFFFFFFFAAAB)
R = mpz(0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001)
BLS_X = -0xD201000000010000
H1 = mpz(0x396C8C005555E1568C00AAAB0000AAAB)

_B = mpz(4)

G1_GEN_AFFINE = (
    mpz(0x17F1D3A73197D7942695638C4FA9AC0FC3688C4F9774B905A14E3A3F171BAC586C55E83FF97A1AEFFB3AF00ADB22C6BB),
    mpz(0x08B3F481E3AAA0F1A09E30ED741D8AE4FCF5E095D5D00AF600DB18CB2C04B3EDD03CC744A2888AE40CAA232946C5E7E1),
)
G2_GEN_AFFINE = (
    (
        mpz(0x024AA2B2F08F0A91260805272DC51051C6E47AD4FA403B02B4510B647AE3D1770BAC0326A805BBEFD48056C8C121BDB8),
        mpz(0x13E02B6052719F607DACD3A088274F65596BD0D09920B61AB5DA61BBDC7F5049334CF11213945D57E5AC7D055D042B7E),
    ),
    (
        mpz(0x0CE5D527727D6E118CC9CDC6DA2E351AADFD9BAA8CBDD3A76D429A695160D12C923AC9CC3BACA289E193548608B82801),
        mpz(0x0606C4A02EA734CC32ACD2B02BC28B99CB3E287E85A763AF267492AB572E99AB3F370D275CEC1DA1AAA9075FF05F79BE),
    ),
)

# ---------------------------------------------------------------------------
# Fq2 = Fq[u] / (u^2 + 1), elements are (c0, c1)

FQ2_ZERO = (mpz(0), mpz(0))
FQ2_ONE = (mpz(1), mpz(0))


def fq2_add(a, b):
    return ((a[0] + b[0]) % Q, (a[1] + b[1]) % Q)


def fq2_sub(a, b):
    return ((a[0] - b[0]) % Q, (a[1] - b[1]) % Q)


def fq2_neg(a):
    return ((-a[0]) % Q, (-a[1]) % Q)


def fq2_mul(a, b):
    t0 = a[0] * b[0]
    t1 = a[1] * b[1]
    return ((t0 - t1) % Q, ((a[0] + a[1]) * (b[0] + b[1]) - t0 - t1) % Q)


def fq2_sqr(a):
    return ((a[0] + a[1]) * (a[0] - a[1]) % Q, (a[0] * a[1] * 2) % Q)


def fq2_scalar(a, k):
    return ((a[0] * k) % Q, (a[1] * k) % Q)


def fq2_mul_xi(a):
    # multiply by xi = 1 + u
    return ((a[0] - a[1]) % Q, (a[0] + a[1]) % Q)


def fq2_conj(a):
    return (a[0], (-a[1]) % Q)


def fq2_inv(a):
    d = invert((a[0] * a[0] + a[1] * a[1]) % Q, Q)
    return ((a[0] * d) % Q, (-a[1] * d) % Q)


def fq2_pow(a, e):
    result = FQ2_ONE
    base = a
    e = int(e)
    while e:
        if e & 1:
            result = fq2_mul(result, base)
        base = fq2_sqr(base)
        e >>= 1
    return result


XI = (mpz(1), mpz(1))

# ---------------------------------------------------------------------------
# Fq6 = Fq2[v] / (v^3 - xi), elements are (c0, c1, c2)

FQ6_ZERO = (FQ2_ZERO, FQ2_ZERO, FQ2_ZERO)
FQ6_ONE = (FQ2_ONE, FQ2_ZERO, FQ2_ZERO)


def fq6_add(a, b):
    return (fq2_add(a[0], b[0]), fq2_add(a[1], b[1]), fq2_add(a[2], b[2]))


def fq6_sub(a, b):
    return (fq2_sub(a[0], b[0]), fq2_sub(a[1], b[1]), fq2_sub(a[2], b[2]))


def fq6_neg(a):
    return (fq2_neg(a[0]), fq2_neg(a[1]), fq2_neg(a[2]))


def fq6_mul(a, b):
    a0, a1, a2 = a
    b0, b1, b2 = b
    t0 = fq2_mul(a0, b0)
    t1 = fq2_mul(a1, b1)
    t2 = fq2_mul(a2, b2)
    c0 = fq2_add(t0, fq2_mul_xi(fq2_sub(fq2_mul(fq2_add(a1, a2), fq2_add(b1, b2)), fq2_add(t1, t2))))
    c1 = fq2_add(fq2_sub(fq2_mul(fq2_add(a0, a1), fq2_add(b0, b1)), fq2_add(t0, t1)), fq2_mul_xi(t2))
    c2 = fq2_add(fq2_sub(fq2_mul(fq2_add(a0, a2), fq2_add(b0, b2)), fq2_add(t0, t2)), t1)
    return (c0, c1, c2)


def fq6_sqr(a):
    return fq6_mul(a, a)


def fq6_mul_v(a):
    return (fq2_mul_xi(a[2]), a[0], a[1])


def fq6_inv(a):
    a0, a1, a2 = a
    c0 = fq2_sub(fq2_sqr(a0), fq2_mul_xi(fq2_mul(a1, a2)))
    c1 = fq2_sub(fq2_mul_xi(fq2_sqr(a2)), fq2_mul(a0, a1))
    c2 = fq2_sub(fq2_sqr(a1), fq2_mul(a0, a2))
    t = fq2_add(
        fq2_mul(a0, c0),
        fq2_mul_xi(fq2_add(fq2_mul(a1, c2), fq2_mul(a2, c1))),
    )
    tinv = fq2_inv(t)
    return (fq2_mul(c0, tinv), fq2_mul(c1, tinv), fq2_mul(c2, tinv))


# ---------------------------------------------------------------------------
# Fq12 = Fq6[w] / (w^2 - v), elements are (d0, d1)

FQ12_ONE = (FQ6_ONE, FQ6_ZERO)


def fq12_mul(a, b):
    t0 = fq6_mul(a[0], b[0])
    t1 = fq6_mul(a[1], b[1])
    c0 = fq6_add(t0, fq6_mul_v(t1))
    c1 = fq6_sub(fq6_mul(fq6_add(a[0], a[1]), fq6_add(b[0], b[1])), fq6_add(t0, t1))
    return (c0, c1)


def fq12_sqr(a):
    t = fq6_mul(a[0], a[1])
    c0 = fq6_sub(
        fq6_mul(fq6_add(a[0], a[1]), fq6_add(a[0], fq6_mul_v(a[1]))),
        fq6_add(t, fq6_mul_v(t)),
    )
    return (c0, fq6_add(t, t))


def fq12_conj(a):
    return (a[0], fq6_neg(a[1]))


def fq12_inv(a):
    t = fq6_inv(fq6_sub(fq6_sqr(a[0]), fq6_mul_v(fq6_sqr(a[1]))))
    return (fq6_mul(a[0], t), fq6_neg(fq6_mul(a[1], t)))


def fq12_pow(a, e):
    e = int(e)
    if e < 0:
        a = fq12_inv(a)
        e = -e
    if e == 0:
        return FQ12_ONE
    # 4-bit window
    table = [FQ12_ONE, a]
    for _ in range(14):
        table.append(fq12_mul(table[-1], a))
    result = None
    nibbles = []
    while e:
        nibbles.append(e & 0xF)
        e >>= 4
    for nib in reversed(nibbles):
        if result is None:
            result = table[nib]
            continue
        result = fq12_sqr(fq12_sqr(fq12_sqr(fq12_sqr(result))))
        if nib:
            result = fq12_mul(result, table[nib])
    return result


# Frobenius coefficients, computed once from xi.
_G1C = fq2_pow(XI, (Q - 1) // 6)
_G2C = fq2_pow(XI, (Q - 1) // 3)
_G3C = fq2_pow(XI, (Q - 1) // 2)
_G4C = fq2_pow(XI, 2 * (Q - 1) // 3)
_G5C = fq2_pow(XI, 5 * (Q - 1) // 6)


def fq12_frobenius(a):
    (c0, c1, c2), (c3, c4, c5) = a
    return (
        (fq2_conj(c0), fq2_mul(fq2_conj(c1), _G2C), fq2_mul(fq2_conj(c2), _G4C)),
        (fq2_mul(fq2_conj(c3), _G1C), fq2_mul(fq2_conj(c4), _G3C), fq2_mul(fq2_conj(c5), _G5C)),
    )


# ---------------------------------------------------------------------------
# Square roots

def fq_sqrt(a):
    a = a % Q
    y = pow(a, (Q + 1) // 4, Q)
    if y * y % Q == a:
        return y
    return None


def fq2_sqrt(a):
    if a == FQ2_ZERO:
        return FQ2_ZERO
    a0, a1 = a
    if a1 == 0:
        y = fq_sqrt(a0)
        if y is not None:
            return (y, mpz(0))
        # sqrt lives along u: (t*u)^2 = -t^2
        t = fq_sqrt((-a0) % Q)
        if t is None:
            return None
        return (mpz(0), t)
    n = (a0 * a0 + a1 * a1) % Q
    s = fq_sqrt(n)
    if s is None:
        return None
    for sign in (s, (-s) % Q):
        z2 = (a0 + sign) * invert(2, Q) % Q
        z = fq_sqrt(z2)
        if z is None or z == 0:
            continue
        t = a1 * invert(2 * z, Q) % Q
        cand = (z, t)
        if fq2_sqr(cand) == (a0 % Q, a1 % Q):
            return cand
    return None


# ---------------------------------------------------------------------------
# Point arithmetic, generic over the coordinate field

def _jac_double(P, sqr, mul, add, sub, scalar):
    X1, Y1, Z1 = P
    A = sqr(X1)
    B = sqr(Y1)
    C = sqr(B)
    D = scalar(sub(sub(sqr(add(X1, B)), A), C), 2)
    E = scalar(A, 3)
    F = sqr(E)
    X3 = sub(F, scalar(D, 2))
    Y3 = sub(mul(E, sub(D, X3)), scalar(C, 8))
    Z3 = scalar(mul(Y1, Z1), 2)
    return (X3, Y3, Z3)


def _jac_add(P, Q_, is_zero, sqr, mul, add, sub, scalar, neg):
    if is_zero(P[2]):
        return Q_
    if is_zero(Q_[2]):
        return P
    X1, Y1, Z1 = P
    X2, Y2, Z2 = Q_
    Z1Z1 = sqr(Z1)
    Z2Z2 = sqr(Z2)
    U1 = mul(X1, Z2Z2)
    U2 = mul(X2, Z1Z1)
    S1 = mul(mul(Y1, Z2), Z2Z2)
    S2 = mul(mul(Y2, Z1), Z1Z1)
    if U1 == U2:
        if S1 != S2:
            return None  # point at infinity
        return _jac_double(P, sqr, mul, add, sub, scalar)
    H = sub(U2, U1)
    I = sqr(scalar(H, 2))
    J = mul(H, I)
    rr = scalar(sub(S2, S1), 2)
    V = mul(U1, I)
    X3 = sub(sub(sqr(rr), J), scalar(V, 2))
    Y3 = sub(mul(rr, sub(V, X3)), scalar(mul(S1, J), 2))
    Z3 = mul(sub(sub(sqr(add(Z1, Z2)), Z1Z1), Z2Z2), H)
    return (X3, Y3, Z3)


# Fq flavour
def _fq_sqr(a):
    return a * a % Q


def _fq_mul(a, b):
    return a * b % Q


def _fq_add(a, b):
    return (a + b) % Q


def _fq_sub(a, b):
    return (a - b) % Q


def _fq_scalar(a, k):
    return a * k % Q


def _fq_neg(a):
    return (-a) % Q


def _fq_is_zero(a):
    return a == 0


def _fq2_is_zero(a):
    return a[0] == 0 and a[1] == 0


class G1Point:
    """Point on E(Fq): y^2 = x^3 + 4, Jacobian coordinates."""

    __slots__ = ("x", "y", "z")

    def __init__(self, x, y, z):
        self.x = x
        self.y = y
        self.z = z

    @classmethod
    def identity(cls):
        return cls(mpz(1), mpz(1), mpz(0))

    @classmethod
    def from_affine(cls, x, y):
        return cls(mpz(x), mpz(y), mpz(1))

    def is_identity(self):
        return self.z == 0

    def affine(self):
        if self.z == 0:
            return None
        zinv = invert(self.z, Q)
        zinv2 = zinv * zinv % Q
        return (self.x * zinv2 % Q, self.y * zinv2 * zinv % Q)

    def __mul__(self, other):
        if not isinstance(other, G1Point):
            return NotImplemented
        if self.z == 0:
            return other
        if other.z == 0:
            return self
        res = _jac_add(
            (self.x, self.y, self.z), (other.x, other.y, other.z),
            _fq_is_zero, _fq_sqr, _fq_mul, _fq_add, _fq_sub, _fq_scalar, _fq_neg,
        )
        if res is None:
            return G1Point.identity()
        return G1Point(*res)

    def _double(self):
        if self.z == 0:
            return self
        return G1Point(*_jac_double((self.x, self.y, self.z), _fq_sqr, _fq_mul, _fq_add, _fq_sub, _fq_scalar))

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            return (self ** (-k)).inv()
        if k == 0 or self.z == 0:
            return G1Point.identity()
        table = [G1Point.identity(), self]
        for _ in range(14):
            table.append(table[-1] * self)
        nibbles = []
        while k:
            nibbles.append(k & 0xF)
            k >>= 4
        acc = table[nibbles[-1]]
        for nib in reversed(nibbles[:-1]):
            acc = acc._double()._double()._double()._double()
            if nib:
                acc = acc * table[nib]
        return acc

    def inv(self):
        if self.z == 0:
            return self
        return G1Point(self.x, (-self.y) % Q, self.z)

    def __eq__(self, other):
        if not isinstance(other, G1Point):
            return NotImplemented
        if self.z == 0 or other.z == 0:
            return self.z == 0 and other.z == 0
        z1s = self.z * self.z % Q
        z2s = other.z * other.z % Q
        if self.x * z2s % Q != other.x * z1s % Q:
            return False
        return self.y * z2s * other.z % Q == other.y * z1s * self.z % Q

    def __hash__(self):
        return hash(self.encode())

    def encode(self) -> bytes:
        if self.z == 0:
            return bytes([0xC0]) + bytes(47)
        x, y = self.affine()
        flags = 0x80
        if y > Q - y:
            flags |= 0x20
        raw = bytearray(int(x).to_bytes(48, "big"))
        raw[0] |= flags
        return bytes(raw)

    def __repr__(self):
        return f"G1Point({self.encode().hex()[:18]}…)"


G1_GEN = G1Point.from_affine(*G1_GEN_AFFINE)


def g1_decode(data: bytes) -> G1Point:
    if len(data) != 48:
        raise ValueError("G1 encoding must be 48 bytes")
    flags = data[0] & 0xE0
    if not (flags & 0x80):
        raise ValueError("uncompressed G1 encodings rejected")
    if flags & 0x40:
        if (data[0] & 0x1F) or any(data[1:]):
            raise ValueError("non-canonical identity encoding")
        return G1Point.identity()
    x = mpz(int.from_bytes(bytes([data[0] & 0x1F]) + data[1:], "big"))
    if x >= Q:
        raise ValueError("x coordinate out of range")
    y = fq_sqrt((x * x % Q * x + _B) % Q)
    if y is None:
        raise ValueError("point not on curve")
    if bool(flags & 0x20) != (y > Q - y):
        y = (Q - y) % Q
    P = G1Point.from_affine(x, y)
    if not (P ** R).is_identity():
        raise ValueError("point not in prime-order subgroup")
    return P


class G2Point:
    """Point on the twist E'(Fq2): y^2 = x^3 + 4(1+u), Jacobian coordinates."""

    __slots__ = ("x", "y", "z")

    _B2 = fq2_scalar(XI, 4)

    def __init__(self, x, y, z):
        self.x = x
        self.y = y
        self.z = z

    @classmethod
    def identity(cls):
        return cls(FQ2_ONE, FQ2_ONE, FQ2_ZERO)

    @classmethod
    def from_affine(cls, x, y):
        return cls(x, y, FQ2_ONE)

    def is_identity(self):
        return _fq2_is_zero(self.z)

    def affine(self):
        if self.is_identity():
            return None
        zinv = fq2_inv(self.z)
        zinv2 = fq2_sqr(zinv)
        return (fq2_mul(self.x, zinv2), fq2_mul(fq2_mul(self.y, zinv2), zinv))

    def __mul__(self, other):
        if not isinstance(other, G2Point):
            return NotImplemented
        if self.is_identity():
            return other
        if other.is_identity():
            return self
        res = _jac_add(
            (self.x, self.y, self.z), (other.x, other.y, other.z),
            _fq2_is_zero, fq2_sqr, fq2_mul, fq2_add, fq2_sub, fq2_scalar, fq2_neg,
        )
        if res is None:
            return G2Point.identity()
        return G2Point(*res)

    def _double(self):
        if self.is_identity():
            return self
        return G2Point(*_jac_double((self.x, self.y, self.z), fq2_sqr, fq2_mul, fq2_add, fq2_sub, fq2_scalar))

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            return (self ** (-k)).inv()
        acc = G2Point.identity()
        if k == 0 or self.is_identity():
            return acc
        for bit in bin(k)[2:]:
            acc = acc._double()
            if bit == "1":
                acc = acc * self
        return acc

    def inv(self):
        if self.is_identity():
            return self
        return G2Point(self.x, fq2_neg(self.y), self.z)

    def __eq__(self, other):
        if not isinstance(other, G2Point):
            return NotImplemented
        if self.is_identity() or other.is_identity():
            return self.is_identity() and other.is_identity()
        z1s = fq2_sqr(self.z)
        z2s = fq2_sqr(other.z)
        if fq2_mul(self.x, z2s) != fq2_mul(other.x, z1s):
            return False
        return fq2_mul(fq2_mul(self.y, z2s), other.z) == fq2_mul(fq2_mul(other.y, z1s), self.z)

    def __hash__(self):
        return hash(self.encode())

    def encode(self) -> bytes:
        if self.is_identity():
            return bytes([0xC0]) + bytes(95)
        (x0, x1), (y0, y1) = self.affine()
        flags = 0x80
        y_lex = (int(y1) << 381) | int(y0)
        ny_lex = (int((-y1) % Q) << 381) | int((-y0) % Q)
        if y_lex > ny_lex:
            flags |= 0x20
        raw = bytearray(int(x1).to_bytes(48, "big") + int(x0).to_bytes(48, "big"))
        raw[0] |= flags
        return bytes(raw)

    def __repr__(self):
        return f"G2Point({self.encode().hex()[:18]}…)"


G2_GEN = G2Point.from_affine(*G2_GEN_AFFINE)


def g2_decode(data: bytes) -> G2Point:
    if len(data) != 96:
        raise ValueError("G2 encoding must be 96 bytes")
    flags = data[0] & 0xE0
    if not (flags & 0x80):
        raise ValueError("uncompressed G2 encodings rejected")
    if flags & 0x40:
        if (data[0] & 0x1F) or any(data[1:]):
            raise ValueError("non-canonical identity encoding")
        return G2Point.identity()
    x1 = mpz(int.from_bytes(bytes([data[0] & 0x1F]) + data[1:48], "big"))
    x0 = mpz(int.from_bytes(data[48:], "big"))
    if x0 >= Q or x1 >= Q:
        raise ValueError("x coordinate out of range")
    x = (x0, x1)
    y = fq2_sqrt(fq2_add(fq2_mul(fq2_sqr(x), x), G2Point._B2))
    if y is None:
        raise ValueError("point not on twist")
    y_lex = (int(y[1]) << 381) | int(y[0])
    ny = fq2_neg(y)
    ny_lex = (int(ny[1]) << 381) | int(ny[0])
    if bool(flags & 0x20) != (y_lex > ny_lex):
        y = ny
    P = G2Point.from_affine(x, y)
    if not (P ** R).is_identity():
        raise ValueError("point not in prime-order subgroup")
    return P


class GTElement:
    """Element of the order-r subgroup of Fq12*."""

    __slots__ = ("val",)

    def __init__(self, val):
        self.val = val

    @classmethod
    def one(cls):
        return cls(FQ12_ONE)

    def is_identity(self):
        return self.val == FQ12_ONE

    def __mul__(self, other):
        if not isinstance(other, GTElement):
            return NotImplemented
        return GTElement(fq12_mul(self.val, other.val))

    def __pow__(self, k):
        return GTElement(fq12_pow(self.val, int(k)))

    def inv(self):
        # elements of the cyclotomic subgroup satisfy conj(a) = a^-1
        return GTElement(fq12_conj(self.val))

    def __eq__(self, other):
        if not isinstance(other, GTElement):
            return NotImplemented
        return self.val == other.val

    def __hash__(self):
        return hash(self.encode())

    def encode(self) -> bytes:
        out = bytearray()
        for six in self.val:
            for two in six:
                for limb in two:
                    out += int(limb).to_bytes(48, "big")
        return bytes(out)

    def __repr__(self):
        return f"GTElement({self.encode().hex()[:18]}…)"


def gt_decode(data: bytes) -> GTElement:
    if len(data) != 576:
        raise ValueError("GT encoding must be 576 bytes")
    limbs = []
    for i in range(12):
        v = mpz(int.from_bytes(data[48 * i : 48 * (i + 1)], "big"))
        if v >= Q:
            raise ValueError("field limb out of range")
        limbs.append(v)
    val = (
        ((limbs[0], limbs[1]), (limbs[2], limbs[3]), (limbs[4], limbs[5])),
        ((limbs[6], limbs[7]), (limbs[8], limbs[9]), (limbs[10], limbs[11])),
    )
    el = GTElement(val)
    if fq12_pow(val, R) != FQ12_ONE:
        raise ValueError("element not in prime-order subgroup of GT")
    return el


# ---------------------------------------------------------------------------
# Ate pairing

# w^-1 = v^2 * w / xi and w^-3 = v * w / xi were used to push the line
# function into the sparse form  xi*yP + ((lam*xT - yT)*v + (-lam*xP)*v^2)*w,
# where the global xi factor is killed by the final exponentiation.

def _line(yp_xi, xp, T, Q2, doubling):
    xt, yt = T
    if doubling:
        lam = fq2_mul(fq2_scalar(fq2_sqr(xt), 3), fq2_inv(fq2_scalar(yt, 2)))
    else:
        xq, yq = Q2
        lam = fq2_mul(fq2_sub(yt, yq), fq2_inv(fq2_sub(xt, xq)))
    c11 = fq2_sub(fq2_mul(lam, xt), yt)
    c12 = fq2_scalar(lam, -xp)
    line = ((yp_xi, FQ2_ZERO, FQ2_ZERO), (FQ2_ZERO, c11, c12))
    # new T
    if doubling:
        x3 = fq2_sub(fq2_sqr(lam), fq2_scalar(xt, 2))
    else:
        x3 = fq2_sub(fq2_sqr(lam), fq2_add(xt, Q2[0]))
    y3 = fq2_sub(fq2_mul(lam, fq2_sub(xt, x3)), yt)
    return line, (x3, y3)


def miller_loop(P: G1Point, Q2: G2Point):
    """f_{|x|,Q}(P) conjugated for the negative BLS parameter; no final exp."""
    if P.is_identity() or Q2.is_identity():
        return FQ12_ONE
    xp, yp = P.affine()
    qa = Q2.affine()
    yp_xi = fq2_scalar(XI, yp)
    t = -BLS_X
    bits = bin(t)[3:]
    T = qa
    f = FQ12_ONE
    for bit in bits:
        line, T = _line(yp_xi, xp, T, qa, True)
        f = fq12_mul(fq12_sqr(f), line)
        if bit == "1":
            line, T = _line(yp_xi, xp, T, qa, False)
            f = fq12_mul(f, line)
    return fq12_conj(f)


def _pow_pos(f, e):
    # square-and-multiply for small positive exponents (used with |x|, |x|+1)
    result = None
    for bit in bin(e)[2:]:
        result = fq12_sqr(result) if result is not None else f
        if bit == "1" and result is not f:
            result = fq12_mul(result, f)
    return result


def final_exponentiation(f) -> GTElement:
    """Computes the cubed reduced pairing f^(3*(q^12-1)/r).

    The cube of a pairing is itself a bilinear non-degenerate pairing
    (3 does not divide r); cubing admits the decomposition
    3*(q^4-q^2+1)/r = (x-1)^2 (x+q) (x^2+q^2-1) + 3, which needs only five
    64-bit exponentiations instead of one 1269-bit one.
    """
    # easy part: f^((q^6-1)(q^2+1)); afterwards conj(f) = f^-1
    f = fq12_mul(fq12_conj(f), fq12_inv(f))
    f = fq12_mul(fq12_frobenius(fq12_frobenius(f)), f)
    t = -BLS_X
    # f^((x-1)^2): x-1 = -(t+1), so each step is conj(f^(t+1))
    t2 = fq12_conj(_pow_pos(fq12_conj(_pow_pos(f, t + 1)), t + 1))
    # ^(x+q)
    t3 = fq12_mul(fq12_conj(_pow_pos(t2, t)), fq12_frobenius(t2))
    # ^(x^2+q^2-1)
    t4 = fq12_mul(
        fq12_mul(_pow_pos(_pow_pos(t3, t), t), fq12_frobenius(fq12_frobenius(t3))),
        fq12_conj(t3),
    )
    return GTElement(fq12_mul(t4, fq12_mul(fq12_sqr(f), f)))


def pairing(P: G1Point, Q2: G2Point) -> GTElement:
    return final_exponentiation(miller_loop(P, Q2))


def pairing_product(pairs) -> GTElement:
    """Product of pairings sharing one final exponentiation."""
    acc = FQ12_ONE
    for P, Q2 in pairs:
        acc = fq12_mul(acc, miller_loop(P, Q2))
    return final_exponentiation(acc)


# ---------------------------------------------------------------------------
# Hashing to G1 (try-and-increment plus cofactor clearing)

def hash_to_g1(data: bytes) -> G1Point:
    ctr = 0
    while True:
        digest = hashlib.shake_256(data + ctr.to_bytes(4, "big")).digest(64)
        x = mpz(int.from_bytes(digest[:48], "big") % Q)
        rhs = (x * x % Q * x + _B) % Q
        if rhs != 0 and legendre(rhs, Q) == 1:
            y = fq_sqrt(rhs)
            if digest[63] & 1:
                y = (Q - y) % Q
            P = G1Point.from_affine(x, y) ** H1
            if not P.is_identity():
                return P
        ctr += 1
