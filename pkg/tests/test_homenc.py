import secrets

import pytest
from gmpy2 import gcd, powmod

from tandem import homenc
from tandem.adversary import SeededRng


@pytest.fixture(scope="module")
def tiny():
    # r=17, s=97, beta=4: both primes are 1 mod 16; y found by rejection
    return homenc.keygen_from_primes(17, 97, 4, rng=SeededRng(9))


def brute_force_decrypt(pk, c):
    """Independent oracle: try every plaintext with every unit randomizer."""
    hits = set()
    for m in range(pk.plaintext_limit):
        for kappa in range(1, pk.n):
            if gcd(kappa, pk.n) != 1:
                continue
            if homenc.encrypt(pk, m, kappa) == c:
                hits.add(m)
                break
    assert len(hits) == 1, "ciphertext must determine the plaintext"
    return hits.pop()


def symbol_decrypt(pk, sk, c):
    """Second oracle straight from the defining residue-symbol equation."""
    r = sk.prime_r
    exp = (r - 1) >> pk.beta
    want = powmod(c.value, exp, r)
    base = powmod(pk.y, exp, r)
    for m in range(pk.plaintext_limit):
        if powmod(base, m, r) == want:
            return m
    raise AssertionError("no plaintext satisfies the symbol equation")


def test_tiny_key_structure(tiny):
    pk, sk = tiny
    assert pk.n == 17 * 97
    assert (17 - 1) % 16 == 0 and (97 - 1) % 16 == 0
    from gmpy2 import legendre, jacobi

    assert jacobi(pk.y, pk.n) == 1
    assert legendre(pk.y, 17) == -1 and legendre(pk.y, 97) == -1


def test_trivial_cases(tiny):
    pk, sk = tiny
    assert homenc.encrypt(pk, 0, 1).value == 1
    assert homenc.encrypt(pk, 1, 1).value == pk.y % pk.n
    assert homenc.decrypt(sk, pk, homenc.HomCiphertext(1)) == 0
    assert homenc.decrypt(sk, pk, homenc.HomCiphertext(pk.y % pk.n)) == 1


def test_decrypt_matches_brute_force_oracle(tiny):
    pk, sk = tiny
    rng = SeededRng(11)
    for m in range(pk.plaintext_limit):
        c = homenc.encrypt(pk, m, homenc.random_unit(pk, rng))
        assert homenc.decrypt(sk, pk, c) == m
        assert brute_force_decrypt(pk, c) == m
        assert symbol_decrypt(pk, sk, c) == m


def test_randomizer_only_rerandomization(tiny):
    pk, sk = tiny
    rng = SeededRng(12)
    c1 = homenc.encrypt(pk, 7, homenc.random_unit(pk, rng))
    c2 = homenc.encrypt(pk, 7, homenc.random_unit(pk, rng))
    assert homenc.decrypt(sk, pk, c1) == homenc.decrypt(sk, pk, c2) == 7


def test_homomorphism_and_wraparound(tiny):
    pk, sk = tiny
    rng = SeededRng(13)
    enc = lambda m: homenc.encrypt(pk, m, homenc.random_unit(pk, rng))
    hi = enc(pk.plaintext_limit - 1)
    one = enc(1)
    assert homenc.decrypt(sk, pk, homenc.add_ciphertexts(pk, hi, one)) == 0
    c = enc(9)
    zero = enc(0)
    assert homenc.decrypt(sk, pk, homenc.add_ciphertexts(pk, c, zero)) == 9


def test_small_key_roundtrips(small_homenc):
    pk, sk = small_homenc
    rng = SeededRng(14)
    for _ in range(200):
        m1 = rng.randbelow(pk.plaintext_limit)
        m2 = rng.randbelow(pk.plaintext_limit)
        c1 = homenc.encrypt(pk, m1, homenc.random_unit(pk, rng))
        c2 = homenc.encrypt(pk, m2, homenc.random_unit(pk, rng))
        assert homenc.decrypt(sk, pk, c1) == m1
        total = homenc.decrypt(sk, pk, homenc.add_ciphertexts(pk, c1, c2))
        assert total == (m1 + m2) % pk.plaintext_limit


def test_keygen_parameter_checks():
    with pytest.raises(ValueError):
        homenc.keygen(128, 1)
    with pytest.raises(ValueError):
        homenc.keygen(100, 64)  # modulus below 2*beta + 64
    with pytest.raises(ValueError):
        homenc.keygen_from_primes(19, 97, 4)  # 19 != 1 mod 16


def test_forced_prime_structure():
    pk, sk = homenc.keygen(512, 8, rng=SeededRng(15))
    assert sk.prime_r % 256 == 1
    assert (pk.n // sk.prime_r) % 256 == 1
    assert pk.n % sk.prime_r == 0


def test_encrypt_rejects_out_of_range(small_homenc):
    pk, _ = small_homenc
    with pytest.raises(ValueError):
        homenc.encrypt(pk, pk.plaintext_limit, 3)
    with pytest.raises(ValueError):
        homenc.encrypt(pk, -1, 3)


def test_decrypt_rejects_non_unit(small_homenc):
    pk, sk = small_homenc
    with pytest.raises(homenc.DecryptionError):
        homenc.decrypt(sk, pk, homenc.HomCiphertext(sk.prime_r))


def test_randomizer_must_be_unit(tiny):
    pk, _ = tiny
    with pytest.raises(ValueError):
        homenc.encrypt(pk, 1, 17)  # shares a factor with n = 17*97


def test_ell_mu_and_min_beta_formulas():
    # ceil(log2 p) + ell + ceil(log2(k+1)) + 2
    assert homenc.ell_mu_bits(255, 128, 20) == 255 + 128 + 5 + 2 == 390
    assert homenc.ell_mu_bits(255, 128, 63) == 391
    assert homenc.min_beta(255, 128, 63) == 394  # the evaluation's plaintext size
    assert homenc.min_beta(255, 128, 20) == 393
    with pytest.raises(ValueError):
        homenc.ell_mu_bits(255, 128, 0)


def test_paper_scale_keygen_accepted():
    pk, sk = homenc.keygen(2048, 394, rng=SeededRng(16))
    assert pk.n.bit_length() == 2048
    assert pk.beta == 394
    m = secrets.randbelow(1 << 394)
    c = homenc.encrypt(pk, m, homenc.random_unit(pk))
    assert homenc.decrypt(sk, pk, c) == m
