import numpy as np
import pytest
from sympy import isprime

from encsynth.he import HeProfile, LevelExhausted, DEFAULT_PROFILE
from encsynth.he.keys import ExactBackend, RlweBackend
from encsynth.rlwe import (SECURITY_STAMP, ChainExhausted, RlweCiphertext, RlweParams,
                           decode_real, encode_real, negacyclic_mul, ntt_forward, ntt_inverse,
                           ntt_primes, rlwe_add, rlwe_mul_relin, rlwe_rescale, slot_count)
from encsynth.rlwe.encoding import EncodingOverflow

from programs import plain_program, random_program, run_program

RLWE_PROFILE = HeProfile(2**12)


def schoolbook(a, b, q):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k < n:
                out[k] += int(a[i]) * int(b[j])
            else:
                out[k - n] -= int(a[i]) * int(b[j])
    return np.array([v % q for v in out], dtype=np.uint64)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
def test_ntt_product_matches_schoolbook(n):
    rng = np.random.default_rng(n)
    for bits in (30, 50, 60):
        q = ntt_primes(bits, max(n, 1024), 1)[0] if n < 1024 else ntt_primes(bits, n, 1)[0]
        assert (q - 1) % (2 * n) == 0 and isprime(q)
        for _ in range(20):
            a = rng.integers(0, q, n, dtype=np.uint64)
            b = rng.integers(0, q, n, dtype=np.uint64)
            assert np.array_equal(negacyclic_mul(a, b, q), schoolbook(a, b, q))


def test_one_plus_x_times_one_minus_x():
    n = 16
    q = ntt_primes(30, 1024, 1)[0]
    a = np.zeros(n, np.uint64)
    b = np.zeros(n, np.uint64)
    a[0] = a[1] = 1
    b[0], b[1] = 1, q - 1
    expected = np.zeros(n, np.uint64)
    expected[0], expected[2] = 1, q - 1
    assert np.array_equal(negacyclic_mul(a, b, q), expected)
    assert np.array_equal(schoolbook(a, b, q), expected)


def test_ntt_inverse_and_zero():
    n = 2**12
    q = ntt_primes(60, n, 1)[0]
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.integers(0, q, n, dtype=np.uint64)
        assert np.array_equal(ntt_inverse(ntt_forward(x, q), q), x)
    assert not np.any(ntt_forward(np.zeros(n, np.uint64), q))


def test_chain_primes_are_ntt_friendly():
    for prof in (DEFAULT_PROFILE, RLWE_PROFILE):
        params = RlweParams.from_profile(prof)
        for q in (*params.moduli, params.special):
            assert isprime(q) and (q - 1) % (2 * prof.ring_dimension) == 0
        assert params.levels == prof.usable_levels
    with pytest.raises(ValueError):
        RlweParams(2**9, (12289, 18433), 40961)


def test_encoding_examples():
    n = 2**12
    assert not np.any(decode_real(encode_real(np.zeros(n // 2), 2.0**40, n), 2.0**40))
    assert slot_count(2**14) == 8192
    assert RlweParams.from_profile(DEFAULT_PROFILE).slots == 8192
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        v = rng.uniform(-10, 10, n // 2)
        worst = max(worst, np.max(np.abs(decode_real(encode_real(v, 2.0**40, n), 2.0**40) - v)))
    assert worst < 1e-7
    with pytest.raises(EncodingOverflow):
        encode_real(np.full(n // 2, 2.0**30), 2.0**40, n)
    with pytest.raises(ValueError):
        encode_real(np.zeros(n), 2.0**40, n)


@pytest.fixture(scope="module")
def rl():
    return RlweBackend(RLWE_PROFILE, seed=11)


def test_encrypt_decrypt_vector(rl):
    v = [1.0, -2.5, 3.25] + [0.0] * 13
    got = rl.decrypt(rl.encrypt(v), slots=16)
    assert np.max(np.abs(got - v)) <= 1e-6
    z = rl.decrypt(rl.encrypt(np.zeros(rl.params.slots)), slots=rl.params.slots)
    assert np.max(np.abs(z)) < 1e-6


def test_encryptions_are_randomized(rl):
    a, b = rl.encrypt(0.75), rl.encrypt(0.75)
    assert a.payload.to_bytes(40.0) != b.payload.to_bytes(40.0)
    assert abs(rl.decrypt(a) - rl.decrypt(b)) < 1e-6


def test_seeded_keygen_is_deterministic():
    a, b = RlweBackend(RLWE_PROFILE, seed=4), RlweBackend(RLWE_PROFILE, seed=4)
    assert a.eval_key() == b.eval_key()
    assert a.encrypt(1.0).payload.to_bytes(40.0) == b.encrypt(1.0).payload.to_bytes(40.0)


def test_add_thousand_pairs(rl):
    rng = np.random.default_rng(2)
    a, b = rng.uniform(-10, 10, (2, 1000))
    ev = rl.evaluator
    got = rl.decrypt(ev.add(rl.encrypt(a), rl.encrypt(b)), slots=1000)
    assert np.max(np.abs(got - (a + b))) < 1e-5
    for x, y in zip(a[:20], b[:20]):
        assert abs(rl.decrypt(ev.add(rl.encrypt(x), rl.encrypt(y))) - (x + y)) < 1e-5


def test_mul_relin_rescale(rl):
    ev = rl.evaluator
    r = ev.rescale(ev.mul(rl.encrypt(1.5), rl.encrypt(2.0)))
    assert abs(rl.decrypt(r) - 3.0) <= 1e-4
    c = rl.encrypt(-4.25)
    r = ev.rescale(ev.mul(c, rl.encrypt(1.0)))
    assert abs(rl.decrypt(r) + 4.25) <= 1e-4
    assert r.payload.chain_length == c.payload.chain_length - 1


def test_scheme_level_operations(rl):
    p = rl.params
    ct = rl.encrypt(0.5).payload
    sq = rlwe_rescale(rlwe_mul_relin(ct, ct, rl.keys.relin))
    assert sq.chain_length == ct.chain_length - 1
    total = rlwe_add(sq, sq)
    assert total.chain_length == sq.chain_length
    low = ct
    while low.chain_length > 1:
        low = rlwe_rescale(rlwe_mul_relin(low, ct if low is ct else low, rl.keys.relin))
    with pytest.raises(ChainExhausted):
        rlwe_rescale(rlwe_mul_relin(low, low, rl.keys.relin))
    assert p.levels == 4


def test_chain_exhaustion_maps_to_level_fault(rl):
    ev = rl.evaluator
    c = rl.encrypt(1.1)
    for _ in range(4):
        c = ev.rescale(ev.mul(c, c))
    with pytest.raises(LevelExhausted):
        ev.mul(c, c)


def test_ciphertext_format(rl):
    c = rl.encrypt(0.5)
    blob = c.payload.to_bytes(c.log2_scale)
    assert blob[:4] == b"RLWC" and SECURITY_STAMP in blob
    ct, scale = RlweCiphertext.from_bytes(blob)
    assert scale == c.log2_scale and ct.to_bytes(scale) == blob
    assert SECURITY_STAMP == b"security: NONE (research toy)"
    assert SECURITY_STAMP in rl.eval_key()
    from encsynth.rlwe import RlweError
    with pytest.raises(RlweError):
        RlweCiphertext.from_bytes(blob[:-8])


def test_depth4_circuit_at_default_profile():
    rl = RlweBackend(DEFAULT_PROFILE, seed=21)
    ex = ExactBackend()
    rng = np.random.default_rng(22)
    done = 0
    while done < 5:
        prog = random_program(rng, 3, 16, 4)
        if not any(op == "mul" for op, *_ in prog):
            continue
        vals = rng.uniform(-1, 1, 3)
        plain = plain_program(vals, prog)
        if max(abs(v) for v in plain) > 100:
            continue
        r_ex = run_program(ex.evaluator, [ex.encrypt(float(v)) for v in vals], prog)
        r_rl = run_program(rl.evaluator, [rl.encrypt(float(v)) for v in vals], prog)
        assert abs(rl.decrypt(r_rl[-1]) - ex.decrypt(r_ex[-1])) <= 1e-3
        done += 1
    # an explicit depth-4 chain as well
    c, x = rl.encrypt(0.9), 0.9
    for _ in range(4):
        c = rl.evaluator.rescale(rl.evaluator.mul(c, c))
        x = x * x
    assert c.level == 0 and abs(rl.decrypt(c) - x) <= 1e-3
