import random

import pytest

import oracles
from smemail import signcrypt as sc
from smemail.crypto_suite import SHA3_CHACHA20, kdf
from smemail.curve_math import (
    INFINITY, Point, SECP256K1, SECP256R1, TOY17, point_add, scalar_mul)
from smemail.keypair_pki import InvalidPublicKeyError, KeyPair

A, B = "alice@example.com", "bob@example.com"


class Scripted:
    """Hands out the listed draws for randrange first, then a seeded fallback."""

    def __init__(self, draws, seed=0):
        self.draws = list(draws)
        self.fallback = random.Random(seed)

    def randrange(self, *args):
        if self.draws:
            return self.draws.pop(0)
        return self.fallback.randrange(*args)


def test_x_tilde_values():
    # n = 19 has 5 bits, so half = 3: x~ = 8 + (x mod 8)
    assert [sc.x_tilde(x, 19) for x in (0, 7, 8, 9, 16)] == [8, 15, 8, 9, 8]
    half = (SECP256R1.n.bit_length() + 1) // 2
    x = SECP256R1.G.x
    assert sc.x_tilde(x, SECP256R1.n) == (1 << half) | (x & ((1 << half) - 1))
    assert sc.x_tilde(x, SECP256R1.n).bit_length() == half + 1


def test_desk_key_agreement(toy_pair):
    alice, bob = toy_pair
    R, session = sc.sender_key_agree(5, alice.sk, bob.pk, A, B, TOY17)
    assert R == Point(9, 16)
    assert session.K == Point(3, 16)
    # oracle: K = ((r + x~ sk_a) mod n) * sk_b * G, with x~ = 9
    assert oracles.naive_mul((5 + 9 * 3) % 19 * 7 % 19, (5, 1), 17, 2) == (3, 16)
    back = sc.receiver_key_agree(bob.sk, R, alice.pk, A, B, TOY17)
    assert back.k == session.k and back.K == session.K
    assert session.k == kdf(3, A, 16, B, 16, TOY17)


def test_receiver_rejects_bad_R(toy_pair):
    alice, bob = toy_pair
    with pytest.raises(sc.EnvelopeInvalidError):
        sc.receiver_key_agree(bob.sk, INFINITY, alice.pk, A, B, TOY17)
    with pytest.raises(sc.EnvelopeInvalidError):
        sc.receiver_key_agree(bob.sk, Point(9, 15), alice.pk, A, B, TOY17)


@pytest.mark.parametrize("params", [TOY17, SECP256R1, SECP256K1], ids=lambda p: p.name)
def test_round_trip(params, rng):
    alice = KeyPair(11, scalar_mul(11, params.G, params))
    bob = KeyPair(13, scalar_mul(13, params.G, params))
    for m in (b"", b"hi", "héllo".encode(), bytes(range(256)) * 3):
        env = sc.signcrypt(m, alice, A, bob.pk, B, params, rng)
        assert sc.unsigncrypt(env, bob, alice.pk, params) == m
        assert 0 <= env.s < params.n and len(env.C) == len(m)


def test_round_trip_other_suite(p256_pair, rng):
    alice, bob = p256_pair
    env = sc.signcrypt(b"chacha", alice, A, bob.pk, B, SECP256R1, rng, SHA3_CHACHA20)
    assert env.suite_id == SHA3_CHACHA20.suite_id
    assert sc.unsigncrypt(env, bob, alice.pk, SECP256R1, SHA3_CHACHA20) == b"chacha"
    with pytest.raises(sc.EnvelopeInvalidError):
        sc.unsigncrypt(env, bob, alice.pk, SECP256R1)


def test_signature_equation(p256_pair, rng):
    alice, bob = p256_pair
    env = sc.signcrypt(b"m", alice, A, bob.pk, B, SECP256R1, rng)
    _, k = sc.unsigncrypt_with_key(env, bob, alice.pk, SECP256R1)
    t = sc.signature_challenge(b"m", env.R, A, B, k, SECP256R1)
    lhs = scalar_mul(env.s, SECP256R1.G, SECP256R1)
    assert point_add(lhs, env.R, SECP256R1) == scalar_mul(t, alice.pk, SECP256R1)


def test_resamples_when_K_is_infinity(toy_pair):
    alice, bob = toy_pair
    bad = [r for r in range(1, 19)
           if (r + sc.x_tilde(scalar_mul(r, TOY17.G, TOY17).x, 19) * alice.sk) % 19 == 0]
    assert bad, "curve T should have an r giving K = O for sk_a = 3"
    assert sc.sender_key_agree(bad[0], alice.sk, bob.pk, A, B, TOY17) is None
    good = next(r for r in range(1, 19) if r not in bad)
    env = sc.signcrypt(b"x", alice, A, bob.pk, B, TOY17, Scripted([bad[0], good]))
    assert env.R == scalar_mul(good, TOY17.G, TOY17)
    assert sc.unsigncrypt(env, bob, alice.pk, TOY17) == b"x"


def test_resamples_when_t_is_zero(toy_pair):
    alice, bob = toy_pair
    r = 5
    R, session = sc.sender_key_agree(r, alice.sk, bob.pk, A, B, TOY17)
    m = next(f"m{i}".encode() for i in range(1000)
             if sc.signature_challenge(f"m{i}".encode(), R, A, B, session.k, TOY17) == 0)
    env = sc.signcrypt(m, alice, A, bob.pk, B, TOY17, Scripted([r, 6]))
    assert env.R == scalar_mul(6, TOY17.G, TOY17)
    assert sc.unsigncrypt(env, bob, alice.pk, TOY17) == m


def test_invalid_recipient_key_rejected(toy_pair, rng):
    alice, _ = toy_pair
    for pk in (INFINITY, Point(9, 15)):
        with pytest.raises(InvalidPublicKeyError):
            sc.signcrypt(b"m", alice, A, pk, B, TOY17, rng)


def test_scalar_out_of_range(p256_pair, rng):
    alice, bob = p256_pair
    env = sc.signcrypt(b"m", alice, A, bob.pk, B, SECP256R1, rng)
    bad = sc.SigncryptedEnvelope(A, B, env.R, env.C, SECP256R1.n, env.curve_id, env.suite_id)
    with pytest.raises(sc.EnvelopeInvalidError):
        sc.unsigncrypt(bad, bob, alice.pk, SECP256R1)


def test_wrong_recipient_key_rejected(p256_pair, rng):
    alice, bob = p256_pair
    carol = KeyPair(99, scalar_mul(99, SECP256R1.G, SECP256R1))
    env = sc.signcrypt(b"m", alice, A, bob.pk, B, SECP256R1, rng)
    with pytest.raises(sc.SignatureInvalidError):
        sc.unsigncrypt(env, carol, alice.pk, SECP256R1)


def test_public_verify(p256_pair, rng):
    alice, bob = p256_pair
    env = sc.signcrypt(b"disclosed", alice, A, bob.pk, B, SECP256R1, rng)
    m, k = sc.unsigncrypt_with_key(env, bob, alice.pk, SECP256R1)
    assert sc.public_verify(env.R, m, k, env.s, alice.pk, A, B, SECP256R1)
    assert not sc.public_verify(env.R, m, k, env.s, bob.pk, A, B, SECP256R1)
    assert not sc.public_verify(INFINITY, m, k, env.s, alice.pk, A, B, SECP256R1)
    assert not sc.public_verify(env.R, m, k, SECP256R1.n, alice.pk, A, B, SECP256R1)
    assert not sc.public_verify(Point(1, 1), m, k, env.s, alice.pk, A, B, SECP256R1)
