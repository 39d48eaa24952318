import hashlib

import pytest

from smemail.crypto_suite import (
    SHA256_AES128, SHA3_CHACHA20, KeyLengthError, get_suite, hash_to_scalar, kdf,
    suite_by_id, sym_decrypt, sym_encrypt)
from smemail.curve_math import SECP256R1, TOY17


def test_aes128_ctr_known_answer():
    # NIST SP 800-38A, F.5.1 CTR-AES128.Encrypt, first block
    key = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
    iv = bytes.fromhex("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff")
    pt = bytes.fromhex("6bc1bee22e409f96e93d7e117393172a")
    assert SHA256_AES128.encrypt(key, pt, iv) == bytes.fromhex(
        "874d6191b620e3261bef6864990db6ce")


def test_chacha20_known_answer():
    # RFC 7539 section 2.4.2 keystream XOR; cryptography takes counter || nonce as the IV
    key = bytes(range(32))
    iv = (1).to_bytes(4, "little") + bytes.fromhex("000000000000004a00000000")
    pt = (b"Ladies and Gentlemen of the class of '99: If I could offer you only one "
          b"tip for the future, sunscreen would be it.")
    ct = SHA3_CHACHA20.encrypt(key, pt, iv)
    assert ct[:16] == bytes.fromhex("6e2e359a2568f98041ba0728dd0d6981")


@pytest.mark.parametrize("suite", [SHA256_AES128, SHA3_CHACHA20], ids=lambda s: s.name)
def test_round_trip_and_key_length(suite):
    k = bytes(range(suite.key_len))
    for m in (b"", b"x", b"hello world" * 50):
        assert sym_decrypt(k, sym_encrypt(k, m, suite), suite) == m
        assert len(sym_encrypt(k, m, suite)) == len(m)
    with pytest.raises(KeyLengthError):
        suite.encrypt(k + b"\x00", b"m")
    with pytest.raises(ValueError):
        suite.encrypt(k, b"m", iv=b"short")


def test_digest_functions():
    assert SHA256_AES128.digest(b"abc") == hashlib.sha256(b"abc").digest()
    assert SHA3_CHACHA20.digest(b"abc") == hashlib.sha3_256(b"abc").digest()


def test_registry():
    assert get_suite("sha256-aes128ctr") is SHA256_AES128
    assert suite_by_id(0x02) is SHA3_CHACHA20
    with pytest.raises(KeyError):
        get_suite("rot13")
    with pytest.raises(KeyError):
        suite_by_id(0x99)


def test_hash_to_scalar_range_and_reduction():
    for i in range(200):
        v = hash_to_scalar(bytes([i]), TOY17.n)
        assert 0 <= v < TOY17.n
    data = b"smemail"
    assert hash_to_scalar(data, SECP256R1.n) == (
        int.from_bytes(hashlib.sha256(data).digest(), "big") % SECP256R1.n)


def test_hash_to_scalar_distinct_on_corpus():
    # collisions on a 256-bit order would mean the input is being truncated
    values = {hash_to_scalar(f"msg-{i}".encode(), SECP256R1.n) for i in range(500)}
    assert len(values) == 500


def test_kdf_layout():
    seed = (bytes([3]) + b"\x00\x01a" + bytes([16]) + b"\x00\x01b")
    expected = hashlib.sha256(seed + b"\x00\x00\x00\x01").digest()[:16]
    assert kdf(3, "a", 16, "b", 16, TOY17) == expected


def test_kdf_expands_and_binds_every_input():
    base = kdf(3, "alice@x.org", 16, "bob@x.org", 16, TOY17)
    assert len(kdf(3, "alice@x.org", 16, "bob@x.org", 80, TOY17)) == 80
    assert kdf(3, "alice@x.org", 16, "bob@x.org", 80, TOY17)[:16] == base
    variants = [
        kdf(4, "alice@x.org", 16, "bob@x.org", 16, TOY17),
        kdf(3, "bob@x.org", 16, "alice@x.org", 16, TOY17),
        kdf(3, "alice@x.org", 15, "bob@x.org", 16, TOY17),
        kdf(3, "alice@x.org", 16, "bob@x.orgg", 16, TOY17),
        kdf(3, "alice@x.or", 16, "gbob@x.org", 16, TOY17),
    ]
    assert base not in variants
    with pytest.raises(ValueError):
        kdf(3, "a", 16, "b", 0, TOY17)
