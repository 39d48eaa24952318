"""Symmetric primitives consumed by the protocol, behind a named suite.

The message hash H (reduced to a scalar), the expanding key-derivation
hash H' and the cipher E_k/D_k all come from a ``Suite``.  Protocol code
never names a concrete algorithm.

Session encryption uses a counter mode with an all-zero initial counter.
That is only sound because every session key is used once (a fresh
ephemeral scalar per message).  Anything that reuses a key, such as the
password-wrapped keystore, must pass an explicit IV.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .curve_math import DomainParams, encode_coordinate
from .tlv import encode_text, length_prefixed


class KeyLengthError(ValueError):
    pass


@dataclass(frozen=True)
class Suite:
    name: str
    suite_id: int
    hash_name: str
    cipher_name: str
    key_len: int
    digest_len: int
    iv_len: int = 16

    def digest(self, data: bytes) -> bytes:
        return hashlib.new(self.hash_name, data).digest()

    def _cipher(self, k: bytes, iv: bytes) -> Cipher:
        if self.cipher_name == "aes-ctr":
            return Cipher(algorithms.AES(k), modes.CTR(iv))
        if self.cipher_name == "chacha20":
            return Cipher(algorithms.ChaCha20(k, iv), mode=None)
        raise ValueError(f"suite {self.name} has unsupported cipher {self.cipher_name}")

    def _check(self, k: bytes, iv: bytes | None) -> bytes:
        if len(k) != self.key_len:
            raise KeyLengthError(
                f"{self.name} needs a {self.key_len}-octet key, got {len(k)}")
        if iv is None:
            return bytes(self.iv_len)
        if len(iv) != self.iv_len:
            raise ValueError(f"{self.name} needs a {self.iv_len}-octet IV, got {len(iv)}")
        return iv

    def encrypt(self, k: bytes, m: bytes, iv: bytes | None = None) -> bytes:
        enc = self._cipher(k, self._check(k, iv)).encryptor()
        return enc.update(m) + enc.finalize()

    def decrypt(self, k: bytes, c: bytes, iv: bytes | None = None) -> bytes:
        dec = self._cipher(k, self._check(k, iv)).decryptor()
        return dec.update(c) + dec.finalize()


SHA256_AES128 = Suite(
    name="sha256-aes128ctr", suite_id=0x01, hash_name="sha256",
    cipher_name="aes-ctr", key_len=16, digest_len=32)

SHA3_CHACHA20 = Suite(
    name="sha3_256-chacha20", suite_id=0x02, hash_name="sha3_256",
    cipher_name="chacha20", key_len=32, digest_len=32)

SUITES = {s.name: s for s in (SHA256_AES128, SHA3_CHACHA20)}
SUITES_BY_ID = {s.suite_id: s for s in SUITES.values()}
DEFAULT_SUITE = SHA256_AES128


def get_suite(name: str) -> Suite:
    try:
        return SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; known: {', '.join(SUITES)}") from None


def suite_by_id(suite_id: int) -> Suite:
    try:
        return SUITES_BY_ID[suite_id]
    except KeyError:
        raise KeyError(f"unknown suite id 0x{suite_id:02x}") from None


def hash_to_scalar(data: bytes, n: int, suite: Suite = DEFAULT_SUITE) -> int:
    return int.from_bytes(suite.digest(data), "big") % n


def kdf(x_k: int, id_a: str, y_k: int, id_b: str, out_len: int,
        params: DomainParams, suite: Suite = DEFAULT_SUITE) -> bytes:
    """H'(x_K || ID_A || y_K || ID_B) expanded in counter mode to ``out_len`` octets.

    Coordinates are fixed width and identifiers length prefixed so the
    concatenation is unambiguous.  Block counters start at 1.
    """
    if out_len < 1:
        raise ValueError("out_len must be at least 1")
    seed = (encode_coordinate(x_k, params) + length_prefixed(encode_text(id_a))
            + encode_coordinate(y_k, params) + length_prefixed(encode_text(id_b)))
    blocks = []
    produced = 0
    counter = 1
    while produced < out_len:
        block = suite.digest(seed + counter.to_bytes(4, "big"))
        blocks.append(block)
        produced += len(block)
        counter += 1
    return b"".join(blocks)[:out_len]


def sym_encrypt(k: bytes, m: bytes, suite: Suite = DEFAULT_SUITE,
                iv: bytes | None = None) -> bytes:
    return suite.encrypt(k, m, iv)


def sym_decrypt(k: bytes, c: bytes, suite: Suite = DEFAULT_SUITE,
                iv: bytes | None = None) -> bytes:
    return suite.decrypt(k, c, iv)
