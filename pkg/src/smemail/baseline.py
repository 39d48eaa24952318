"""Sign-then-encrypt reference built from the same primitives, for op-count comparison.

Sender: Schnorr-style signature (R = rG), then ECIES to the recipient with a
fresh ephemeral E = eG and shared point e*PK_B.  Receiver: SK_B*E, decrypt,
verify ``sG + R = t*PK_A``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .curve_math import (
    DomainParams, Point, count_scalar_mults, decode_point, decode_scalar, encode_point,
    encode_scalar, scalar_mul)
from .crypto_suite import DEFAULT_SUITE, Suite, kdf
from .keypair_pki import (
    DetachedSignature, KeyPair, generate_keypair, random_scalar, sign_detached,
    verify_detached)
from .signcrypt import SignatureInvalidError, signcrypt, unsigncrypt


@dataclass(frozen=True)
class BaselineEnvelope:
    sender: str
    recipient: str
    E: Point
    C: bytes


def _shared_key(Z: Point, sender_id: str, recipient_id: str, params: DomainParams,
                suite: Suite) -> bytes:
    return kdf(Z.x, sender_id, Z.y, recipient_id, suite.key_len, params, suite)


def sign_then_encrypt(m: bytes, sender: KeyPair, sender_id: str, recipient_pk: Point,
                      recipient_id: str, params: DomainParams, rng,
                      suite: Suite = DEFAULT_SUITE) -> BaselineEnvelope:
    sig = sign_detached(m, sender.sk, params, rng, suite)
    e = random_scalar(params.n, rng)
    E = scalar_mul(e, params.G, params)
    k = _shared_key(scalar_mul(e, recipient_pk, params), sender_id, recipient_id,
                    params, suite)
    inner = encode_point(sig.R, params) + encode_scalar(sig.s, params) + m
    return BaselineEnvelope(sender_id, recipient_id, E, suite.encrypt(k, inner))


def decrypt_then_verify(env: BaselineEnvelope, recipient: KeyPair, sender_pk: Point,
                        params: DomainParams, suite: Suite = DEFAULT_SUITE) -> bytes:
    k = _shared_key(scalar_mul(recipient.sk, env.E, params), env.sender, env.recipient,
                    params, suite)
    inner = suite.decrypt(k, env.C)
    point_len = 1 + 2 * params.coord_len
    R = decode_point(inner[:point_len], params)
    s = decode_scalar(inner[point_len:point_len + params.scalar_len], params)
    m = inner[point_len + params.scalar_len:]
    if not verify_detached(m, DetachedSignature(R, s), sender_pk, params, suite):
        raise SignatureInvalidError("baseline signature does not verify")
    return m


def operation_counts(params: DomainParams, rng, suite: Suite = DEFAULT_SUITE,
                     m: bytes = b"op-count probe") -> dict[str, dict[str, int]]:
    """Scalar multiplications per message, each side measured separately."""
    alice, bob = generate_keypair(params, rng), generate_keypair(params, rng)
    a_id, b_id = "alice@example.com", "bob@example.com"
    with count_scalar_mults() as sc_send:
        env = signcrypt(m, alice, a_id, bob.pk, b_id, params, rng, suite)
    with count_scalar_mults() as sc_recv:
        assert unsigncrypt(env, bob, alice.pk, params, suite) == m
    with count_scalar_mults() as bl_send:
        benv = sign_then_encrypt(m, alice, a_id, bob.pk, b_id, params, rng, suite)
    with count_scalar_mults() as bl_recv:
        assert decrypt_then_verify(benv, bob, alice.pk, params, suite) == m
    return {
        "smemail": {"sender": sc_send.value, "receiver": sc_recv.value},
        "sign-then-encrypt": {"sender": bl_send.value, "receiver": bl_recv.value},
    }
