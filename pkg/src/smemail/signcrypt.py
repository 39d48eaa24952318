"""SMEmail composing (signcryption), delivering (unsigncryption) and public verification.

Sender A with key pair (SK_A, PK_A) and recipient B with PK_B:

    r in [1, n-1],  R = rG = (x_R, y_R)
    K = (r + x~_R * SK_A) PK_B = (x_K, y_K),   k = H'(x_K || ID_A || y_K || ID_B)
    C = E_k(M)
    t = H(M || x_R || ID_A || y_R || ID_B || k),   s = t*SK_A - r  (mod n)

B recomputes ``K = SK_B (R + x~_R PK_A)``, decrypts, and accepts iff
``sG + R = t PK_A``.  ``x~_R`` keeps the low ceil(f/2) bits of x_R and sets
bit ceil(f/2); it is reduced mod n only where it multiplies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tlv
from .curve_math import (
    DomainParams, Point, encode_coordinate, is_on_curve, point_add, scalar_mul)
from .crypto_suite import DEFAULT_SUITE, Suite, hash_to_scalar, kdf
from .keypair_pki import KeyPair, random_scalar, require_valid_public_key

ENVELOPE_INVALID = "envelope-invalid"
SIGNATURE_INVALID = "signature-invalid"


class UnsigncryptError(Exception):
    stage = "unsigncrypt"

    def __init__(self, detail: str):
        super().__init__(f"{self.stage}: {detail}")
        self.detail = detail


class EnvelopeInvalidError(UnsigncryptError):
    stage = ENVELOPE_INVALID


class SignatureInvalidError(UnsigncryptError):
    stage = SIGNATURE_INVALID


@dataclass(frozen=True)
class SigncryptedEnvelope:
    sender: str
    recipient: str
    R: Point
    C: bytes
    s: int
    curve_id: int
    suite_id: int


@dataclass(frozen=True)
class SessionKey:
    k: bytes = field(repr=False)
    K: Point = field(repr=False)


def x_tilde(x_r: int, n: int) -> int:
    half = (n.bit_length() + 1) // 2
    return (1 << half) + (x_r % (1 << half))


def _session_key(K: Point, id_a: str, id_b: str, params: DomainParams,
                 suite: Suite) -> SessionKey:
    return SessionKey(kdf(K.x, id_a, K.y, id_b, suite.key_len, params, suite), K)


def sender_key_agree(r: int, sk_a: int, pk_b: Point, id_a: str, id_b: str,
                     params: DomainParams, suite: Suite = DEFAULT_SUITE
                     ) -> tuple[Point, SessionKey] | None:
    """(R, session key), or None when K = O and the caller must draw a new r."""
    require_valid_public_key(pk_b, params)
    R = scalar_mul(r, params.G, params)
    multiplier = (r + x_tilde(R.x, params.n) * sk_a) % params.n
    K = scalar_mul(multiplier, pk_b, params)
    if K.is_infinity:
        return None
    return R, _session_key(K, id_a, id_b, params, suite)


def receiver_key_agree(sk_b: int, R: Point, pk_a: Point, id_a: str, id_b: str,
                       params: DomainParams, suite: Suite = DEFAULT_SUITE) -> SessionKey:
    if R.is_infinity or not is_on_curve(R, params):
        raise EnvelopeInvalidError("R must be a finite curve point")
    xt = x_tilde(R.x, params.n) % params.n
    K = scalar_mul(sk_b, point_add(R, scalar_mul(xt, pk_a, params), params), params)
    if K.is_infinity:
        raise EnvelopeInvalidError("derived K is the point at infinity")
    return _session_key(K, id_a, id_b, params, suite)


def signature_challenge(m: bytes, R: Point, id_a: str, id_b: str, k: bytes,
                        params: DomainParams, suite: Suite = DEFAULT_SUITE) -> int:
    data = (m + encode_coordinate(R.x, params)
            + tlv.length_prefixed(tlv.encode_text(id_a))
            + encode_coordinate(R.y, params)
            + tlv.length_prefixed(tlv.encode_text(id_b)) + k)
    return hash_to_scalar(data, params.n, suite)


def _signature_holds(s: int, R: Point, t: int, pk_a: Point, params: DomainParams) -> bool:
    lhs = point_add(scalar_mul(s, params.G, params), R, params)
    return lhs == scalar_mul(t, pk_a, params)


def signcrypt(m: bytes, sender: KeyPair, sender_id: str, recipient_pk: Point,
              recipient_id: str, params: DomainParams, rng,
              suite: Suite = DEFAULT_SUITE) -> SigncryptedEnvelope:
    require_valid_public_key(recipient_pk, params)
    while True:
        r = random_scalar(params.n, rng)
        agreed = sender_key_agree(r, sender.sk, recipient_pk, sender_id, recipient_id,
                                  params, suite)
        if agreed is None:
            continue
        R, session = agreed
        t = signature_challenge(m, R, sender_id, recipient_id, session.k, params, suite)
        # t = 0 would drop SK_A from s entirely
        if t == 0:
            continue
        C = suite.encrypt(session.k, m)
        s = (t * sender.sk - r) % params.n
        return SigncryptedEnvelope(sender_id, recipient_id, R, C, s,
                                   params.curve_id, suite.suite_id)


def unsigncrypt_with_key(env: SigncryptedEnvelope, recipient: KeyPair, sender_pk: Point,
                         params: DomainParams, suite: Suite = DEFAULT_SUITE
                         ) -> tuple[bytes, bytes]:
    """Plaintext and session key k; raises before releasing anything on failure."""
    require_valid_public_key(sender_pk, params)
    if env.curve_id != params.curve_id or env.suite_id != suite.suite_id:
        raise EnvelopeInvalidError("envelope curve or suite does not match")
    if not 0 <= env.s < params.n:
        raise EnvelopeInvalidError("s out of range")
    session = receiver_key_agree(recipient.sk, env.R, sender_pk, env.sender,
                                 env.recipient, params, suite)
    m = suite.decrypt(session.k, env.C)
    t = signature_challenge(m, env.R, env.sender, env.recipient, session.k, params, suite)
    if not _signature_holds(env.s, env.R, t, sender_pk, params):
        raise SignatureInvalidError("sG + R != t*PK_A")
    return m, session.k


def unsigncrypt(env: SigncryptedEnvelope, recipient: KeyPair, sender_pk: Point,
                params: DomainParams, suite: Suite = DEFAULT_SUITE) -> bytes:
    return unsigncrypt_with_key(env, recipient, sender_pk, params, suite)[0]


def public_verify(R: Point, m: bytes, k: bytes, s: int, sender_pk: Point,
                  sender_id: str, recipient_id: str, params: DomainParams,
                  suite: Suite = DEFAULT_SUITE) -> bool:
    """Check a disclosed (R, M, k, s) against PK_A with no private key."""
    try:
        if R.is_infinity or not is_on_curve(R, params) or not 0 <= s < params.n:
            return False
        if sender_pk.is_infinity or not is_on_curve(sender_pk, params):
            return False
        t = signature_challenge(m, R, sender_id, recipient_id, k, params, suite)
        return _signature_holds(s, R, t, sender_pk, params)
    except (ValueError, ArithmeticError):
        return False
