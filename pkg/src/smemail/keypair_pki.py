"""Keys, detached signatures, certificates and the password-protected keystore.

Certificate, CA and server signatures all use the same (R, s) equation
as the protocol itself: ``R = rG``, ``t = H(message || x_R || y_R)``,
``s = t*sk - r (mod n)``, accepted iff ``sG + R = t*PK``.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import re
from dataclasses import dataclass, field

from . import tlv
from .curve_math import (
    CurveError, DomainParams, Point, Violation, _mul, curve_by_id, decode_point,
    decode_scalar, encode_coordinate, encode_point, encode_scalar, is_canonical,
    point_add, satisfies_equation, scalar_mul)
from .crypto_suite import DEFAULT_SUITE, Suite, hash_to_scalar, suite_by_id

KDF_ITERATIONS = 10_000
SALT_LEN = 16

PK_INFINITY = "pk-infinity"
PK_NON_CANONICAL = "pk-non-canonical"
PK_OFF_CURVE = "pk-off-curve"
PK_WRONG_ORDER = "pk-wrong-order"

_EMAIL = re.compile(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+$")


class PkiError(ValueError):
    pass


class InvalidIdentityError(PkiError):
    pass


class InvalidPublicKeyError(PkiError):
    def __init__(self, violations: list[Violation]):
        super().__init__("invalid public key: " + "; ".join(map(str, violations)))
        self.violations = violations


class ProofOfPossessionError(PkiError):
    pass


class KeystoreError(PkiError):
    pass


class WrongPasswordError(KeystoreError):
    pass


def check_identity(identity: str) -> str:
    if len(identity) > 254 or not _EMAIL.match(identity):
        raise InvalidIdentityError(f"{identity!r} is not a valid e-mail address")
    return identity


def random_scalar(n: int, rng) -> int:
    """Uniform scalar in [1, n-1]: draw from [0, n-1], reject zero."""
    while True:
        k = rng.randrange(n)
        if k != 0:
            return k


@dataclass(frozen=True)
class KeyPair:
    sk: int = field(repr=False)
    pk: Point


def generate_keypair(params: DomainParams, rng) -> KeyPair:
    sk = random_scalar(params.n, rng)
    return KeyPair(sk, scalar_mul(sk, params.G, params))


def validate_public_key(pk: Point, params: DomainParams) -> list[Violation]:
    """Conditions (a) not O, (b) canonical coordinates, (c) on the curve, plus nPK = O."""
    if pk.is_infinity:
        return [Violation(PK_INFINITY, "public key is the point at infinity")]
    found = []
    if not is_canonical(pk, params):
        found.append(Violation(PK_NON_CANONICAL, "coordinates are not reduced modulo q"))
    if not satisfies_equation(pk, params):
        found.append(Violation(PK_OFF_CURVE, "public key does not satisfy the curve equation"))
    elif not found and not _mul(params.n, pk, params).is_infinity:
        found.append(Violation(PK_WRONG_ORDER, "n*PK != O"))
    return found


def require_valid_public_key(pk: Point, params: DomainParams) -> None:
    violations = validate_public_key(pk, params)
    if violations:
        raise InvalidPublicKeyError(violations)


@dataclass(frozen=True)
class DetachedSignature:
    R: Point
    s: int


def _challenge(message: bytes, R: Point, params: DomainParams, suite: Suite) -> int:
    data = message + encode_coordinate(R.x, params) + encode_coordinate(R.y, params)
    return hash_to_scalar(data, params.n, suite)


def sign_detached(message: bytes, sk: int, params: DomainParams, rng,
                  suite: Suite = DEFAULT_SUITE) -> DetachedSignature:
    if not 1 <= sk < params.n:
        raise ValueError("private scalar out of range [1, n-1]")
    while True:
        r = random_scalar(params.n, rng)
        R = scalar_mul(r, params.G, params)
        t = _challenge(message, R, params, suite)
        if t != 0 and not R.is_infinity:
            return DetachedSignature(R, (t * sk - r) % params.n)


def verify_detached(message: bytes, sig: DetachedSignature, pk: Point,
                    params: DomainParams, suite: Suite = DEFAULT_SUITE) -> bool:
    try:
        if sig.R.is_infinity or not params.contains(sig.R) or not params.contains(pk):
            return False
        if pk.is_infinity or not 0 <= sig.s < params.n:
            return False
        t = _challenge(message, sig.R, params, suite)
        lhs = point_add(scalar_mul(sig.s, params.G, params), sig.R, params)
        return lhs == scalar_mul(t, pk, params)
    except (CurveError, ArithmeticError, TypeError):
        return False


# -- certificates -----------------------------------------------------------

class CertStatus(enum.Enum):
    GOOD = "good"
    EXPIRED = "expired"
    BAD_SIGNATURE = "bad-signature"


@dataclass(frozen=True)
class Certificate:
    subject: str
    subject_pk: Point
    issuer: str
    serial: int
    not_before: int
    not_after: int
    signature: DetachedSignature
    curve_id: int
    suite_id: int

    def tbs_octets(self, params: DomainParams) -> bytes:
        return tbs_octets(self.serial, self.subject, self.subject_pk, self.issuer,
                          self.not_before, self.not_after, params)


def tbs_octets(serial: int, subject: str, subject_pk: Point, issuer: str,
               not_before: int, not_after: int, params: DomainParams) -> bytes:
    return tlv.encode_records([
        (tlv.SERIAL, tlv.encode_uint(serial, tlv.SERIAL_LEN)),
        (tlv.IDENTITY, tlv.encode_text(subject)),
        (tlv.POINT, encode_point(subject_pk, params)),
        (tlv.IDENTITY, tlv.encode_text(issuer)),
        (tlv.TIMESTAMP, tlv.encode_uint(not_before, tlv.TIMESTAMP_LEN)),
        (tlv.TIMESTAMP, tlv.encode_uint(not_after, tlv.TIMESTAMP_LEN)),
    ])


def pop_message(nonce: bytes, subject: str) -> bytes:
    """What a registrant signs to prove possession: the CA nonce bound to the identity."""
    return b"smemail-pop" + tlv.length_prefixed(nonce) + tlv.length_prefixed(
        tlv.encode_text(subject))


def make_proof_of_possession(nonce: bytes, subject: str, keypair: KeyPair,
                             params: DomainParams, rng,
                             suite: Suite = DEFAULT_SUITE) -> DetachedSignature:
    return sign_detached(pop_message(nonce, subject), keypair.sk, params, rng, suite)


def issue_certificate(ca: KeyPair, ca_id: str, subject: str, subject_pk: Point,
                      validity: tuple[int, int], serial: int, nonce: bytes,
                      pop: DetachedSignature, params: DomainParams, rng,
                      suite: Suite = DEFAULT_SUITE) -> Certificate:
    check_identity(subject)
    require_valid_public_key(subject_pk, params)
    not_before, not_after = validity
    if not not_before < not_after:
        raise PkiError("not_before must precede not_after")
    if not verify_detached(pop_message(nonce, subject), pop, subject_pk, params, suite):
        raise ProofOfPossessionError(f"{subject} did not prove possession of the key")
    tbs = tbs_octets(serial, subject, subject_pk, ca_id, not_before, not_after, params)
    sig = sign_detached(tbs, ca.sk, params, rng, suite)
    return Certificate(subject, subject_pk, ca_id, serial, not_before, not_after, sig,
                       params.curve_id, suite.suite_id)


def validate_certificate(cert: Certificate, ca_pk: Point, now: int,
                         params: DomainParams, suite: Suite = DEFAULT_SUITE) -> CertStatus:
    """Signature first, then the validity window.  Revocation is OCSP's job."""
    if not verify_detached(cert.tbs_octets(params), cert.signature, ca_pk, params, suite):
        return CertStatus.BAD_SIGNATURE
    if not cert.not_before <= now <= cert.not_after:
        return CertStatus.EXPIRED
    return CertStatus.GOOD


def certificate_records(cert: Certificate, params: DomainParams) -> bytes:
    """TBS records followed by the CA signature; embedded in other documents."""
    return cert.tbs_octets(params) + tlv.encode_records([
        (tlv.POINT, encode_point(cert.signature.R, params)),
        (tlv.SCALAR, encode_scalar(cert.signature.s, params)),
    ])


def read_certificate_records(reader: tlv.TlvReader, params: DomainParams,
                             suite_id: int) -> Certificate:
    serial = reader.read_uint(tlv.SERIAL, tlv.SERIAL_LEN)
    subject = reader.read_text(tlv.IDENTITY)
    subject_pk = read_point(reader, params)
    issuer = reader.read_text(tlv.IDENTITY)
    not_before = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
    not_after = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
    R = read_point(reader, params)
    s = read_scalar(reader, params)
    return Certificate(subject, subject_pk, issuer, serial, not_before, not_after,
                       DetachedSignature(R, s), params.curve_id, suite_id)


def read_point(reader: tlv.TlvReader, params: DomainParams) -> Point:
    value = reader.read(tlv.POINT)
    try:
        return decode_point(value, params)
    except CurveError as exc:
        raise tlv.DecodeError(str(exc), reader.value_offset) from None


def read_scalar(reader: tlv.TlvReader, params: DomainParams) -> int:
    value = reader.read(tlv.SCALAR)
    try:
        return decode_scalar(value, params)
    except CurveError as exc:
        raise tlv.DecodeError(str(exc), reader.value_offset) from None


def read_suite_header(reader: tlv.TlvReader, kind: int) -> tuple[DomainParams, Suite]:
    reader.read_version(kind)
    curve_id = reader.read_octet(tlv.CURVE_ID)
    try:
        params = curve_by_id(curve_id)
    except KeyError as exc:
        raise tlv.DecodeError(str(exc.args[0]), reader.value_offset) from None
    suite_id = reader.read_octet(tlv.SUITE_ID)
    try:
        suite = suite_by_id(suite_id)
    except KeyError as exc:
        raise tlv.DecodeError(str(exc.args[0]), reader.value_offset) from None
    return params, suite


def suite_header(kind: int, params: DomainParams, suite: Suite) -> bytes:
    return tlv.version_record(kind) + tlv.encode_records([
        (tlv.CURVE_ID, bytes([params.curve_id])),
        (tlv.SUITE_ID, bytes([suite.suite_id])),
    ])


def encode_certificate(cert: Certificate) -> bytes:
    params = curve_by_id(cert.curve_id)
    suite = suite_by_id(cert.suite_id)
    return (suite_header(tlv.KIND_CERTIFICATE, params, suite)
            + certificate_records(cert, params))


def decode_certificate(data: bytes) -> Certificate:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_CERTIFICATE)
    cert = read_certificate_records(reader, params, suite.suite_id)
    reader.finish()
    return cert


# -- certificate requests ---------------------------------------------------

@dataclass(frozen=True)
class CertificateRequest:
    subject: str
    subject_pk: Point
    nonce: bytes
    pop: DetachedSignature
    curve_id: int
    suite_id: int


def encode_cert_request(req: CertificateRequest) -> bytes:
    params = curve_by_id(req.curve_id)
    suite = suite_by_id(req.suite_id)
    return suite_header(tlv.KIND_CERT_REQUEST, params, suite) + tlv.encode_records([
        (tlv.IDENTITY, tlv.encode_text(req.subject)),
        (tlv.POINT, encode_point(req.subject_pk, params)),
        (tlv.NONCE, req.nonce),
        (tlv.POINT, encode_point(req.pop.R, params)),
        (tlv.SCALAR, encode_scalar(req.pop.s, params)),
    ])


def decode_cert_request(data: bytes) -> CertificateRequest:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_CERT_REQUEST)
    subject = reader.read_text(tlv.IDENTITY)
    pk = read_point(reader, params)
    nonce = reader.read(tlv.NONCE)
    R = read_point(reader, params)
    s = read_scalar(reader, params)
    reader.finish()
    return CertificateRequest(subject, pk, nonce, DetachedSignature(R, s),
                              params.curve_id, suite.suite_id)


# -- keystore ---------------------------------------------------------------

@dataclass(frozen=True)
class EncryptedKeystore:
    identity: str
    salt: bytes
    wrapped_sk: bytes
    sk_hash: bytes
    curve_id: int
    suite_id: int


def _wrapping_key(password: str, salt: bytes, suite: Suite) -> bytes:
    return hashlib.pbkdf2_hmac(suite.hash_name, password.encode("utf-8"), salt,
                               KDF_ITERATIONS, dklen=suite.key_len)


def _salt_iv(salt: bytes, suite: Suite) -> bytes:
    return suite.digest(b"smemail-keystore-iv" + salt)[:suite.iv_len]


def keystore_seal(sk: int, identity: str, password: str, params: DomainParams, rng,
                  suite: Suite = DEFAULT_SUITE) -> EncryptedKeystore:
    salt = rng.randbytes(SALT_LEN)
    sk_octets = encode_scalar(sk, params)
    key = _wrapping_key(password, salt, suite)
    wrapped = suite.encrypt(key, sk_octets, iv=_salt_iv(salt, suite))
    return EncryptedKeystore(identity, salt, wrapped, suite.digest(sk_octets),
                             params.curve_id, suite.suite_id)


def keystore_open(ks: EncryptedKeystore, password: str) -> int:
    params = curve_by_id(ks.curve_id)
    suite = suite_by_id(ks.suite_id)
    if len(ks.wrapped_sk) != params.scalar_len:
        raise KeystoreError("wrapped key has the wrong length")
    key = _wrapping_key(password, ks.salt, suite)
    sk_octets = suite.decrypt(key, ks.wrapped_sk, iv=_salt_iv(ks.salt, suite))
    if not hmac.compare_digest(suite.digest(sk_octets), ks.sk_hash):
        raise WrongPasswordError("wrong password")
    sk = int.from_bytes(sk_octets, "big")
    if not 1 <= sk < params.n:
        raise KeystoreError("keystore holds an out-of-range scalar")
    return sk


def encode_keystore(ks: EncryptedKeystore) -> bytes:
    params = curve_by_id(ks.curve_id)
    suite = suite_by_id(ks.suite_id)
    return suite_header(tlv.KIND_KEYSTORE, params, suite) + tlv.encode_records([
        (tlv.IDENTITY, tlv.encode_text(ks.identity)),
        (tlv.NONCE, ks.salt),
        (tlv.CIPHERTEXT, ks.wrapped_sk),
        (tlv.DIGEST, ks.sk_hash),
    ])


def decode_keystore(data: bytes) -> EncryptedKeystore:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_KEYSTORE)
    identity = reader.read_text(tlv.IDENTITY)
    salt = reader.read(tlv.NONCE)
    wrapped = reader.read(tlv.CIPHERTEXT)
    sk_hash = reader.read(tlv.DIGEST)
    reader.finish()
    return EncryptedKeystore(identity, salt, wrapped, sk_hash, params.curve_id,
                             suite.suite_id)
