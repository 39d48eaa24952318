"""Server-side actors: directory, OCSP responder, Delegated Validation server, mail relay.

Each actor handles one request at a time.  Servers talk to each other
through an optional ``transport`` callable ``(leg, src, dst, octets) ->
octets`` so a simulator can record and tamper with internal traffic; the
default transport passes octets through unchanged.
"""

from __future__ import annotations

import hashlib
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import tlv, wire
from .curve_math import DomainParams, Point, encode_point
from .crypto_suite import Suite
from .keypair_pki import (
    CertStatus, Certificate, CertificateRequest, KeyPair, certificate_records,
    issue_certificate, read_certificate_records, read_point, read_suite_header,
    suite_header, validate_certificate, validate_public_key)
from .wire import (
    DirectoryResponse, DvRequest, DvResponse, DvVerdict, OcspRequest, OcspStatus,
    OcspToken)

log = logging.getLogger(__name__)

Transport = Callable[[str, str, str, bytes], bytes]

OCSP_ACTOR = "ocsp"
DV_ACTOR = "dv"
DIRECTORY_ACTOR = "directory"
MAIL_ACTOR = "mail"

NONCE_LEN = 16
CA_IDENTITY = "ca@smemail.test"
DEFAULT_VALIDITY = 365 * 86400


def passthrough(leg: str, src: str, dst: str, octets: bytes) -> bytes:
    return octets


class DuplicateIdentityError(ValueError):
    pass


class DirectoryError(ValueError):
    pass


@dataclass(frozen=True)
class DirectoryRecord:
    identity: str
    pk: Point
    cert: Certificate
    revoked: bool = False
    revoked_at: int | None = None


def encode_directory_record(rec: DirectoryRecord, params: DomainParams, suite: Suite) -> bytes:
    records = [(tlv.IDENTITY, tlv.encode_text(rec.identity)),
               (tlv.POINT, encode_point(rec.pk, params)),
               (tlv.STATUS, bytes([1 if rec.revoked else 0]))]
    if rec.revoked:
        records.append((tlv.TIMESTAMP, tlv.encode_uint(rec.revoked_at or 0, tlv.TIMESTAMP_LEN)))
    return (suite_header(tlv.KIND_DIRECTORY_RECORD, params, suite)
            + tlv.encode_records(records) + certificate_records(rec.cert, params))


def decode_directory_record(data: bytes) -> DirectoryRecord:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_DIRECTORY_RECORD)
    identity = reader.read_text()
    pk = read_point(reader, params)
    flag = reader.read_octet(tlv.STATUS)
    if flag not in (0, 1):
        raise tlv.DecodeError("revocation flag must be 0 or 1", reader.value_offset)
    revoked_at = None
    if flag:
        revoked_at = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
    cert = read_certificate_records(reader, params, suite.suite_id)
    reader.finish()
    return DirectoryRecord(identity, pk, cert, bool(flag), revoked_at)


class Directory:
    """Identity -> record store (the LDAP stand-in).

    With ``root`` set every record is mirrored to
    ``root/<hh>/<sha256(identity)>.rec`` as armored TLV.
    """

    def __init__(self, params: DomainParams, suite: Suite, root: str | Path | None = None):
        self.params = params
        self.suite = suite
        self.root = Path(root) if root is not None else None
        self._records: dict[str, DirectoryRecord] = {}
        if self.root is not None:
            self._load()

    def _path(self, identity: str) -> Path:
        digest = hashlib.sha256(identity.encode("utf-8")).hexdigest()
        return self.root / digest[:2] / f"{digest}.rec"

    def _load(self) -> None:
        for path in sorted(self.root.glob("*/*.rec")):
            rec = decode_directory_record(tlv.dearmor(path.read_text()))
            self._records[rec.identity] = rec

    def _store(self, rec: DirectoryRecord) -> None:
        self._records[rec.identity] = rec
        if self.root is not None:
            path = self._path(rec.identity)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(tlv.armor(encode_directory_record(rec, self.params, self.suite)))

    def _check(self, rec: DirectoryRecord) -> None:
        if rec.pk != rec.cert.subject_pk:
            raise DirectoryError("record public key differs from the certificate's")
        if rec.identity != rec.cert.subject:
            raise DirectoryError("record identity differs from the certificate subject")
        violations = validate_public_key(rec.pk, self.params)
        if violations:
            raise DirectoryError("; ".join(map(str, violations)))

    def put(self, rec: DirectoryRecord) -> None:
        self._check(rec)
        if rec.identity in self._records:
            raise DuplicateIdentityError(f"duplicate identity {rec.identity}")
        self._store(rec)

    def lookup(self, identity: str) -> DirectoryRecord | None:
        return self._records.get(identity)

    def revoke(self, identity: str, at: int) -> DirectoryRecord:
        rec = self._records.get(identity)
        if rec is None:
            raise DirectoryError(f"unknown identity {identity}")
        revoked = DirectoryRecord(rec.identity, rec.pk, rec.cert, True, at)
        self._store(revoked)
        return revoked

    def reissue(self, rec: DirectoryRecord) -> None:
        """Replace a revoked identity's record with a fresh one."""
        self._check(rec)
        old = self._records.get(rec.identity)
        if old is not None and not old.revoked:
            raise DuplicateIdentityError(f"{rec.identity} must be revoked before reissue")
        self._store(rec)

    def identities(self) -> list[str]:
        return list(self._records)

    def handle(self, octets: bytes) -> bytes:
        req = wire.decode_directory_request(octets)
        rec = self.lookup(req.target)
        if rec is None:
            status, cert = OcspStatus.UNKNOWN, None
        elif rec.revoked:
            status, cert = OcspStatus.REVOKED, None
        else:
            status, cert = OcspStatus.GOOD, rec.cert
        return wire.encode_directory_response(DirectoryResponse(
            req.target, status, cert, self.params.curve_id, self.suite.suite_id))


class CertificateAuthority:
    """Issues certificates against a proof of possession and files them in the directory."""

    def __init__(self, key: KeyPair, directory: Directory, params: DomainParams,
                 suite: Suite, rng, ca_id: str = CA_IDENTITY,
                 validity: int = DEFAULT_VALIDITY):
        self.key = key
        self.directory = directory
        self.params = params
        self.suite = suite
        self.rng = rng
        self.ca_id = ca_id
        self.validity = validity
        self._outstanding: set[bytes] = set()

    def challenge(self) -> bytes:
        nonce = self.rng.randbytes(NONCE_LEN)
        self._outstanding.add(nonce)
        return nonce

    def register(self, request: CertificateRequest, now: int) -> DirectoryRecord:
        """Check for duplicates, verify the PoP, issue, and publish."""
        old = self.directory.lookup(request.subject)
        if old is not None and not old.revoked:
            raise DuplicateIdentityError(f"duplicate identity {request.subject}")
        if request.nonce not in self._outstanding:
            raise DirectoryError("registration nonce was not issued by this CA")
        self._outstanding.discard(request.nonce)
        serial = len(self.directory.identities()) + 1
        cert = issue_certificate(self.key, self.ca_id, request.subject, request.subject_pk,
                                 (now, now + self.validity), serial, request.nonce,
                                 request.pop, self.params, self.rng, self.suite)
        rec = DirectoryRecord(request.subject, request.subject_pk, cert)
        if old is None:
            self.directory.put(rec)
        else:
            self.directory.reissue(rec)
        return rec

    def revoke(self, identity: str, now: int) -> DirectoryRecord:
        return self.directory.revoke(identity, now)


class OcspResponder:
    """Revocation status plus the extra duty of vouching for the public key."""

    def __init__(self, directory: Directory, key: KeyPair, ca_pk: Point,
                 params: DomainParams, suite: Suite, rng):
        self.directory = directory
        self.key = key
        self.ca_pk = ca_pk
        self.params = params
        self.suite = suite
        self.rng = rng

    def respond(self, query: OcspRequest, now: int) -> tuple[OcspToken, bytes]:
        rec = self.directory.lookup(query.target)
        pk = pk_valid = None
        if rec is None:
            status = OcspStatus.UNKNOWN
        elif rec.revoked:
            status = OcspStatus.REVOKED
        else:
            status = OcspStatus.GOOD
            pk = rec.pk
            cert_ok = validate_certificate(
                rec.cert, self.ca_pk, now, self.params, self.suite) is CertStatus.GOOD
            pk_valid = (cert_ok and rec.cert.subject_pk == rec.pk
                        and not validate_public_key(rec.pk, self.params))
        token = OcspToken(query.target, status, pk, pk_valid, now, query.nonce,
                          None, self.params.curve_id, self.suite.suite_id)
        return wire.sign_ocsp_token(token, self.key.sk, self.rng)

    def handle(self, octets: bytes, now: int) -> bytes:
        return self.respond(wire.decode_ocsp_request(octets), now)[1]


class MailRelay:
    """FIFO store-and-forward per recipient; knows nothing about the PKI."""

    def __init__(self) -> None:
        self._boxes: dict[str, deque] = {}

    def enqueue(self, recipient: str, item) -> None:
        self._boxes.setdefault(recipient, deque()).append(item)

    def fetch(self, recipient: str) -> list:
        box = self._boxes.pop(recipient, None)
        return list(box) if box else []

    def pending(self, recipient: str) -> int:
        return len(self._boxes.get(recipient, ()))


@dataclass(frozen=True)
class Delivery:
    """What lands in a mailbox: envelope octets, plus VER_DV in delegated mode."""
    envelope: bytes
    dv_response: bytes | None = None


class DvLog:
    """Append-only text log: digest hex, timestamp, error code, identities."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.lines: list[str] = []

    def append(self, digest: bytes, at: int, verdict: DvVerdict, sender: str,
               recipient: str) -> str:
        line = f"{digest.hex()} {at} {verdict.label} {sender} {recipient}"
        self.lines.append(line)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return line


class DvServer:
    """Validates both parties on the initiator's behalf and signs the verdict.

    The DV server holds no user private keys and never opens envelopes; it
    checks certificates, public keys, revocation (via OCSP) and that the
    envelope is well formed and addressed as claimed.
    """

    def __init__(self, directory: Directory, ocsp: OcspResponder, key: KeyPair,
                 ca_pk: Point, ocsp_pk: Point, params: DomainParams, suite: Suite,
                 rng, relay: MailRelay, dv_log: DvLog | None = None,
                 transport: Transport = passthrough, relay_actor: str = MAIL_ACTOR):
        self.directory = directory
        self.ocsp = ocsp
        self.key = key
        self.ca_pk = ca_pk
        self.ocsp_pk = ocsp_pk
        self.params = params
        self.suite = suite
        self.rng = rng
        self.relay = relay
        self.log = dv_log if dv_log is not None else DvLog()
        self.transport = transport
        self.relay_actor = relay_actor

    def _ocsp_status(self, identity: str, now: int) -> OcspToken | DvVerdict:
        nonce = self.rng.randbytes(NONCE_LEN)
        query = wire.encode_ocsp_request(OcspRequest(identity, nonce))
        query = self.transport("dv-ocsp-query", DV_ACTOR, OCSP_ACTOR, query)
        answer = self.ocsp.handle(query, now)
        answer = self.transport("dv-ocsp-response", OCSP_ACTOR, DV_ACTOR, answer)
        try:
            token = wire.decode_ocsp_token(answer)
        except tlv.DecodeError:
            return DvVerdict.OCSP_SIGNATURE_BAD
        if not wire.verify_ocsp_token(token, self.ocsp_pk) or token.nonce != nonce:
            return DvVerdict.OCSP_SIGNATURE_BAD
        return token

    def _check_party(self, identity: str, now: int, revoked: DvVerdict,
                     unknown: DvVerdict) -> DvVerdict:
        token = self._ocsp_status(identity, now)
        if isinstance(token, DvVerdict):
            return token
        if token.status == OcspStatus.REVOKED:
            return revoked
        if token.status == OcspStatus.UNKNOWN:
            return unknown
        rec = self.directory.lookup(identity)
        if rec is None:
            return unknown
        status = validate_certificate(rec.cert, self.ca_pk, now, self.params, self.suite)
        if status is CertStatus.BAD_SIGNATURE:
            return DvVerdict.CERT_BAD_SIGNATURE
        if status is CertStatus.EXPIRED:
            return DvVerdict.CERT_EXPIRED
        if (validate_public_key(rec.pk, self.params) or token.pk != rec.pk
                or not token.pk_valid):
            return DvVerdict.BAD_PK
        return DvVerdict.OK

    def _check_envelope(self, envelope: bytes, sender: str, recipient: str) -> DvVerdict:
        try:
            env = wire.envelope_from_octets(envelope)
        except tlv.DecodeError:
            return DvVerdict.ENVELOPE_MALFORMED
        if (env.sender, env.recipient) != (sender, recipient):
            return DvVerdict.ENVELOPE_MALFORMED
        if env.curve_id != self.params.curve_id or env.suite_id != self.suite.suite_id:
            return DvVerdict.ENVELOPE_MALFORMED
        return DvVerdict.OK

    def validate(self, envelope: bytes, sender: str, recipient: str,
                 now: int) -> tuple[DvResponse, bytes]:
        verdict = self._check_envelope(envelope, sender, recipient)
        if verdict is DvVerdict.OK:
            verdict = self._check_party(sender, now, DvVerdict.SENDER_REVOKED,
                                        DvVerdict.SENDER_UNKNOWN)
        if verdict is DvVerdict.OK:
            verdict = self._check_party(recipient, now, DvVerdict.RECIPIENT_REVOKED,
                                        DvVerdict.RECIPIENT_UNKNOWN)
        digest = wire.dv_params_digest(envelope, sender, recipient, self.suite)
        resp = DvResponse(sender, recipient, verdict, digest, now, None,
                          self.params.curve_id, self.suite.suite_id)
        if verdict is not DvVerdict.OK:
            self.log.append(digest, now, verdict, sender, recipient)
            log.info("dv rejected %s -> %s: %s", sender, recipient, verdict.label)
            return resp, wire.encode_dv_response(resp)
        signed, octets = wire.sign_dv_response(resp, self.key.sk, self.rng)
        forwarded, ver = envelope, octets
        if self.relay_actor != DV_ACTOR:
            forwarded = self.transport("dv-forward", DV_ACTOR, self.relay_actor, envelope)
            ver = self.transport("dv-forward-ver", DV_ACTOR, self.relay_actor, octets)
        self.relay.enqueue(recipient, Delivery(forwarded, ver))
        return signed, octets

    def handle(self, octets: bytes, now: int) -> bytes:
        req: DvRequest = wire.decode_dv_request(octets)
        return self.validate(req.envelope, req.sender, req.recipient, now)[1]
