"""Bit-exact wire formats: the MIME entity carrying (R, C, s) and the server messages.

MIME output is canonical: CRLF line ends, the five headers in a fixed
order, base64 body wrapped at 76 columns.  Input is accepted with LF or
CRLF line ends, case-insensitive header names and folded header lines.

Server messages are TLV documents.  A signed message ends with two
records carrying its detached signature (R point, s scalar); the
signature covers every preceding octet exactly as transmitted.
"""

from __future__ import annotations

import base64
import binascii
import enum
import re
import textwrap
from dataclasses import dataclass, field

from . import tlv
from .curve_math import (
    CurveError, DomainParams, Point, curve_by_id, encode_point, encode_scalar)
from .crypto_suite import Suite, suite_by_id
from .keypair_pki import (
    Certificate, DetachedSignature, InvalidIdentityError, certificate_records,
    check_identity, read_certificate_records,
    read_point, read_scalar, read_suite_header, sign_detached, suite_header,
    verify_detached)
from .signcrypt import SigncryptedEnvelope

CONTENT_TYPE = 'application/smemail; version="1"'
HEADER_ORDER = ("MIME-Version", "Content-Type", "Content-Transfer-Encoding", "From", "To")
_CANONICAL = {name.lower(): name for name in HEADER_ORDER}
_HEADER_LINE = re.compile(r"^([!-9;-~]+):[ \t]*(.*)$")


@dataclass(frozen=True)
class MimeEntity:
    headers: tuple[tuple[str, str], ...]
    body: str

    def header(self, name: str) -> str | None:
        wanted = name.lower()
        for key, value in self.headers:
            if key.lower() == wanted:
                return value
        return None


def render_mime(entity: MimeEntity) -> str:
    lines = [f"{name}: {value}" for name, value in entity.headers]
    lines.append("")
    lines.extend(entity.body.splitlines())
    return "\r\n".join(lines) + "\r\n"


def parse_mime(text: str) -> MimeEntity:
    """Parse and validate an SMEmail MIME entity.

    Offsets in errors are character offsets into ``text``.
    """
    headers: list[tuple[str, str]] = []
    pos = 0
    while True:
        end = text.find("\n", pos)
        if end < 0:
            raise tlv.DecodeError("missing blank line after headers", len(text))
        line = text[pos:end].rstrip("\r")
        if line == "":
            pos = end + 1
            break
        if line[0] in " \t":
            if not headers:
                raise tlv.DecodeError("continuation line before any header", pos)
            name, value = headers[-1]
            headers[-1] = (name, value + " " + line.strip())
        else:
            match = _HEADER_LINE.match(line)
            if not match:
                raise tlv.DecodeError("malformed header line", pos)
            name = match.group(1)
            canonical = _CANONICAL.get(name.lower())
            if canonical is None:
                raise tlv.DecodeError(f"unexpected header {name!r}", pos)
            if any(existing == canonical for existing, _ in headers):
                raise tlv.DecodeError(f"duplicate header {canonical}", pos)
            headers.append((canonical, match.group(2).strip()))
        pos = end + 1
    present = {name for name, _ in headers}
    for name in HEADER_ORDER:
        if name not in present:
            raise tlv.DecodeError(f"missing header {name}", pos)
    values = dict(headers)
    if values["MIME-Version"] != "1.0":
        raise tlv.DecodeError("unsupported MIME-Version", 0)
    if values["Content-Type"].replace(" ", "").lower() != CONTENT_TYPE.replace(" ", "").lower():
        raise tlv.DecodeError("Content-Type is not application/smemail", 0)
    if values["Content-Transfer-Encoding"].lower() != "base64":
        raise tlv.DecodeError("Content-Transfer-Encoding must be base64", 0)
    body = "".join(text[pos:].split())
    ordered = tuple((name, values[name]) for name in HEADER_ORDER)
    return MimeEntity(ordered, "\n".join(textwrap.wrap(body, 76)))


def _b64decode(body: str, offset: int) -> bytes:
    try:
        return base64.b64decode("".join(body.split()), validate=True)
    except (binascii.Error, ValueError):
        raise tlv.DecodeError("body is not valid base64", offset) from None


# -- envelope ---------------------------------------------------------------

def envelope_body(env: SigncryptedEnvelope) -> bytes:
    params = curve_by_id(env.curve_id)
    if env.R.is_infinity:
        raise tlv.EncodeError("R must not be the point at infinity")
    return tlv.version_record(tlv.KIND_ENVELOPE) + tlv.encode_records([
        (tlv.CURVE_ID, bytes([env.curve_id])),
        (tlv.SUITE_ID, bytes([env.suite_id])),
        (tlv.POINT, encode_point(env.R, params)),
        (tlv.CIPHERTEXT, env.C),
        (tlv.SCALAR, encode_scalar(env.s, params)),
    ])


def parse_envelope_body(data: bytes, sender: str, recipient: str) -> SigncryptedEnvelope:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_ENVELOPE)
    offset = reader.pos
    R = read_point(reader, params)
    if R.is_infinity:
        raise tlv.DecodeError("R must not be the point at infinity", offset)
    C = reader.read(tlv.CIPHERTEXT)
    s = read_scalar(reader, params)
    reader.finish()
    return SigncryptedEnvelope(sender, recipient, R, C, s, params.curve_id, suite.suite_id)


def encode_envelope(env: SigncryptedEnvelope) -> MimeEntity:
    body = base64.b64encode(envelope_body(env)).decode("ascii")
    headers = (
        ("MIME-Version", "1.0"),
        ("Content-Type", CONTENT_TYPE),
        ("Content-Transfer-Encoding", "base64"),
        ("From", env.sender),
        ("To", env.recipient),
    )
    return MimeEntity(headers, "\n".join(textwrap.wrap(body, 76)))


def decode_envelope(entity: MimeEntity) -> SigncryptedEnvelope:
    sender = entity.header("From")
    recipient = entity.header("To")
    if not sender or not recipient:
        raise tlv.DecodeError("From and To headers are required", 0)
    for name, value in (("From", sender), ("To", recipient)):
        try:
            check_identity(value)
        except InvalidIdentityError:
            raise tlv.DecodeError(f"{name} is not a valid identity", 0) from None
    return parse_envelope_body(_b64decode(entity.body, 0), sender, recipient)


def envelope_to_octets(env: SigncryptedEnvelope) -> bytes:
    return render_mime(encode_envelope(env)).encode("ascii")


def envelope_from_octets(data: bytes) -> SigncryptedEnvelope:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise tlv.DecodeError("MIME entity must be 7-bit ASCII", exc.start) from None
    return decode_envelope(parse_mime(text))


# -- server messages --------------------------------------------------------

class OcspStatus(enum.IntEnum):
    GOOD = 0
    REVOKED = 1
    UNKNOWN = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class DvVerdict(enum.IntEnum):
    OK = 0
    SENDER_REVOKED = 1
    SENDER_UNKNOWN = 2
    RECIPIENT_REVOKED = 3
    RECIPIENT_UNKNOWN = 4
    BAD_PK = 5
    CERT_EXPIRED = 6
    CERT_BAD_SIGNATURE = 7
    OCSP_SIGNATURE_BAD = 8
    ENVELOPE_MALFORMED = 9

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class OcspRequest:
    target: str
    nonce: bytes


@dataclass(frozen=True)
class OcspToken:
    target: str
    status: OcspStatus
    pk: Point | None
    pk_valid: bool | None
    produced_at: int
    nonce: bytes
    signature: DetachedSignature | None = None
    curve_id: int = 0
    suite_id: int = 0
    signed_region: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class DvRequest:
    sender: str
    recipient: str
    envelope: bytes
    curve_id: int
    suite_id: int


@dataclass(frozen=True)
class DvResponse:
    sender: str
    recipient: str
    verdict: DvVerdict
    params_digest: bytes
    produced_at: int
    signature: DetachedSignature | None = None
    curve_id: int = 0
    suite_id: int = 0
    signed_region: bytes = field(default=b"", compare=False, repr=False)


@dataclass(frozen=True)
class DirectoryRequest:
    target: str


@dataclass(frozen=True)
class DirectoryResponse:
    target: str
    status: OcspStatus
    cert: Certificate | None
    curve_id: int
    suite_id: int


def _ident(text: str) -> tuple[int, bytes]:
    return (tlv.IDENTITY, tlv.encode_text(text))


def _ts(value: int) -> tuple[int, bytes]:
    return (tlv.TIMESTAMP, tlv.encode_uint(value, tlv.TIMESTAMP_LEN))


def _signature_records(sig: DetachedSignature, params: DomainParams) -> bytes:
    return tlv.encode_records([
        (tlv.POINT, encode_point(sig.R, params)),
        (tlv.SCALAR, encode_scalar(sig.s, params)),
    ])


def _params(curve_id: int, suite_id: int) -> tuple[DomainParams, Suite]:
    return curve_by_id(curve_id), suite_by_id(suite_id)


def encode_ocsp_request(req: OcspRequest) -> bytes:
    return tlv.version_record(tlv.KIND_OCSP_REQUEST) + tlv.encode_records(
        [_ident(req.target), (tlv.NONCE, req.nonce)])


def decode_ocsp_request(data: bytes) -> OcspRequest:
    reader = tlv.TlvReader(data)
    reader.read_version(tlv.KIND_OCSP_REQUEST)
    target = reader.read_text()
    nonce = reader.read(tlv.NONCE)
    reader.finish()
    return OcspRequest(target, nonce)


def ocsp_token_body(token: OcspToken) -> bytes:
    params, suite = _params(token.curve_id, token.suite_id)
    records = [_ident(token.target), (tlv.STATUS, bytes([token.status]))]
    if token.status == OcspStatus.GOOD:
        records.append((tlv.POINT, encode_point(token.pk, params)))
        records.append((tlv.STATUS, bytes([1 if token.pk_valid else 0])))
    records += [_ts(token.produced_at), (tlv.NONCE, token.nonce)]
    return suite_header(tlv.KIND_OCSP_RESPONSE, params, suite) + tlv.encode_records(records)


def sign_ocsp_token(token: OcspToken, sk: int, rng) -> tuple[OcspToken, bytes]:
    params, suite = _params(token.curve_id, token.suite_id)
    body = ocsp_token_body(token)
    sig = sign_detached(body, sk, params, rng, suite)
    signed = OcspToken(token.target, token.status, token.pk, token.pk_valid,
                       token.produced_at, token.nonce, sig, token.curve_id,
                       token.suite_id, body)
    return signed, body + _signature_records(sig, params)


def encode_ocsp_token(token: OcspToken) -> bytes:
    params, _ = _params(token.curve_id, token.suite_id)
    return ocsp_token_body(token) + _signature_records(token.signature, params)


def decode_ocsp_token(data: bytes) -> OcspToken:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_OCSP_RESPONSE)
    target = reader.read_text()
    raw_status = reader.read_octet(tlv.STATUS)
    try:
        status = OcspStatus(raw_status)
    except ValueError:
        raise tlv.DecodeError(f"unknown OCSP status {raw_status}", reader.value_offset) from None
    pk = pk_valid = None
    if status == OcspStatus.GOOD:
        pk = read_point(reader, params)
        flag = reader.read_octet(tlv.STATUS)
        if flag not in (0, 1):
            raise tlv.DecodeError("pk_valid flag must be 0 or 1", reader.value_offset)
        pk_valid = bool(flag)
    produced_at = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
    nonce = reader.read(tlv.NONCE)
    signed_end = reader.pos
    R = read_point(reader, params)
    s = read_scalar(reader, params)
    reader.finish()
    return OcspToken(target, status, pk, pk_valid, produced_at, nonce,
                     DetachedSignature(R, s), params.curve_id, suite.suite_id,
                     bytes(data[:signed_end]))


def verify_ocsp_token(token: OcspToken, ocsp_pk: Point) -> bool:
    if token.signature is None:
        return False
    params, suite = _params(token.curve_id, token.suite_id)
    return verify_detached(token.signed_region, token.signature, ocsp_pk, params, suite)


def encode_dv_request(req: DvRequest) -> bytes:
    params, suite = _params(req.curve_id, req.suite_id)
    return suite_header(tlv.KIND_DV_REQUEST, params, suite) + tlv.encode_records([
        _ident(req.sender), _ident(req.recipient), (tlv.CIPHERTEXT, req.envelope)])


def decode_dv_request(data: bytes) -> DvRequest:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_DV_REQUEST)
    sender = reader.read_text()
    recipient = reader.read_text()
    envelope = reader.read(tlv.CIPHERTEXT)
    reader.finish()
    return DvRequest(sender, recipient, envelope, params.curve_id, suite.suite_id)


def dv_response_body(resp: DvResponse) -> bytes:
    params, suite = _params(resp.curve_id, resp.suite_id)
    return suite_header(tlv.KIND_DV_RESPONSE, params, suite) + tlv.encode_records([
        _ident(resp.sender), _ident(resp.recipient),
        (tlv.STATUS, bytes([resp.verdict])),
        (tlv.DIGEST, resp.params_digest),
        _ts(resp.produced_at),
    ])


def sign_dv_response(resp: DvResponse, sk: int, rng) -> tuple[DvResponse, bytes]:
    params, suite = _params(resp.curve_id, resp.suite_id)
    body = dv_response_body(resp)
    sig = sign_detached(body, sk, params, rng, suite)
    signed = DvResponse(resp.sender, resp.recipient, resp.verdict, resp.params_digest,
                        resp.produced_at, sig, resp.curve_id, resp.suite_id, body)
    return signed, body + _signature_records(sig, params)


def encode_dv_response(resp: DvResponse) -> bytes:
    params, _ = _params(resp.curve_id, resp.suite_id)
    body = dv_response_body(resp)
    if resp.signature is None:
        return body
    return body + _signature_records(resp.signature, params)


def decode_dv_response(data: bytes) -> DvResponse:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_DV_RESPONSE)
    sender = reader.read_text()
    recipient = reader.read_text()
    raw = reader.read_octet(tlv.STATUS)
    try:
        verdict = DvVerdict(raw)
    except ValueError:
        raise tlv.DecodeError(f"unknown DV verdict {raw}", reader.value_offset) from None
    digest = reader.read(tlv.DIGEST)
    produced_at = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
    signed_end = reader.pos
    sig = None
    if verdict == DvVerdict.OK:
        R = read_point(reader, params)
        s = read_scalar(reader, params)
        sig = DetachedSignature(R, s)
    reader.finish()
    return DvResponse(sender, recipient, verdict, digest, produced_at, sig,
                      params.curve_id, suite.suite_id, bytes(data[:signed_end]))


def verify_dv_response(resp: DvResponse, dv_pk: Point) -> bool:
    if resp.signature is None:
        return False
    params, suite = _params(resp.curve_id, resp.suite_id)
    return verify_detached(resp.signed_region, resp.signature, dv_pk, params, suite)


def dv_params_digest(envelope: bytes, sender: str, recipient: str, suite: Suite) -> bytes:
    """Digest over the exact envelope octets plus both identifiers."""
    return suite.digest(envelope + tlv.length_prefixed(tlv.encode_text(sender))
                        + tlv.length_prefixed(tlv.encode_text(recipient)))


def encode_directory_request(req: DirectoryRequest) -> bytes:
    return tlv.version_record(tlv.KIND_DIRECTORY_REQUEST) + tlv.encode_records(
        [_ident(req.target)])


def decode_directory_request(data: bytes) -> DirectoryRequest:
    reader = tlv.TlvReader(data)
    reader.read_version(tlv.KIND_DIRECTORY_REQUEST)
    target = reader.read_text()
    reader.finish()
    return DirectoryRequest(target)


def encode_directory_response(resp: DirectoryResponse) -> bytes:
    params, suite = _params(resp.curve_id, resp.suite_id)
    out = suite_header(tlv.KIND_DIRECTORY_RESPONSE, params, suite) + tlv.encode_records([
        _ident(resp.target), (tlv.STATUS, bytes([resp.status]))])
    if resp.status == OcspStatus.GOOD:
        out += certificate_records(resp.cert, params)
    return out


def decode_directory_response(data: bytes) -> DirectoryResponse:
    reader = tlv.TlvReader(data)
    params, suite = read_suite_header(reader, tlv.KIND_DIRECTORY_RESPONSE)
    target = reader.read_text()
    raw = reader.read_octet(tlv.STATUS)
    try:
        status = OcspStatus(raw)
    except ValueError:
        raise tlv.DecodeError(f"unknown directory status {raw}", reader.value_offset) from None
    cert = None
    if status == OcspStatus.GOOD:
        cert = read_certificate_records(reader, params, suite.suite_id)
    reader.finish()
    return DirectoryResponse(target, status, cert, params.curve_id, suite.suite_id)


_DECODERS = {
    tlv.KIND_OCSP_REQUEST: decode_ocsp_request,
    tlv.KIND_OCSP_RESPONSE: decode_ocsp_token,
    tlv.KIND_DV_REQUEST: decode_dv_request,
    tlv.KIND_DV_RESPONSE: decode_dv_response,
    tlv.KIND_DIRECTORY_REQUEST: decode_directory_request,
    tlv.KIND_DIRECTORY_RESPONSE: decode_directory_response,
}

_ENCODERS = {
    OcspRequest: encode_ocsp_request,
    OcspToken: encode_ocsp_token,
    DvRequest: encode_dv_request,
    DvResponse: encode_dv_response,
    DirectoryRequest: encode_directory_request,
    DirectoryResponse: encode_directory_response,
}


def encode_message(msg) -> bytes:
    try:
        encoder = _ENCODERS[type(msg)]
    except KeyError:
        raise TypeError(f"not a server message: {type(msg).__name__}") from None
    return encoder(msg)


def decode_message(data: bytes):
    """Decode any of the six server message kinds, dispatching on the version record."""
    kind = tlv.peek_kind(data)
    try:
        decoder = _DECODERS[kind]
    except KeyError:
        raise tlv.DecodeError(f"not a server message kind: 0x{kind:02x}", 4) from None
    try:
        return decoder(data)
    except CurveError as exc:
        raise tlv.DecodeError(str(exc), 0) from None
