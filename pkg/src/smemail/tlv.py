"""Tag-length-value container shared by every SMEmail binary format.

A record is one tag octet, a two-octet big-endian length and the value.
Records concatenate without padding.  Every document starts with a
version record whose value is ``(PROTOCOL_VERSION, kind)`` so a decoder
can tell an envelope body from a certificate or an OCSP token.
"""

from __future__ import annotations

import base64
import binascii
import textwrap
from typing import Iterable

PROTOCOL_VERSION = 1
MAX_VALUE_LEN = 0xFFFF

# tag registry
VERSION = 0x01
CURVE_ID = 0x02
SUITE_ID = 0x03
POINT = 0x04
CIPHERTEXT = 0x05
SCALAR = 0x06
IDENTITY = 0x07
STATUS = 0x08
TIMESTAMP = 0x09
DIGEST = 0x0A
SERIAL = 0x0B
NONCE = 0x0C

TAG_NAMES = {
    VERSION: "version",
    CURVE_ID: "curve_id",
    SUITE_ID: "suite_id",
    POINT: "point",
    CIPHERTEXT: "ciphertext",
    SCALAR: "scalar",
    IDENTITY: "identity",
    STATUS: "status",
    TIMESTAMP: "timestamp",
    DIGEST: "digest",
    SERIAL: "serial",
    NONCE: "nonce",
}

# document kinds carried in the version record
KIND_ENVELOPE = 0x01
KIND_CERTIFICATE = 0x02
KIND_KEYSTORE = 0x03
KIND_CERT_REQUEST = 0x04
KIND_DIRECTORY_RECORD = 0x05
KIND_TRANSCRIPT = 0x06
KIND_OCSP_REQUEST = 0x10
KIND_OCSP_RESPONSE = 0x11
KIND_DV_REQUEST = 0x12
KIND_DV_RESPONSE = 0x13
KIND_DIRECTORY_REQUEST = 0x14
KIND_DIRECTORY_RESPONSE = 0x15

KIND_NAMES = {
    KIND_ENVELOPE: "envelope",
    KIND_CERTIFICATE: "certificate",
    KIND_KEYSTORE: "keystore",
    KIND_CERT_REQUEST: "certificate-request",
    KIND_DIRECTORY_RECORD: "directory-record",
    KIND_TRANSCRIPT: "transcript",
    KIND_OCSP_REQUEST: "ocsp-request",
    KIND_OCSP_RESPONSE: "ocsp-response",
    KIND_DV_REQUEST: "dv-request",
    KIND_DV_RESPONSE: "dv-response",
    KIND_DIRECTORY_REQUEST: "directory-request",
    KIND_DIRECTORY_RESPONSE: "directory-response",
}

TIMESTAMP_LEN = 8
SERIAL_LEN = 8


class DecodeError(ValueError):
    """Malformed input; ``offset`` is the index of the offending octet."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.reason = message
        self.offset = offset


class EncodeError(ValueError):
    pass


def record(tag: int, value: bytes) -> bytes:
    if tag not in TAG_NAMES:
        raise EncodeError(f"unknown tag 0x{tag:02x}")
    if len(value) > MAX_VALUE_LEN:
        raise EncodeError(
            f"{TAG_NAMES[tag]} value of {len(value)} octets exceeds {MAX_VALUE_LEN}")
    return bytes([tag]) + len(value).to_bytes(2, "big") + bytes(value)


def encode_records(records: Iterable[tuple[int, bytes]]) -> bytes:
    return b"".join(record(tag, value) for tag, value in records)


def version_record(kind: int) -> bytes:
    return record(VERSION, bytes([PROTOCOL_VERSION, kind]))


def encode_uint(value: int, width: int) -> bytes:
    if value < 0:
        raise EncodeError("negative integer")
    try:
        return value.to_bytes(width, "big")
    except OverflowError:
        raise EncodeError(f"integer does not fit in {width} octets") from None


def encode_text(text: str) -> bytes:
    return text.encode("utf-8")


def length_prefixed(data: bytes) -> bytes:
    """Two-octet length prefix, used wherever identifiers are hashed."""
    if len(data) > MAX_VALUE_LEN:
        raise EncodeError("field too long for a two-octet length prefix")
    return len(data).to_bytes(2, "big") + data


class TlvReader:
    """Sequential reader enforcing a fixed record order.

    ``offset`` of the last record read is kept so value-level errors can be
    reported against the value's first octet.
    """

    def __init__(self, data: bytes, base_offset: int = 0):
        self.data = bytes(data)
        self.pos = 0
        self.base = base_offset
        self.value_offset = base_offset

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def _header(self) -> tuple[int, int]:
        if len(self.data) - self.pos < 3:
            raise DecodeError("truncated record header", self.base + self.pos)
        tag = self.data[self.pos]
        if tag not in TAG_NAMES:
            raise DecodeError(f"unknown tag 0x{tag:02x}", self.base + self.pos)
        length = int.from_bytes(self.data[self.pos + 1:self.pos + 3], "big")
        if self.pos + 3 + length > len(self.data):
            raise DecodeError(
                f"{TAG_NAMES[tag]} length {length} runs past end of input",
                self.base + self.pos + 1)
        return tag, length

    def peek(self) -> int | None:
        if self.at_end():
            return None
        return self._header()[0]

    def read(self, tag: int) -> bytes:
        if self.at_end():
            raise DecodeError(f"missing {TAG_NAMES[tag]} record", self.base + self.pos)
        found, length = self._header()
        if found != tag:
            raise DecodeError(
                f"expected {TAG_NAMES[tag]} record, found {TAG_NAMES[found]}",
                self.base + self.pos)
        start = self.pos + 3
        self.value_offset = self.base + start
        self.pos = start + length
        return self.data[start:self.pos]

    def read_optional(self, tag: int) -> bytes | None:
        if self.peek() == tag:
            return self.read(tag)
        return None

    def read_version(self, kind: int) -> None:
        value = self.read(VERSION)
        if len(value) != 2 or value[0] != PROTOCOL_VERSION:
            raise DecodeError("unsupported protocol version", self.value_offset)
        if value[1] != kind:
            raise DecodeError(
                f"expected {KIND_NAMES.get(kind, kind)} document, found "
                f"{KIND_NAMES.get(value[1], hex(value[1]))}", self.value_offset + 1)

    def read_uint(self, tag: int, width: int) -> int:
        value = self.read(tag)
        if len(value) != width:
            raise DecodeError(
                f"{TAG_NAMES[tag]} must be {width} octets, got {len(value)}",
                self.value_offset)
        return int.from_bytes(value, "big")

    def read_octet(self, tag: int) -> int:
        return self.read_uint(tag, 1)

    def read_text(self, tag: int = IDENTITY) -> str:
        value = self.read(tag)
        try:
            return value.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("identity is not valid UTF-8",
                              self.value_offset + exc.start) from None

    def finish(self) -> None:
        if not self.at_end():
            tag = self.data[self.pos]
            name = TAG_NAMES.get(tag, f"0x{tag:02x}")
            raise DecodeError(f"unexpected trailing {name} record", self.base + self.pos)


def peek_kind(data: bytes) -> int:
    """Kind octet of a TLV document, or DecodeError."""
    reader = TlvReader(data)
    value = reader.read(VERSION)
    if len(value) != 2 or value[0] != PROTOCOL_VERSION:
        raise DecodeError("unsupported protocol version", reader.value_offset)
    return value[1]


def armor(data: bytes) -> str:
    """Base64 text form used for files on disk, wrapped at 76 columns."""
    encoded = base64.b64encode(data).decode("ascii")
    return "\n".join(textwrap.wrap(encoded, 76)) + "\n"


def dearmor(text: str | bytes) -> bytes:
    if isinstance(text, bytes):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError as exc:
            raise DecodeError("armored data is not ASCII", exc.start) from None
    compact = "".join(text.split())
    try:
        return base64.b64decode(compact, validate=True)
    except (binascii.Error, ValueError):
        raise DecodeError("invalid base64", 0) from None
