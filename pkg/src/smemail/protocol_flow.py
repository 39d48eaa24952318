"""Client behaviour for the composer (Alice) and the deliverer (Bob).

Basic topology: each side fetches a signed OCSP token for the other party,
checks it, then signcrypts / unsigncrypts.  Delegated topologies route the
envelope through the DV server; the composer only needs the recipient's
public key (pinned or looked up once in the directory) and the deliverer
checks VER_DV before opening the envelope.

All traffic goes through a ``Network``, which stamps a virtual clock,
records a transcript and applies any armed in-flight mutation.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from . import tlv, wire
from .curve_math import DomainParams, Point, encode_point
from .crypto_suite import Suite
from .keypair_pki import (
    CertStatus, InvalidPublicKeyError, KeyPair, validate_certificate,
    validate_public_key)
from .services import (
    DIRECTORY_ACTOR, DV_ACTOR, MAIL_ACTOR, NONCE_LEN, OCSP_ACTOR, Delivery,
    Directory, DvServer, MailRelay, OcspResponder)
from .signcrypt import (
    EnvelopeInvalidError, SignatureInvalidError, signcrypt, unsigncrypt_with_key)
from .wire import DvVerdict, OcspStatus

log = logging.getLogger(__name__)

BASIC = "basic"
FIG4 = "delegated-fig4"
FIG5 = "delegated-fig5"
TOPOLOGIES = (BASIC, FIG4, FIG5)
TOPOLOGY_ALIASES = {"basic": BASIC, "fig4": FIG4, "fig5": FIG5,
                    FIG4: FIG4, FIG5: FIG5}

DEFAULT_FRESHNESS_WINDOW = 300
SIM_EPOCH = 1_700_000_000

# rejection stages on the receiving side
STAGE_OCSP = "ocsp"
STAGE_DIRECTORY = "directory"
STAGE_DV = "dv"
STAGE_DV_SIGNATURE = "dv-signature"
STAGE_DIGEST_MISMATCH = "digest-mismatch"
STAGE_ENVELOPE_INVALID = "envelope-invalid"
STAGE_SIGNATURE_INVALID = "signature-invalid"
STAGE_REPLAY = "replay"

LABELS = (
    "ocsp-query", "ocsp-response", "submit", "ack", "fetch", "fetch-ver",
    "dir-query", "dir-response", "dv-submit", "dv-response", "dv-ocsp-query",
    "dv-ocsp-response", "dv-forward", "dv-forward-ver",
    "validated", "signcrypt", "accept", "reject", "abort", "register", "revoke",
    "clock", "attack", "verdict",
)
LABEL_CODES = {name: i + 1 for i, name in enumerate(LABELS)}
MESSAGE_LABELS = frozenset(LABELS[:14])


def normalize_topology(name: str) -> str:
    try:
        return TOPOLOGY_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown topology {name!r}") from None


class VirtualClock:
    def __init__(self, start: int = SIM_EPOCH):
        self.now = start

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("time only moves forward")
        self.now += seconds
        return self.now

    def tick(self) -> int:
        return self.advance(1)


class WallClock:
    def __init__(self, now: int):
        self.now = now

    def advance(self, seconds: int) -> int:
        self.now += seconds
        return self.now

    def tick(self) -> int:
        return self.now


@dataclass(frozen=True)
class Event:
    seq: int
    time: int
    actor: str
    peer: str
    label: str
    payload: bytes = b""

    @property
    def is_message(self) -> bool:
        return self.label in MESSAGE_LABELS


class Network:
    """In-process transport with a transcript and one-shot tamper hooks."""

    def __init__(self, clock):
        self.clock = clock
        self.events: list[Event] = []
        self._tamper: dict[str, deque] = {}
        self.taps: list[Callable[[Event], None]] = []

    def arm(self, leg: str, mutate: Callable[[bytes], bytes]) -> None:
        self._tamper.setdefault(leg, deque()).append(mutate)

    def _record(self, actor: str, peer: str, label: str, payload: bytes) -> Event:
        if label not in LABEL_CODES:
            raise ValueError(f"unregistered transcript label {label!r}")
        event = Event(len(self.events), self.clock.now, actor, peer, label, payload)
        self.events.append(event)
        for tap in self.taps:
            tap(event)
        return event

    def carry(self, leg: str, src: str, dst: str, octets: bytes) -> bytes:
        self.clock.tick()
        pending = self._tamper.get(leg)
        if pending:
            octets = pending.popleft()(octets)
        self._record(src, dst, leg, octets)
        return octets

    def note(self, actor: str, label: str, detail: str = "", peer: str = "") -> None:
        self._record(actor, peer, label, detail.encode("utf-8"))


def encode_transcript(events: list[Event]) -> bytes:
    out = [tlv.version_record(tlv.KIND_TRANSCRIPT)]
    for ev in events:
        out.append(tlv.encode_records([
            (tlv.SERIAL, tlv.encode_uint(ev.seq, tlv.SERIAL_LEN)),
            (tlv.TIMESTAMP, tlv.encode_uint(ev.time, tlv.TIMESTAMP_LEN)),
            (tlv.IDENTITY, tlv.encode_text(ev.actor)),
            (tlv.IDENTITY, tlv.encode_text(ev.peer)),
            (tlv.STATUS, bytes([LABEL_CODES[ev.label]])),
            (tlv.CIPHERTEXT, ev.payload),
        ]))
    return b"".join(out)


def decode_transcript(data: bytes) -> list[Event]:
    reader = tlv.TlvReader(data)
    reader.read_version(tlv.KIND_TRANSCRIPT)
    events = []
    while not reader.at_end():
        seq = reader.read_uint(tlv.SERIAL, tlv.SERIAL_LEN)
        time = reader.read_uint(tlv.TIMESTAMP, tlv.TIMESTAMP_LEN)
        actor = reader.read_text()
        peer = reader.read_text()
        code = reader.read_octet(tlv.STATUS)
        if not 1 <= code <= len(LABELS):
            raise tlv.DecodeError(f"unknown transcript label {code}", reader.value_offset)
        payload = reader.read(tlv.CIPHERTEXT)
        events.append(Event(seq, time, actor, peer, LABELS[code - 1], payload))
    return events


def validation_precedes_signcryption(events: list[Event]) -> bool:
    """Every signcrypt note follows a fresh 'validated' note from the same actor."""
    validated: dict[str, set] = {}
    for ev in events:
        if ev.label == "validated":
            validated.setdefault(ev.actor, set()).add(ev.payload)
        elif ev.label == "signcrypt":
            seen = validated.get(ev.actor, set())
            if ev.payload not in seen:
                return False
            seen.discard(ev.payload)
    return True


@dataclass(frozen=True)
class TrustedRoots:
    ca_pk: Point
    ocsp_pk: Point
    dv_pk: Point | None = None


@dataclass(frozen=True)
class KnownKey:
    pk: Point
    source: str  # ocsp | directory | pinned
    fetched_at: int


@dataclass
class ClientState:
    identity: str
    keypair: KeyPair
    roots: TrustedRoots
    params: DomainParams
    suite: Suite
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW
    known_keys: dict[str, KnownKey] = field(default_factory=dict)
    replay_cache: set[bytes] = field(default_factory=set)

    def pin(self, identity: str, pk: Point, now: int, source: str = "pinned") -> None:
        violations = validate_public_key(pk, self.params)
        if violations:
            raise InvalidPublicKeyError(violations)
        self.known_keys[identity] = KnownKey(pk, source, now)


@dataclass
class Deployment:
    """The server side plus the wire, as seen by clients."""
    params: DomainParams
    suite: Suite
    clock: object
    network: Network
    directory: Directory
    ocsp: OcspResponder
    mail: MailRelay
    dv: DvServer | None = None
    topology: str = BASIC

    @property
    def mailbox_actor(self) -> str:
        return DV_ACTOR if self.topology == FIG5 else MAIL_ACTOR


class SendAborted(Exception):
    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage
        self.detail = detail

    @property
    def token(self) -> str:
        return f"abort:{self.stage}:{self.detail}"


@dataclass(frozen=True)
class Received:
    sender: str
    message: bytes | None
    stage: str | None = None
    detail: str = ""
    session_key: bytes | None = field(default=None, repr=False)
    envelope: bytes = field(default=b"", repr=False)

    @property
    def accepted(self) -> bool:
        return self.stage is None

    @property
    def token(self) -> str:
        if self.accepted:
            return f"accept:{self.sender}:{self.message.decode('utf-8', 'replace')}"
        return f"reject:{self.stage}:{self.detail}"


class _Reject(Exception):
    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage
        self.detail = detail


def _query_ocsp(client: ClientState, target: str, dep: Deployment, rng,
                error: type[Exception]) -> Point:
    """Fetch and check a token for ``target``; raise ``error(stage, detail)`` on failure."""
    me = client.identity
    nonce = rng.randbytes(NONCE_LEN)
    query = dep.network.carry("ocsp-query", me, OCSP_ACTOR,
                              wire.encode_ocsp_request(wire.OcspRequest(target, nonce)))
    answer = dep.ocsp.handle(query, dep.clock.now)
    answer = dep.network.carry("ocsp-response", OCSP_ACTOR, me, answer)
    try:
        token = wire.decode_ocsp_token(answer)
    except tlv.DecodeError:
        raise error(STAGE_OCSP, "ocsp-signature-bad") from None
    if not wire.verify_ocsp_token(token, client.roots.ocsp_pk):
        raise error(STAGE_OCSP, "ocsp-signature-bad")
    if token.nonce != nonce:
        raise error(STAGE_OCSP, "nonce-mismatch")
    if token.target != target:
        raise error(STAGE_OCSP, "target-mismatch")
    now = dep.clock.now
    if token.produced_at > now or now - token.produced_at > client.freshness_window:
        raise error(STAGE_OCSP, "stale")
    if token.status != OcspStatus.GOOD:
        raise error(STAGE_OCSP, token.status.label)
    if not token.pk_valid or validate_public_key(token.pk, client.params):
        raise error(STAGE_OCSP, "pk-invalid")
    client.known_keys[target] = KnownKey(token.pk, "ocsp", now)
    return token.pk


def _directory_key(client: ClientState, target: str, dep: Deployment,
                   error: type[Exception]) -> Point:
    known = client.known_keys.get(target)
    if known is not None:
        return known.pk
    me = client.identity
    query = dep.network.carry("dir-query", me, DIRECTORY_ACTOR,
                              wire.encode_directory_request(wire.DirectoryRequest(target)))
    answer = dep.network.carry("dir-response", DIRECTORY_ACTOR, me,
                               dep.directory.handle(query))
    try:
        resp = wire.decode_directory_response(answer)
    except tlv.DecodeError:
        raise error(STAGE_DIRECTORY, "malformed") from None
    if resp.status != OcspStatus.GOOD or resp.target != target:
        raise error(STAGE_DIRECTORY, resp.status.label)
    cert = resp.cert
    status = validate_certificate(cert, client.roots.ca_pk, dep.clock.now,
                                  client.params, client.suite)
    if status is not CertStatus.GOOD:
        raise error(STAGE_DIRECTORY, f"cert-{status.value}")
    if cert.subject != target or validate_public_key(cert.subject_pk, client.params):
        raise error(STAGE_DIRECTORY, "pk-invalid")
    client.known_keys[target] = KnownKey(cert.subject_pk, "directory", dep.clock.now)
    return cert.subject_pk


def compose_and_send(client: ClientState, recipient: str, m: bytes, dep: Deployment,
                     rng) -> bytes:
    """Validate the recipient, signcrypt ``m`` and submit it; returns the envelope octets.

    Raises ``SendAborted`` before any signcryption when validation fails.
    """
    me = client.identity
    net = dep.network
    try:
        if dep.topology == BASIC:
            pk_b = _query_ocsp(client, recipient, dep, rng, SendAborted)
        else:
            pk_b = _directory_key(client, recipient, dep, SendAborted)
    except SendAborted as exc:
        net.note(me, "abort", f"{exc.stage}:{exc.detail}", peer=recipient)
        raise
    net.note(me, "validated", recipient)
    env = signcrypt(m, client.keypair, me, pk_b, recipient, client.params, rng, client.suite)
    net.note(me, "signcrypt", recipient)
    octets = wire.envelope_to_octets(env)

    if dep.topology == BASIC:
        submitted = net.carry("submit", me, MAIL_ACTOR, octets)
        dep.mail.enqueue(recipient, Delivery(submitted))
        net.carry("ack", MAIL_ACTOR, me, b"queued")
        return octets

    request = wire.encode_dv_request(wire.DvRequest(
        me, recipient, octets, client.params.curve_id, client.suite.suite_id))
    request = net.carry("dv-submit", me, DV_ACTOR, request)
    answer = net.carry("dv-response", DV_ACTOR, me, dep.dv.handle(request, dep.clock.now))
    try:
        resp = wire.decode_dv_response(answer)
    except tlv.DecodeError:
        raise SendAborted(STAGE_DV_SIGNATURE, "malformed") from None
    if resp.verdict != DvVerdict.OK:
        net.note(me, "abort", f"{STAGE_DV}:{resp.verdict.label}", peer=recipient)
        raise SendAborted(STAGE_DV, resp.verdict.label)
    if not wire.verify_dv_response(resp, client.roots.dv_pk):
        net.note(me, "abort", f"{STAGE_DV_SIGNATURE}:bad-signature", peer=recipient)
        raise SendAborted(STAGE_DV_SIGNATURE, "bad-signature")
    return octets


def _check_dv(client: ClientState, envelope: bytes, ver: bytes | None) -> wire.DvResponse:
    if ver is None:
        raise _Reject(STAGE_DV_SIGNATURE, "missing")
    try:
        resp = wire.decode_dv_response(ver)
    except tlv.DecodeError:
        raise _Reject(STAGE_DV_SIGNATURE, "malformed") from None
    if resp.verdict != DvVerdict.OK or not wire.verify_dv_response(resp, client.roots.dv_pk):
        raise _Reject(STAGE_DV_SIGNATURE, "bad-signature")
    if resp.recipient != client.identity:
        raise _Reject(STAGE_DV_SIGNATURE, "recipient-mismatch")
    expected = wire.dv_params_digest(envelope, resp.sender, resp.recipient, client.suite)
    if expected != resp.params_digest:
        raise _Reject(STAGE_DIGEST_MISMATCH, "params-digest")
    return resp


def _open_one(client: ClientState, item: Delivery, dep: Deployment, rng) -> Received:
    me = client.identity
    net = dep.network
    envelope = net.carry("fetch", dep.mailbox_actor, me, item.envelope)
    ver = item.dv_response
    if ver is not None:
        ver = net.carry("fetch-ver", dep.mailbox_actor, me, ver)
    sender = "?"
    try:
        dv_resp = None
        if dep.topology != BASIC:
            dv_resp = _check_dv(client, envelope, ver)
        try:
            env = wire.envelope_from_octets(envelope)
        except tlv.DecodeError as exc:
            raise _Reject(STAGE_ENVELOPE_INVALID, "malformed") from exc
        sender = env.sender
        if env.recipient != me:
            raise _Reject(STAGE_ENVELOPE_INVALID, "recipient-mismatch")
        if dv_resp is not None and dv_resp.sender != env.sender:
            raise _Reject(STAGE_ENVELOPE_INVALID, "sender-mismatch")
        r_key = encode_point(env.R, client.params)
        if r_key in client.replay_cache:
            raise _Reject(STAGE_REPLAY, "seen-R")
        if dep.topology == BASIC:
            pk_a = _query_ocsp(client, env.sender, dep, rng, _Reject)
        else:
            pk_a = _directory_key(client, env.sender, dep, _Reject)
        try:
            m, k = unsigncrypt_with_key(env, client.keypair, pk_a, client.params, client.suite)
        except EnvelopeInvalidError as exc:
            raise _Reject(STAGE_ENVELOPE_INVALID, exc.detail) from None
        except SignatureInvalidError:
            raise _Reject(STAGE_SIGNATURE_INVALID, "equation") from None
        except InvalidPublicKeyError:
            raise _Reject(STAGE_OCSP, "pk-invalid") from None
    except _Reject as exc:
        net.note(me, "reject", f"{exc.stage}:{exc.detail}", peer=sender)
        return Received(sender, None, exc.stage, exc.detail, envelope=envelope)
    client.replay_cache.add(r_key)
    net.note(me, "accept", sender, peer=sender)
    return Received(sender, m, session_key=k, envelope=envelope)


def fetch_and_open(client: ClientState, dep: Deployment, rng) -> list[Received]:
    """Drain the mailbox and open every envelope; rejections carry their stage."""
    return [_open_one(client, item, dep, rng) for item in dep.mail.fetch(client.identity)]
