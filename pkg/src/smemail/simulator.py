"""Scripted scenarios: honest users, adversaries and a wire we can tamper with.

A script is line oriented::

    @name replay
    @topology basic          # basic | fig4 | fig5
    @curve secp256r1
    @seed 7
    ca register alice@example.com => ok
    alice@example.com send bob@example.com "hi bob" => sent
    bob@example.com recv => accept:alice@example.com:hi bob
    net replay bob@example.com => ok
    bob@example.com recv => reject:replay

Everything after ``=>`` is the list of expected outcome tokens.  An expected
token matches an actual one exactly or as a ``:``-separated prefix.  A step
without ``=>`` always passes and simply records what happened.
"""

from __future__ import annotations

import base64
import random
import shlex
from dataclasses import dataclass, field
from importlib import resources

from . import tlv, wire
from .curve_math import (
    DomainParams, INFINITY, Point, get_curve, point_add, scalar_mul)
from .crypto_suite import get_suite, kdf
from .keypair_pki import (
    CertificateRequest, KeyPair, PkiError, generate_keypair,
    make_proof_of_possession, random_scalar)
from .protocol_flow import (
    BASIC, FIG5, ClientState, Deployment, Event, Network, SendAborted, TrustedRoots,
    VirtualClock, compose_and_send, encode_transcript, fetch_and_open, normalize_topology)
from .services import (
    DV_ACTOR, MAIL_ACTOR, CertificateAuthority, Delivery, Directory, DirectoryError,
    DuplicateIdentityError, DvLog, DvServer, MailRelay, OcspResponder)
from .signcrypt import SigncryptedEnvelope, public_verify, signcrypt, x_tilde

ECDLP_LIMIT = 1 << 20
DEFAULT_SEED = 0
SCRIPT_SUFFIX = ".smes"


class ScriptError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Step:
    line_no: int
    actor: str
    action: str
    args: tuple[str, ...]
    expected: tuple[str, ...] | None
    text: str


@dataclass
class ScenarioScript:
    name: str
    topology: str = BASIC
    curve: str = "secp256r1"
    suite: str = "sha256-aes128ctr"
    seed: int | None = None
    steps: list[Step] = field(default_factory=list)


# action -> (actor kind, allowed arg counts)
_ACTIONS = {
    "register": ("ca", (1,)),
    "revoke": ("ca", (1,)),
    "advance": ("clock", (1,)),
    "tamper": ("net", (2,)),
    "replay": ("net", (1,)),
    "send": ("user", (2,)),
    "recv": ("user", (0,)),
    "masquerade": ("user", (3,)),
    "inject": ("user", (2,)),
    "compromise": ("user", (1,)),
    "decrypt-captured": ("user", (1,)),
    "eavesdrop": ("user", (0,)),
}


def parse_script(text: str, default_name: str = "scenario") -> ScenarioScript:
    script = ScenarioScript(default_name)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        try:
            words = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScriptError(line_no, str(exc)) from None
        if not words:
            continue
        head = words[0]
        if head.startswith("@"):
            if len(words) != 2:
                raise ScriptError(line_no, f"{head} takes exactly one value")
            key, value = head[1:], words[1]
            if key == "name":
                script.name = value
            elif key == "topology":
                try:
                    script.topology = normalize_topology(value)
                except ValueError as exc:
                    raise ScriptError(line_no, str(exc)) from None
            elif key == "curve":
                script.curve = value
            elif key == "suite":
                script.suite = value
            elif key == "seed":
                try:
                    script.seed = int(value)
                except ValueError:
                    raise ScriptError(line_no, f"seed must be an integer: {value!r}") from None
            else:
                raise ScriptError(line_no, f"unknown directive {head}")
            continue
        expected = None
        if "=>" in words:
            cut = words.index("=>")
            words, expected = words[:cut], tuple(words[cut + 1:])
            if not expected:
                raise ScriptError(line_no, "nothing after =>")
        if len(words) < 2:
            raise ScriptError(line_no, "expected '<actor> <action> [args]'")
        actor, action, args = words[0], words[1], tuple(words[2:])
        spec = _ACTIONS.get(action)
        if spec is None:
            raise ScriptError(line_no, f"unknown action {action!r}")
        kind, arities = spec
        if kind in ("ca", "clock", "net") and actor != kind:
            raise ScriptError(line_no, f"{action} belongs to actor {kind!r}")
        if kind == "user" and actor in ("ca", "clock", "net"):
            raise ScriptError(line_no, f"{actor} cannot {action}")
        if len(args) not in arities:
            raise ScriptError(line_no, f"{action} takes {arities[0]} argument(s)")
        script.steps.append(Step(line_no, actor, action, args, expected, raw.strip()))
    try:
        get_curve(script.curve)
        get_suite(script.suite)
    except (KeyError, ValueError) as exc:
        raise ScriptError(0, str(exc)) from None
    return script


def bundled_names() -> list[str]:
    root = resources.files("smemail.scenarios")
    return sorted(p.name[:-len(SCRIPT_SUFFIX)] for p in root.iterdir()
                  if p.name.endswith(SCRIPT_SUFFIX))


def load_bundled(name: str) -> ScenarioScript:
    path = resources.files("smemail.scenarios") / f"{name}{SCRIPT_SUFFIX}"
    if not path.is_file():
        raise KeyError(f"no bundled scenario named {name!r}")
    return parse_script(path.read_text(encoding="utf-8"), name)


def tokens_match(expected: tuple[str, ...], actual: list[str]) -> bool:
    if len(expected) != len(actual):
        return False
    return all(a == e or a.startswith(e + ":") for e, a in zip(expected, actual))


@dataclass(frozen=True)
class StepVerdict:
    line_no: int
    text: str
    expected: tuple[str, ...] | None
    actual: tuple[str, ...]
    passed: bool


@dataclass
class ScenarioResult:
    name: str
    seed: int
    topology: str
    events: list[Event]
    verdicts: list[StepVerdict]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def transcript_octets(self) -> bytes:
        return encode_transcript(self.events)


# -- in-flight mutations -----------------------------------------------------

def _split_records(data: bytes) -> list[tuple[int, int, int]]:
    """(tag, value start, value end) for each top-level record."""
    out, pos = [], 0
    while pos + 3 <= len(data):
        length = int.from_bytes(data[pos + 1:pos + 3], "big")
        out.append((data[pos], pos + 3, pos + 3 + length))
        pos += 3 + length
    return out


def _flip_record(data: bytes, tag: int, index: int) -> bytes:
    hits = [r for r in _split_records(data) if r[0] == tag and r[2] > r[1]]
    if index >= len(hits):
        return data
    end = hits[index][2]
    buf = bytearray(data)
    buf[end - 1] ^= 0x01
    return bytes(buf)


def _map_envelope(data: bytes, change) -> bytes:
    """Apply ``change`` to the envelope inside a MIME entity or a DV request."""
    try:
        env = wire.envelope_from_octets(data)
    except tlv.DecodeError:
        try:
            req = wire.decode_dv_request(data)
        except tlv.DecodeError:
            return data
        inner = _map_envelope(req.envelope, change)
        return wire.encode_dv_request(wire.DvRequest(
            req.sender, req.recipient, inner, req.curve_id, req.suite_id))
    return wire.envelope_to_octets(change(env))


def _flip_ciphertext(env: SigncryptedEnvelope) -> SigncryptedEnvelope:
    c = bytearray(env.C)
    if c:
        c[0] ^= 0x01
    return SigncryptedEnvelope(env.sender, env.recipient, env.R, bytes(c), env.s,
                               env.curve_id, env.suite_id)


_TAG_BY_NAME = {name: tag for tag, name in tlv.TAG_NAMES.items()}


def make_mutation(spec: str, params: DomainParams):
    if spec == "flip-ciphertext":
        return lambda data: _map_envelope(data, _flip_ciphertext)
    if spec == "bump-s":
        def bump(env):
            return SigncryptedEnvelope(env.sender, env.recipient, env.R, env.C,
                                       (env.s + 1) % params.n, env.curve_id, env.suite_id)
        return lambda data: _map_envelope(data, bump)
    if spec == "flip-status":
        return lambda data: _flip_record(data, tlv.STATUS, 0)
    kind, _, arg = spec.partition(":")
    if kind == "flip-octet":
        index = int(arg)

        def flip(data: bytes) -> bytes:
            buf = bytearray(data)
            if -len(buf) <= index < len(buf):
                buf[index] ^= 0x01
            return bytes(buf)
        return flip
    if kind == "flip-record":
        name, _, nth = arg.partition(":")
        if name not in _TAG_BY_NAME:
            raise ValueError(f"unknown record name {name!r}")
        tag, nth = _TAG_BY_NAME[name], int(nth or 0)
        return lambda data: _flip_record(data, tag, nth)
    raise ValueError(f"unknown mutation {spec!r}")


# -- the world ---------------------------------------------------------------

class World:
    """One deployment plus honest clients and adversary state, driven by steps."""

    def __init__(self, script: ScenarioScript, seed: int):
        self.script = script
        self.rng = random.Random(seed)
        self.params = get_curve(script.curve)
        self.suite = get_suite(script.suite)
        self.clock = VirtualClock()
        self.net = Network(self.clock)
        params, suite, rng = self.params, self.suite, self.rng
        self.directory = Directory(params, suite)
        ca_key = generate_keypair(params, rng)
        ocsp_key = generate_keypair(params, rng)
        self.ca = CertificateAuthority(ca_key, self.directory, params, suite, rng)
        self.ocsp = OcspResponder(self.directory, ocsp_key, ca_key.pk, params, suite, rng)
        self.mail = MailRelay()
        dv = None
        dv_pk = None
        if script.topology != BASIC:
            dv_key = generate_keypair(params, rng)
            relay_actor = DV_ACTOR if script.topology == FIG5 else MAIL_ACTOR
            dv = DvServer(self.directory, self.ocsp, dv_key, ca_key.pk, ocsp_key.pk,
                          params, suite, rng, self.mail, DvLog(), self.net.carry,
                          relay_actor)
            dv_pk = dv_key.pk
        self.roots = TrustedRoots(ca_key.pk, ocsp_key.pk, dv_pk)
        self.dep = Deployment(params, suite, self.clock, self.net, self.directory,
                              self.ocsp, self.mail, dv, script.topology)
        self.clients: dict[str, ClientState] = {}
        self.outsider_keys: dict[str, KeyPair] = {}
        self.stolen: dict[str, dict[str, int]] = {}
        self.sent_plaintexts: list[bytes] = []
        self.captured: list[Event] = []
        self.last_delivery: list[bytes | None] | None = None
        self.net.taps.append(self._wiretap)

    def _wiretap(self, event: Event) -> None:
        if not event.is_message:
            return
        self.captured.append(event)
        if event.label == "fetch":
            self.last_delivery = [event.payload, None]
        elif event.label == "fetch-ver" and self.last_delivery is not None:
            self.last_delivery[1] = event.payload

    def _captured_envelopes(self) -> list[SigncryptedEnvelope]:
        found = []
        for ev in self.captured:
            payload = ev.payload
            if ev.label == "dv-submit":
                try:
                    payload = wire.decode_dv_request(payload).envelope
                except tlv.DecodeError:
                    continue
            elif ev.label not in ("submit", "fetch", "dv-forward"):
                continue
            try:
                found.append(wire.envelope_from_octets(payload))
            except tlv.DecodeError:
                continue
        return found

    def _client(self, identity: str) -> ClientState:
        try:
            return self.clients[identity]
        except KeyError:
            raise LookupError(f"{identity} is not registered") from None

    def _keys_of(self, actor: str) -> KeyPair:
        if actor in self.clients:
            return self.clients[actor].keypair
        if actor not in self.outsider_keys:
            self.outsider_keys[actor] = generate_keypair(self.params, self.rng)
        return self.outsider_keys[actor]

    def _public_key(self, identity: str) -> Point | None:
        rec = self.directory.lookup(identity)
        return None if rec is None else rec.pk

    # -- actions --

    def do_register(self, step: Step) -> list[str]:
        (identity,) = step.args
        kp = generate_keypair(self.params, self.rng)
        nonce = self.ca.challenge()
        pop = make_proof_of_possession(nonce, identity, kp, self.params, self.rng, self.suite)
        try:
            self.ca.register(CertificateRequest(identity, kp.pk, nonce, pop, self.params.curve_id,
                                                self.suite.suite_id), self.clock.now)
        except DuplicateIdentityError:
            self.net.note("ca", "register", f"duplicate {identity}")
            return ["duplicate"]
        except PkiError:
            return ["invalid-identity"]
        self.clients[identity] = ClientState(identity, kp, self.roots, self.params, self.suite)
        self.net.note("ca", "register", identity)
        return ["ok"]

    def do_revoke(self, step: Step) -> list[str]:
        (identity,) = step.args
        try:
            self.ca.revoke(identity, self.clock.now)
        except DirectoryError:
            return ["unknown"]
        self.net.note("ca", "revoke", identity)
        return ["ok"]

    def do_advance(self, step: Step) -> list[str]:
        seconds = int(step.args[0])
        self.clock.advance(seconds)
        self.net.note("clock", "clock", f"+{seconds}")
        return ["ok"]

    def do_tamper(self, step: Step) -> list[str]:
        leg, spec = step.args
        self.net.arm(leg, make_mutation(spec, self.params))
        self.net.note("net", "attack", f"tamper {leg} {spec}")
        return ["ok"]

    def do_replay(self, step: Step) -> list[str]:
        (recipient,) = step.args
        if self.last_delivery is None:
            return ["nothing-captured"]
        envelope, ver = self.last_delivery
        self.mail.enqueue(recipient, Delivery(envelope, ver))
        self.net.note("net", "attack", f"replay to {recipient}")
        return ["ok"]

    def do_send(self, step: Step) -> list[str]:
        recipient, text = step.args
        client = self._client(step.actor)
        m = text.encode("utf-8")
        self.sent_plaintexts.append(m)
        try:
            compose_and_send(client, recipient, m, self.dep, self.rng)
        except SendAborted as exc:
            return [exc.token]
        return ["sent"]

    def do_recv(self, step: Step) -> list[str]:
        client = self._client(step.actor)
        got = fetch_and_open(client, self.dep, self.rng)
        return [r.token for r in got] or ["empty"]

    def _submit_forged(self, actor: str, env: SigncryptedEnvelope) -> list[str]:
        octets = wire.envelope_to_octets(env)
        if self.dep.topology == BASIC:
            self.mail.enqueue(env.recipient,
                              Delivery(self.net.carry("submit", actor, MAIL_ACTOR, octets)))
            self.net.carry("ack", MAIL_ACTOR, actor, b"queued")
            return ["sent"]
        request = self.net.carry("dv-submit", actor, DV_ACTOR, wire.encode_dv_request(
            wire.DvRequest(env.sender, env.recipient, octets, env.curve_id, env.suite_id)))
        answer = self.net.carry("dv-response", DV_ACTOR, actor,
                                self.dep.dv.handle(request, self.clock.now))
        verdict = wire.decode_dv_response(answer).verdict
        if verdict != wire.DvVerdict.OK:
            return [f"abort:dv:{verdict.label}"]
        return ["sent"]

    def do_masquerade(self, step: Step) -> list[str]:
        claimed, recipient, text = step.args
        pk_b = self._public_key(recipient)
        if pk_b is None:
            return ["unknown-recipient"]
        self.net.note(step.actor, "attack", f"masquerade as {claimed}", peer=recipient)
        env = signcrypt(text.encode("utf-8"), self._keys_of(step.actor), claimed, pk_b,
                        recipient, self.params, self.rng, self.suite)
        return self._submit_forged(step.actor, env)

    def do_inject(self, step: Step) -> list[str]:
        claimed, recipient = step.args
        self.net.note(step.actor, "attack", f"inject as {claimed}", peer=recipient)
        R = scalar_mul(random_scalar(self.params.n, self.rng), self.params.G, self.params)
        C = self.rng.randbytes(16)
        s = self.rng.randrange(self.params.n)
        env = SigncryptedEnvelope(claimed, recipient, R, C, s, self.params.curve_id,
                                  self.suite.suite_id)
        return self._submit_forged(step.actor, env)

    def do_compromise(self, step: Step) -> list[str]:
        (victim,) = step.args
        sk = self._client(victim).keypair.sk
        self.stolen.setdefault(step.actor, {})[victim] = sk
        self.net.note(step.actor, "attack", f"compromise {victim}")
        return ["ok"]

    def _try_session(self, env: SigncryptedEnvelope, K: Point) -> str:
        pk_a = self._public_key(env.sender)
        if K.is_infinity or pk_a is None:
            return "fail"
        k = kdf(K.x, env.sender, K.y, env.recipient, self.suite.key_len, self.params,
                self.suite)
        m = self.suite.decrypt(k, env.C)
        if public_verify(env.R, m, k, env.s, pk_a, env.sender, env.recipient,
                         self.params, self.suite):
            return f"recovered:{m.decode('utf-8', 'replace')}"
        return "fail"

    def do_decrypt_captured(self, step: Step) -> list[str]:
        (strategy,) = step.args
        envelopes = self._captured_envelopes()
        if not envelopes:
            return ["nothing-captured"]
        env = envelopes[-1]
        params = self.params
        if strategy == "ecdlp" and params.n > ECDLP_LIMIT:
            return ["infeasible"]
        sk_a = self.stolen.get(step.actor, {}).get(env.sender)
        pk_b = self._public_key(env.recipient)
        if sk_a is None or pk_b is None:
            return ["no-key"]
        self.net.note(step.actor, "attack", f"decrypt-captured {strategy}")
        xt = x_tilde(env.R.x, params.n) % params.n
        if strategy == "sk-only":
            # without r the best guess drops it from the multiplier
            return [self._try_session(env, scalar_mul(xt * sk_a % params.n, pk_b, params))]
        if strategy == "ecdlp":
            r, P = 1, params.G
            while P != env.R:
                P = point_add(P, params.G, params)
                r += 1
                if P == INFINITY:
                    return ["fail"]
            K = scalar_mul((r + xt * sk_a) % params.n, pk_b, params)
            return [self._try_session(env, K)]
        raise ValueError(f"unknown strategy {strategy!r}")

    def do_eavesdrop(self, step: Step) -> list[str]:
        plaintexts = [m for m in self.sent_plaintexts if m]
        for ev in self.captured:
            views = [ev.payload]
            try:
                body = wire.parse_mime(ev.payload.decode("ascii")).body
                views.append(base64.b64decode(body))
            except (UnicodeDecodeError, ValueError, tlv.DecodeError):
                pass
            if any(m in v for m in plaintexts for v in views):
                return ["plaintext-exposed"]
        return ["ciphertext-only"]

    def run(self, step: Step) -> list[str]:
        handler = getattr(self, "do_" + step.action.replace("-", "_"))
        try:
            return handler(step)
        except LookupError as exc:
            return [f"error:{exc}".replace(" ", "-")]


def run_scenario(script: ScenarioScript, seed: int | None = None) -> ScenarioResult:
    """Execute every step; all randomness comes from one seeded generator."""
    if seed is None:
        seed = script.seed if script.seed is not None else DEFAULT_SEED
    world = World(script, seed)
    verdicts = []
    for step in script.steps:
        actual = world.run(step)
        ok = step.expected is None or tokens_match(step.expected, actual)
        verdicts.append(StepVerdict(step.line_no, step.text, step.expected,
                                    tuple(actual), ok))
        world.net.note("sim", "verdict",
                       f"line {step.line_no} {'pass' if ok else 'FAIL'} {' '.join(actual)}")
    return ScenarioResult(script.name, seed, script.topology, world.net.events, verdicts)
