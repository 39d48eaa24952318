import random

import pytest

from smemail import protocol_flow as pf
from smemail import tlv, wire
from smemail.baseline import decrypt_then_verify, operation_counts, sign_then_encrypt
from smemail.curve_math import INFINITY, SECP256R1, TOY17
from smemail.keypair_pki import InvalidPublicKeyError
from smemail.services import Delivery
from smemail.signcrypt import SignatureInvalidError
from smemail.simulator import World, parse_script

A, B, C = "alice@example.com", "bob@example.com", "carol@example.com"


def world(topology="basic", curve="secp256r1", users=(A, B), seed=3):
    script = parse_script(f"@topology {topology}\n@curve {curve}\n")
    w = World(script, seed)
    for user in users:
        assert w.run(parse_script(f"ca register {user}").steps[0]) == ["ok"]
    return w


def messages(events, actor=None):
    return [e for e in events if e.is_message and (actor is None or actor in (e.actor, e.peer))]


def test_topology_aliases():
    assert pf.normalize_topology("fig4") == pf.FIG4
    assert pf.normalize_topology(pf.FIG5) == pf.FIG5
    with pytest.raises(ValueError):
        pf.normalize_topology("mesh")


def test_clocks():
    clock = pf.VirtualClock()
    assert clock.now == pf.SIM_EPOCH and clock.tick() == pf.SIM_EPOCH + 1
    with pytest.raises(ValueError):
        clock.advance(-1)
    wall = pf.WallClock(50)
    assert wall.tick() == 50 and wall.advance(5) == 55


def test_basic_send_uses_four_messages(rng):
    w = world(curve="toy17")
    pf.compose_and_send(w.clients[A], B, b"hi", w.dep, rng)
    sent = messages(w.net.events, A)
    assert [e.label for e in sent] == ["ocsp-query", "ocsp-response", "submit", "ack"]
    assert w.mail.pending(B) == 1
    (got,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert got.accepted and got.message == b"hi" and got.sender == A
    assert got.token == f"accept:{A}:hi"


@pytest.mark.parametrize("topology", ["fig4", "fig5"])
def test_delegated_sender_never_queries_ocsp(rng, topology):
    w = world(topology)
    pf.compose_and_send(w.clients[A], B, b"one", w.dep, rng)
    pf.compose_and_send(w.clients[A], B, b"two", w.dep, rng)
    alice = [e for e in messages(w.net.events) if A in (e.actor, e.peer)]
    assert not any(e.label.startswith("ocsp") for e in alice)
    # the directory is consulted once, then the key is pinned
    assert [e.label for e in alice].count("dir-query") == 1
    assert w.clients[A].known_keys[B].source == "directory"
    got = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert [r.message for r in got] == [b"one", b"two"]
    mailbox = w.dep.mailbox_actor
    assert mailbox == ("dv" if topology == "fig5" else "mail")
    assert all(e.actor == mailbox for e in messages(w.net.events) if e.label == "fetch")


def test_revoked_recipient_aborts_before_signcryption(rng):
    w = world()
    w.ca.revoke(B, w.clock.now)
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)
    assert info.value.token == "abort:ocsp:revoked"
    assert not any(e.label in ("signcrypt", "submit") for e in w.net.events)
    assert w.mail.pending(B) == 0


def test_unknown_recipient(rng):
    w = world(users=(A,))
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)
    assert (info.value.stage, info.value.detail) == ("ocsp", "unknown")


def test_ocsp_signature_tamper_aborts(rng):
    w = world()
    w.net.arm("ocsp-response", lambda b: b[:-1] + bytes([b[-1] ^ 1]))
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)
    assert info.value.detail == "ocsp-signature-bad"


def test_stale_token_aborts(rng):
    w = world()
    window = w.clients[A].freshness_window

    def slow(octets):
        w.clock.advance(window + 1)
        return octets

    w.net.arm("ocsp-response", slow)
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)
    assert info.value.token == "abort:ocsp:stale"


def test_token_within_window_is_accepted(rng):
    w = world()
    w.net.arm("ocsp-response", lambda o: (w.clock.advance(w.clients[A].freshness_window - 1), o)[1])
    pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)


def test_nonce_is_checked(rng):
    w = world()
    other = w.ocsp.handle(wire.encode_ocsp_request(wire.OcspRequest(B, bytes(16))), w.clock.now)
    w.net.arm("ocsp-response", lambda _: other)
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"x", w.dep, rng)
    assert info.value.detail == "nonce-mismatch"


def test_replay_rejected_and_cache_only_grows_on_accept(rng):
    w = world()
    pf.compose_and_send(w.clients[A], B, b"once", w.dep, rng)
    (item,) = w.mail.fetch(B)
    w.mail.enqueue(B, item)
    (first,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert first.accepted and len(w.clients[B].replay_cache) == 1
    w.mail.enqueue(B, item)
    (second,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert (second.stage, second.detail) == ("replay", "seen-R")
    assert second.message is None
    assert len(w.clients[B].replay_cache) == 1


def test_rejected_envelope_does_not_poison_cache(rng):
    w = world()
    octets = pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    w.mail.fetch(B)
    env = wire.envelope_from_octets(octets)
    bad = wire.envelope_to_octets(type(env)(env.sender, env.recipient, env.R, env.C,
                                            (env.s + 1) % SECP256R1.n, env.curve_id,
                                            env.suite_id))
    w.mail.enqueue(B, Delivery(bad))
    w.mail.enqueue(B, Delivery(octets))
    got = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert [r.stage for r in got] == ["signature-invalid", None]


def test_header_recipient_mismatch(rng):
    w = world(users=(A, B, C))
    octets = pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    w.mail.fetch(B)
    w.mail.enqueue(C, Delivery(octets))
    (got,) = pf.fetch_and_open(w.clients[C], w.dep, rng)
    assert (got.stage, got.detail) == ("envelope-invalid", "recipient-mismatch")


def test_header_sender_swap_fails_signature(rng):
    w = world(users=(A, B, C))
    octets = pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    w.mail.fetch(B)
    w.mail.enqueue(B, Delivery(octets.replace(A.encode(), C.encode())))
    (got,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert got.stage == "signature-invalid"


def test_recv_after_sender_revoked(rng):
    w = world()
    pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    w.ca.revoke(A, w.clock.now)
    (got,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert got.token == "reject:ocsp:revoked"


@pytest.mark.parametrize("mutate,stage", [
    (lambda d: Delivery(d.envelope, None), "dv-signature"),
    (lambda d: Delivery(d.envelope, b"\x00\x01"), "dv-signature"),
    (lambda d: Delivery(d.envelope.replace(b"\r\n\r\n", b"\r\n\r\nAAAA"), d.dv_response),
     "digest-mismatch"),
])
def test_delegated_receiver_checks(rng, mutate, stage):
    w = world("fig4")
    pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    (item,) = w.mail.fetch(B)
    w.mail.enqueue(B, mutate(item))
    (got,) = pf.fetch_and_open(w.clients[B], w.dep, rng)
    assert got.stage == stage


def test_delegated_dv_verdict_aborts_sender(rng):
    w = world("fig5")
    pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    w.ca.revoke(B, w.clock.now)
    with pytest.raises(pf.SendAborted) as info:
        pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    assert info.value.token == "abort:dv:recipient-revoked"


def test_pin_validates(rng):
    w = world()
    client = w.clients[A]
    with pytest.raises(InvalidPublicKeyError):
        client.pin(C, INFINITY, 0)
    client.pin(C, w.clients[B].keypair.pk, 5)
    assert client.known_keys[C] == pf.KnownKey(w.clients[B].keypair.pk, "pinned", 5)


def test_validation_precedes_signcryption(rng):
    w = world()
    pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    assert pf.validation_precedes_signcryption(w.net.events)
    bad = [pf.Event(0, 0, A, "", "signcrypt", B.encode())]
    assert not pf.validation_precedes_signcryption(bad)
    # one validation covers exactly one signcryption
    twice = [pf.Event(0, 0, A, "", "validated", B.encode())] + bad * 2
    assert not pf.validation_precedes_signcryption(twice)


def test_transcript_round_trip(rng):
    w = world("fig4")
    pf.compose_and_send(w.clients[A], B, b"m", w.dep, rng)
    pf.fetch_and_open(w.clients[B], w.dep, rng)
    data = pf.encode_transcript(w.net.events)
    assert pf.decode_transcript(data) == w.net.events
    assert pf.encode_transcript(pf.decode_transcript(data)) == data
    with pytest.raises(tlv.DecodeError):
        pf.decode_transcript(data[:-1])


def test_unregistered_label_refused():
    net = pf.Network(pf.VirtualClock())
    with pytest.raises(ValueError):
        net.note("x", "gossip")


def test_tamper_hooks_fire_once():
    net = pf.Network(pf.VirtualClock())
    net.arm("submit", lambda b: b + b"!")
    assert net.carry("submit", "a", "b", b"x") == b"x!"
    assert net.carry("submit", "a", "b", b"x") == b"x"
    assert [e.time for e in net.events] == [pf.SIM_EPOCH + 1, pf.SIM_EPOCH + 2]


def test_baseline_round_trip(p256_pair, rng):
    alice, bob = p256_pair
    env = sign_then_encrypt(b"base", alice, A, bob.pk, B, SECP256R1, rng)
    assert decrypt_then_verify(env, bob, alice.pk, SECP256R1) == b"base"
    with pytest.raises(SignatureInvalidError):
        decrypt_then_verify(env, bob, bob.pk, SECP256R1)


@pytest.mark.parametrize("params", [TOY17, SECP256R1], ids=lambda p: p.name)
def test_operation_counts(params):
    counts = operation_counts(params, random.Random(5))
    assert counts == {"smemail": {"sender": 2, "receiver": 4},
                      "sign-then-encrypt": {"sender": 3, "receiver": 3}}
