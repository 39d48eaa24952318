import random

import pytest

from smemail import keypair_pki as pki
from smemail import tlv
from smemail.curve_math import INFINITY, Point, SECP256R1, TOY17, scalar_mul
from smemail.keypair_pki import CertStatus


def test_identity_check():
    assert pki.check_identity("alice@example.com") == "alice@example.com"
    for bad in ("alice", "@example.com", "a b@example.com", "a@", "x" * 250 + "@e.com"):
        with pytest.raises(pki.InvalidIdentityError):
            pki.check_identity(bad)


def test_random_scalar_rejects_zero():
    class ZeroFirst:
        def __init__(self):
            self.calls = 0

        def randrange(self, n):
            self.calls += 1
            return 0 if self.calls == 1 else 5

    rng = ZeroFirst()
    assert pki.random_scalar(19, rng) == 5 and rng.calls == 2


def test_random_scalar_covers_range():
    rng = random.Random(1)
    seen = {pki.random_scalar(19, rng) for _ in range(2000)}
    assert seen == set(range(1, 19))


def test_keypair_hides_secret(rng):
    kp = pki.generate_keypair(SECP256R1, rng)
    assert str(kp.sk) not in repr(kp)
    assert scalar_mul(kp.sk, SECP256R1.G, SECP256R1) == kp.pk


def test_public_key_violations():
    codes = lambda pk: [v.code for v in pki.validate_public_key(pk, TOY17)]
    assert codes(Point(9, 16)) == []
    assert codes(INFINITY) == [pki.PK_INFINITY]
    assert codes(Point(9, 1 + 17)) == [pki.PK_NON_CANONICAL]
    assert codes(Point(9, 15)) == [pki.PK_OFF_CURVE]
    with pytest.raises(pki.InvalidPublicKeyError):
        pki.require_valid_public_key(INFINITY, TOY17)


def test_wrong_order_public_key():
    # the full group on y^2 = x^3 + 2x + 3 over F_17 has order 22; (3, 6) has order 11
    from smemail.curve_math import DomainParams
    params = DomainParams("c22", 0x7E, 17, 2, 3, Point(3, 6), 11, 2)
    two_torsion = [Point(x, 0) for x in range(17) if (x ** 3 + 2 * x + 3) % 17 == 0]
    assert two_torsion
    assert [v.code for v in pki.validate_public_key(two_torsion[0], params)] == [
        pki.PK_WRONG_ORDER]


@pytest.mark.parametrize("params", [TOY17, SECP256R1], ids=lambda p: p.name)
def test_detached_signature(params, rng):
    kp = pki.generate_keypair(params, rng)
    sig = pki.sign_detached(b"message", kp.sk, params, rng)
    assert pki.verify_detached(b"message", sig, kp.pk, params)
    if params is SECP256R1:
        assert not pki.verify_detached(b"messagf", sig, kp.pk, params)
    bad = pki.DetachedSignature(sig.R, (sig.s + 1) % params.n)
    assert not pki.verify_detached(b"message", bad, kp.pk, params)
    assert not pki.verify_detached(b"message", pki.DetachedSignature(INFINITY, sig.s),
                                   kp.pk, params)
    with pytest.raises(ValueError):
        pki.sign_detached(b"m", 0, params, rng)


def _issue(rng, params=SECP256R1, subject="alice@example.com", validity=(100, 200)):
    ca = pki.generate_keypair(params, rng)
    user = pki.generate_keypair(params, rng)
    nonce = rng.randbytes(16)
    pop = pki.make_proof_of_possession(nonce, subject, user, params, rng)
    cert = pki.issue_certificate(ca, "ca@example.com", subject, user.pk, validity, 7,
                                 nonce, pop, params, rng)
    return ca, user, cert


def test_certificate_lifecycle(rng):
    ca, user, cert = _issue(rng)
    assert pki.validate_certificate(cert, ca.pk, 150, SECP256R1) is CertStatus.GOOD
    assert pki.validate_certificate(cert, ca.pk, 201, SECP256R1) is CertStatus.EXPIRED
    assert pki.validate_certificate(cert, ca.pk, 99, SECP256R1) is CertStatus.EXPIRED
    assert pki.validate_certificate(cert, user.pk, 150, SECP256R1) is CertStatus.BAD_SIGNATURE
    decoded = pki.decode_certificate(pki.encode_certificate(cert))
    assert decoded == cert
    assert pki.encode_certificate(decoded) == pki.encode_certificate(cert)


def test_proof_of_possession_required(rng):
    params = SECP256R1
    ca = pki.generate_keypair(params, rng)
    user = pki.generate_keypair(params, rng)
    thief = pki.generate_keypair(params, rng)
    nonce = rng.randbytes(16)
    pop = pki.make_proof_of_possession(nonce, "alice@example.com", thief, params, rng)
    with pytest.raises(pki.ProofOfPossessionError):
        pki.issue_certificate(ca, "ca@example.com", "alice@example.com", user.pk, (0, 9),
                              1, nonce, pop, params, rng)
    good = pki.make_proof_of_possession(nonce, "alice@example.com", user, params, rng)
    with pytest.raises(pki.ProofOfPossessionError):
        pki.issue_certificate(ca, "ca@example.com", "alice@example.com", user.pk, (0, 9),
                              1, rng.randbytes(16), good, params, rng)
    with pytest.raises(pki.PkiError):
        pki.issue_certificate(ca, "ca@example.com", "alice@example.com", user.pk, (9, 9),
                              1, nonce, good, params, rng)


def test_cert_request_round_trip(rng):
    user = pki.generate_keypair(SECP256R1, rng)
    nonce = rng.randbytes(16)
    pop = pki.make_proof_of_possession(nonce, "bob@example.com", user, SECP256R1, rng)
    req = pki.CertificateRequest("bob@example.com", user.pk, nonce, pop,
                                 SECP256R1.curve_id, 0x01)
    data = pki.encode_cert_request(req)
    assert pki.decode_cert_request(data) == req
    with pytest.raises(tlv.DecodeError):
        pki.decode_cert_request(data + b"\x00")


@pytest.mark.parametrize("params", [TOY17, SECP256R1], ids=lambda p: p.name)
def test_keystore(params, rng):
    kp = pki.generate_keypair(params, rng)
    ks = pki.keystore_seal(kp.sk, "alice@example.com", "hunter2", params, rng)
    data = pki.encode_keystore(ks)
    back = pki.decode_keystore(data)
    assert back == ks and pki.encode_keystore(back) == data
    assert pki.keystore_open(back, "hunter2") == kp.sk
    with pytest.raises(pki.WrongPasswordError):
        pki.keystore_open(back, "hunter3")
    if params is SECP256R1:
        assert kp.sk.to_bytes(params.scalar_len, "big") not in data
