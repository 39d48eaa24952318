"""``smemail`` command line: key ceremony, send/recv/verify against local state, and simulation.

Exit codes
----------
 0  success
 1  unexpected error
 2  usage error
 3  bad configuration or weak domain parameters
 4  duplicate identity
 5  unknown identity
 6  wrong keystore password
10  rejected at OCSP check
11  DV signature invalid
12  DV params digest mismatch
13  envelope invalid
14  signcryption signature invalid
15  replayed envelope
16  DV server refused the message
17  directory lookup failed
20  public verification failed
21  scenario expectation failed
22  scenario script parse error
"""

from __future__ import annotations

import argparse
import getpass
import hashlib
import json
import logging
import os
import random
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__, tlv, wire
from .crypto_suite import DEFAULT_SUITE, Suite, get_suite
from .curve_math import (
    DEFAULT_CURVE, CurveError, DomainParams, STRICT, get_curve, parse_params_text,
    register_curve, scalar_mul, validate_domain_params)
from .keypair_pki import (
    CertStatus, CertificateRequest, InvalidIdentityError, KeyPair, KeystoreError,
    WrongPasswordError, check_identity, decode_keystore,
    encode_cert_request, encode_certificate, encode_keystore, generate_keypair,
    keystore_open, keystore_seal, make_proof_of_possession, validate_certificate)
from .protocol_flow import (
    BASIC, DEFAULT_FRESHNESS_WINDOW, FIG5, ClientState, Deployment, Network,
    SendAborted, TrustedRoots, WallClock, compose_and_send, fetch_and_open,
    normalize_topology)
from .services import (
    DV_ACTOR, MAIL_ACTOR, CertificateAuthority, Delivery, Directory, DirectoryError,
    DuplicateIdentityError, DvLog, DvServer, MailRelay, OcspResponder)
from .signcrypt import public_verify
from .simulator import ScriptError, bundled_names, load_bundled, parse_script, run_scenario

log = logging.getLogger("smemail")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DUPLICATE = 4
EXIT_UNKNOWN_IDENTITY = 5
EXIT_WRONG_PASSWORD = 6
EXIT_VERIFY_FAILED = 20
EXIT_SIMULATE_FAILED = 21
EXIT_SCRIPT_ERROR = 22

STAGE_EXIT = {
    "ocsp": 10,
    "dv-signature": 11,
    "digest-mismatch": 12,
    "envelope-invalid": 13,
    "signature-invalid": 14,
    "replay": 15,
    "dv": 16,
    "directory": 17,
}

PASSWORD_ENV = "SMEMAIL_PASSWORD"
# The local CA/OCSP/DV fixture is not a real trust anchor; its keys are sealed
# with a fixed passphrase only so they never sit on disk as bare scalars.
FIXTURE_PASSWORD = "smemail-local-fixture"
FIXTURE_ROLES = ("ca", "ocsp", "dv")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


@dataclass
class Config:
    curve: str = DEFAULT_CURVE.name
    suite: str = DEFAULT_SUITE.name
    keystore_dir: Path = Path("smemail-data/keys")
    directory_dir: Path = Path("smemail-data/directory")
    state_dir: Path = Path("smemail-data/state")
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW
    topology: str = BASIC

    _PATHS = ("keystore_dir", "directory_dir", "state_dir")

    @classmethod
    def load(cls, path: str | None) -> "Config":
        cfg = cls()
        if path is None:
            return cfg
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from None
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in cls.__dataclass_fields__ or key.startswith("_"):
                raise CliError(f"{path}:{line_no}: unknown setting {raw.strip()!r}",
                               EXIT_CONFIG)
            if key in cls._PATHS:
                value = Path(value)
                if not value.is_absolute():
                    value = p.parent / value
            elif key == "freshness_window":
                try:
                    value = int(value)
                except ValueError:
                    raise CliError(f"{path}:{line_no}: freshness_window must be an "
                                   "integer", EXIT_CONFIG) from None
            setattr(cfg, key, value)
        return cfg


def resolve_curve(spec: str) -> DomainParams:
    """A registered curve name, or a path to a key=value parameter file."""
    try:
        return get_curve(spec)
    except KeyError:
        pass
    path = Path(spec)
    if not path.is_file():
        raise CliError(f"unknown curve {spec!r}", EXIT_CONFIG)
    try:
        params = parse_params_text(path.read_text(encoding="utf-8"))
    except (OSError, CurveError) as exc:
        raise CliError(f"bad curve file {spec}: {exc}", EXIT_CONFIG) from None
    violations = validate_domain_params(params, params.default_mode)
    if violations:
        raise CliError("weak domain parameters: " + "; ".join(map(str, violations)),
                       EXIT_CONFIG)
    try:
        return register_curve(params)
    except CurveError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


class FileMailRelay(MailRelay):
    """Mailboxes as numbered files under ``root/<hash of identity>/``."""

    def __init__(self, root: Path):
        super().__init__()
        self.root = root
        self.last_path: Path | None = None

    def _box(self, recipient: str) -> Path:
        return self.root / hashlib.sha256(recipient.encode("utf-8")).hexdigest()[:16]

    def _entries(self, recipient: str) -> list[Path]:
        box = self._box(recipient)
        return sorted(box.glob("*.eml")) if box.is_dir() else []

    def enqueue(self, recipient: str, item: Delivery) -> None:
        box = self._box(recipient)
        box.mkdir(parents=True, exist_ok=True)
        entries = self._entries(recipient)
        seq = int(entries[-1].stem) + 1 if entries else 1
        path = box / f"{seq:06d}.eml"
        path.write_bytes(item.envelope)
        if item.dv_response is not None:
            path.with_suffix(".ver").write_text(tlv.armor(item.dv_response))
        self.last_path = path

    def fetch(self, recipient: str) -> list[Delivery]:
        out = []
        for path in self._entries(recipient):
            ver_path = path.with_suffix(".ver")
            ver = tlv.dearmor(ver_path.read_text()) if ver_path.exists() else None
            out.append(Delivery(path.read_bytes(), ver))
            path.unlink()
            if ver_path.exists():
                ver_path.unlink()
        return out

    def pending(self, recipient: str) -> int:
        return len(self._entries(recipient))


class Workspace:
    """Everything one CLI invocation needs, loaded from the configured directories."""

    def __init__(self, cfg: Config, rng):
        self.cfg = cfg
        self.rng = rng
        self.params = resolve_curve(cfg.curve)
        try:
            self.suite: Suite = get_suite(cfg.suite)
        except KeyError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
        try:
            self.topology = normalize_topology(cfg.topology)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
        self.directory = Directory(self.params, self.suite, cfg.directory_dir)
        keys = self._fixture_keys()
        self.ca = CertificateAuthority(keys["ca"], self.directory, self.params,
                                       self.suite, rng)
        self.ocsp = OcspResponder(self.directory, keys["ocsp"], keys["ca"].pk,
                                  self.params, self.suite, rng)
        self.mail = FileMailRelay(cfg.state_dir / "mail")
        self.network = Network(WallClock(int(time.time())))
        dv = None
        if self.topology != BASIC:
            relay_actor = DV_ACTOR if self.topology == FIG5 else MAIL_ACTOR
            dv = DvServer(self.directory, self.ocsp, keys["dv"], keys["ca"].pk,
                          keys["ocsp"].pk, self.params, self.suite, rng, self.mail,
                          DvLog(cfg.state_dir / "dv.log"), self.network.carry,
                          relay_actor)
        self.roots = TrustedRoots(keys["ca"].pk, keys["ocsp"].pk, keys["dv"].pk)
        self.deployment = Deployment(self.params, self.suite, self.network.clock,
                                     self.network, self.directory, self.ocsp, self.mail,
                                     dv, self.topology)

    @property
    def now(self) -> int:
        return self.network.clock.now

    def _fixture_keys(self) -> dict[str, KeyPair]:
        root = self.cfg.state_dir / "fixture"
        keys = {}
        for role in FIXTURE_ROLES:
            path = root / f"{role}.keystore"
            if path.exists():
                ks = decode_keystore(tlv.dearmor(path.read_text()))
                if ks.curve_id != self.params.curve_id:
                    raise CliError(f"state in {self.cfg.state_dir} was created for a "
                                   "different curve", EXIT_CONFIG)
                sk = keystore_open(ks, FIXTURE_PASSWORD)
                keys[role] = KeyPair(sk, self._pk(sk))
            else:
                kp = generate_keypair(self.params, self.rng)
                root.mkdir(parents=True, exist_ok=True)
                ks = keystore_seal(kp.sk, f"{role}@smemail.test", FIXTURE_PASSWORD,
                                   self.params, self.rng, self.suite)
                path.write_text(tlv.armor(encode_keystore(ks)))
                keys[role] = kp
        return keys

    def _pk(self, sk: int):
        return scalar_mul(sk, self.params.G, self.params)

    def key_path(self, identity: str, suffix: str) -> Path:
        return self.cfg.keystore_dir / f"{identity}.{suffix}"

    def open_keypair(self, identity: str, password: str) -> KeyPair:
        path = self.key_path(identity, "keystore")
        if not path.exists():
            raise CliError(f"no keystore for {identity}", EXIT_UNKNOWN_IDENTITY)
        try:
            sk = keystore_open(decode_keystore(tlv.dearmor(path.read_text())), password)
        except WrongPasswordError:
            raise CliError("wrong password", EXIT_WRONG_PASSWORD) from None
        except (KeystoreError, tlv.DecodeError) as exc:
            raise CliError(f"unreadable keystore: {exc}", EXIT_CONFIG) from None
        return KeyPair(sk, self._pk(sk))

    def client(self, identity: str, password: str) -> ClientState:
        kp = self.open_keypair(identity, password)
        state = ClientState(identity, kp, self.roots, self.params, self.suite,
                            self.cfg.freshness_window)
        state.replay_cache.update(self._load_replay(identity))
        return state

    def _replay_path(self, identity: str) -> Path:
        digest = hashlib.sha256(identity.encode("utf-8")).hexdigest()[:16]
        return self.cfg.state_dir / "replay" / f"{digest}.seen"

    def _load_replay(self, identity: str) -> set[bytes]:
        path = self._replay_path(identity)
        if not path.exists():
            return set()
        return {bytes.fromhex(line) for line in path.read_text().split()}

    def save_replay(self, client: ClientState) -> None:
        path = self._replay_path(client.identity)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(r.hex() + "\n" for r in sorted(client.replay_cache)))


def read_password(prompt: str = "keystore password: ") -> str:
    env = os.environ.get(PASSWORD_ENV)
    if env is not None:
        return env
    try:
        return getpass.getpass(prompt)
    except (EOFError, KeyboardInterrupt):
        raise CliError("no password given", EXIT_USAGE) from None


def _rng(seed: int | None):
    return random.SystemRandom() if seed is None else random.Random(seed)


def _emit(args, data: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(data, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _workspace(args) -> Workspace:
    cfg = Config.load(args.config)
    if args.curve:
        cfg.curve = args.curve
    if args.topology:
        cfg.topology = args.topology
    return Workspace(cfg, _rng(args.seed))


def cmd_keygen(args) -> int:
    try:
        identity = check_identity(args.identity)
    except InvalidIdentityError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    ws = _workspace(args)
    existing = ws.directory.lookup(identity)
    if existing is not None and not existing.revoked:
        raise CliError(f"duplicate identity {identity}", EXIT_DUPLICATE)
    if ws.params.default_mode != STRICT:
        print(f"warning: curve {ws.params.name} is test-mode only (n has "
              f"{ws.params.n.bit_length()} bits); do not use it for real mail",
              file=sys.stderr)
    password = read_password("new keystore password: ")
    kp = generate_keypair(ws.params, ws.rng)
    nonce = ws.ca.challenge()
    pop = make_proof_of_possession(nonce, identity, kp, ws.params, ws.rng, ws.suite)
    request = CertificateRequest(identity, kp.pk, nonce, pop, ws.params.curve_id,
                                 ws.suite.suite_id)
    try:
        rec = ws.ca.register(request, ws.now)
    except DuplicateIdentityError as exc:
        raise CliError(str(exc), EXIT_DUPLICATE) from None
    ws.cfg.keystore_dir.mkdir(parents=True, exist_ok=True)
    ks = keystore_seal(kp.sk, identity, password, ws.params, ws.rng, ws.suite)
    paths = {
        "keystore": ws.key_path(identity, "keystore"),
        "request": ws.key_path(identity, "csr"),
        "certificate": ws.key_path(identity, "cert"),
    }
    paths["keystore"].write_text(tlv.armor(encode_keystore(ks)))
    paths["request"].write_text(tlv.armor(encode_cert_request(request)))
    paths["certificate"].write_text(tlv.armor(encode_certificate(rec.cert)))
    _emit(args, {"identity": identity, "serial": rec.cert.serial,
                 **{k: str(v) for k, v in paths.items()}},
          [f"{k}: {v}" for k, v in paths.items()])
    return EXIT_OK


def cmd_revoke(args) -> int:
    ws = _workspace(args)
    try:
        ws.ca.revoke(args.identity, ws.now)
    except DirectoryError:
        raise CliError(f"unknown identity {args.identity}", EXIT_UNKNOWN_IDENTITY) from None
    _emit(args, {"revoked": args.identity}, [f"revoked {args.identity}"])
    return EXIT_OK


def _read_input(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_USAGE) from None


def cmd_send(args) -> int:
    ws = _workspace(args)
    message = _read_input(args.message_file)
    client = ws.client(args.sender, read_password())
    try:
        compose_and_send(client, args.recipient, message, ws.deployment, ws.rng)
    except SendAborted as exc:
        _emit(args, {"aborted": exc.stage, "detail": exc.detail},
              [f"aborted: {exc.stage}: {exc.detail}"])
        return STAGE_EXIT[exc.stage]
    path = ws.mail.last_path
    _emit(args, {"sent": str(path)}, [str(path)])
    return EXIT_OK


def cmd_recv(args) -> int:
    ws = _workspace(args)
    client = ws.client(args.identity, read_password())
    got = fetch_and_open(client, ws.deployment, ws.rng)
    ws.save_replay(client)
    disclose = Path(args.disclose_dir) if args.disclose_dir else None
    records, lines, code = [], [], EXIT_OK
    for i, item in enumerate(got, start=1):
        if item.accepted:
            text = item.message.decode("utf-8", "replace")
            rec = {"sender": item.sender, "accepted": True, "message": text}
            lines += [f"from {item.sender}", text]
            if disclose is not None:
                disclose.mkdir(parents=True, exist_ok=True)
                stem = disclose / f"{i:04d}"
                stem.with_suffix(".eml").write_bytes(item.envelope)
                stem.with_suffix(".msg").write_bytes(item.message)
                stem.with_suffix(".key").write_text(item.session_key.hex() + "\n")
                rec["disclosed"] = str(stem)
        else:
            rec = {"sender": item.sender, "accepted": False, "stage": item.stage,
                   "detail": item.detail}
            lines.append(f"rejected from {item.sender}: {item.stage}: {item.detail}")
            if code == EXIT_OK:
                code = STAGE_EXIT[item.stage]
        records.append(rec)
    if not got:
        lines.append("no messages")
    _emit(args, {"messages": records}, lines)
    return code


def cmd_verify(args) -> int:
    ws = _workspace(args)
    try:
        env = wire.envelope_from_octets(_read_input(args.envelope))
    except tlv.DecodeError as exc:
        raise CliError(f"malformed envelope: {exc}", STAGE_EXIT["envelope-invalid"]) from None
    try:
        k = bytes.fromhex(_read_input(args.key).decode("ascii").strip())
    except (UnicodeDecodeError, ValueError):
        raise CliError("key file must hold the session key in hex", EXIT_USAGE) from None
    message = _read_input(args.message)
    rec = ws.directory.lookup(env.sender)
    if rec is None:
        raise CliError(f"unknown identity {env.sender}", EXIT_UNKNOWN_IDENTITY)
    status = validate_certificate(rec.cert, ws.roots.ca_pk, ws.now, ws.params, ws.suite)
    if status is not CertStatus.GOOD:
        raise CliError(f"sender certificate {status.value}", STAGE_EXIT["directory"])
    ok = public_verify(env.R, message, k, env.s, rec.pk, env.sender, env.recipient,
                       ws.params, ws.suite)
    verdict = "verified" if ok else "verification failed"
    _emit(args, {"verified": ok, "sender": env.sender, "recipient": env.recipient},
          [f"{verdict}: {env.sender} -> {env.recipient}"])
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_simulate(args) -> int:
    if args.list:
        _emit(args, {"scenarios": bundled_names()}, bundled_names())
        return EXIT_OK
    if not args.script:
        raise CliError("simulate needs a script path or bundled name", EXIT_USAGE)
    path = Path(args.script)
    try:
        if path.is_file():
            script = parse_script(path.read_text(encoding="utf-8"), path.stem)
        else:
            script = load_bundled(args.script)
    except ScriptError as exc:
        raise CliError(f"{args.script}: {exc}", EXIT_SCRIPT_ERROR) from None
    except KeyError:
        raise CliError(f"no script file or bundled scenario {args.script!r}",
                       EXIT_USAGE) from None
    if args.topology:
        script.topology = normalize_topology(args.topology)
    if args.curve:
        script.curve = args.curve
    result = run_scenario(script, args.seed)
    out = Path(args.out) if args.out else Path(f"{script.name}.transcript")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(tlv.armor(result.transcript_octets()))
    lines = [f"{'PASS' if v.passed else 'FAIL'} line {v.line_no}: {v.text}"
             + ("" if v.passed else f"  (got {' '.join(v.actual)})")
             for v in result.verdicts]
    lines.append(f"{script.name} seed={result.seed}: "
                 f"{'all expectations met' if result.passed else 'FAILED'}; "
                 f"transcript {out}")
    _emit(args, {
        "scenario": script.name, "seed": result.seed, "passed": result.passed,
        "transcript": str(out),
        "steps": [{"line": v.line_no, "passed": v.passed, "expected": v.expected,
                   "actual": list(v.actual)} for v in result.verdicts],
    }, lines)
    return EXIT_OK if result.passed else EXIT_SIMULATE_FAILED


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default,
                        help="key=value configuration file")
    parser.add_argument("--curve", metavar="NAME", default=default,
                        help="curve name or parameter file")
    parser.add_argument("--topology", choices=("basic", "fig4", "fig5"), default=default)
    parser.add_argument("--seed", type=int, metavar="N", default=default,
                        help="deterministic randomness (testing only)")
    parser.add_argument("--json", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smemail", description="SMEmail toolkit",
                                     epilog="exit codes are listed in smemail.cli")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("keygen", cmd_keygen, "create a key pair, certificate and directory record")
    p.add_argument("identity")
    p = add("revoke", cmd_revoke, "revoke an identity in the local directory")
    p.add_argument("identity")
    p = add("send", cmd_send, "signcrypt a message file and deliver it")
    p.add_argument("sender")
    p.add_argument("recipient")
    p.add_argument("message_file", help="path, or - for stdin")
    p = add("recv", cmd_recv, "fetch and open every pending envelope")
    p.add_argument("identity")
    p.add_argument("--disclose-dir", metavar="DIR",
                   help="write (envelope, message, session key) for third-party checks")
    p = add("verify", cmd_verify, "publicly verify a disclosed message")
    p.add_argument("envelope")
    p.add_argument("--key", required=True, help="file holding the session key k in hex")
    p.add_argument("--message", required=True, help="file holding the disclosed message")
    p = add("simulate", cmd_simulate, "run a scenario script")
    p.add_argument("script", nargs="?", help="script path or bundled scenario name")
    p.add_argument("--out", metavar="PATH", help="transcript output file")
    p.add_argument("--list", action="store_true", help="list bundled scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"smemail: {exc}", file=sys.stderr)
        return exc.code
    except ScriptError as exc:
        print(f"smemail: {exc}", file=sys.stderr)
        return EXIT_SCRIPT_ERROR
    except (OSError, ValueError) as exc:
        print(f"smemail: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
