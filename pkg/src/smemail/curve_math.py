"""Prime-field elliptic curve arithmetic, domain parameters and encodings.

Curves are short Weierstrass ``y^2 = x^3 + a*x + b`` over F_q.  Field
elements and scalars are plain ints; points are immutable ``Point``
values with ``INFINITY`` as the group identity.  Arithmetic is affine and
not constant time.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Iterator

STRICT = "strict"
TEST = "test"

STRICT_MIN_ORDER_BITS = 160
# embedding-degree bound per mode; 6 covers every supersingular curve
EMBEDDING_BOUND = {STRICT: 20, TEST: 6}


class CurveError(ValueError):
    pass


class ZeroInverseError(ZeroDivisionError):
    pass


class OffCurveError(CurveError):
    pass


class PointDecodeError(CurveError):
    pass


@dataclass(frozen=True)
class Point:
    x: int | None = None
    y: int | None = None

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __repr__(self) -> str:
        if self.is_infinity:
            return "Point(O)"
        return f"Point({self.x}, {self.y})"


INFINITY = Point()


@dataclass(frozen=True)
class DomainParams:
    name: str
    curve_id: int
    q: int
    a: int
    b: int
    G: Point
    n: int
    h: int | None = None

    @property
    def f(self) -> int:
        """Bit length of the group order, floor(log2 n) + 1."""
        return self.n.bit_length()

    @property
    def coord_len(self) -> int:
        return (self.q.bit_length() + 7) // 8

    @property
    def scalar_len(self) -> int:
        return (self.n.bit_length() + 7) // 8

    @property
    def default_mode(self) -> str:
        return STRICT if self.n.bit_length() > STRICT_MIN_ORDER_BITS else TEST

    def contains(self, P: Point) -> bool:
        return is_on_curve(P, self)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


# violation codes
Q_NOT_PRIME = "q-not-prime"
COEFFICIENT_RANGE = "coefficient-range"
SINGULAR = "singular"
G_OFF_CURVE = "g-off-curve"
N_NOT_PRIME = "n-not-prime"
NG_NOT_INFINITY = "ng-not-infinity"
N_EQUALS_Q = "n-equals-q"
N_TOO_SMALL = "n-too-small"
SMALL_EMBEDDING_DEGREE = "small-embedding-degree"
N_BELOW_STRICT_BOUND = "n-below-2^160"


class MulCounter:
    def __init__(self) -> None:
        self.value = 0


_mul_counter: contextvars.ContextVar[MulCounter | None] = contextvars.ContextVar(
    "smemail_mul_counter", default=None)


@contextlib.contextmanager
def count_scalar_mults() -> Iterator[MulCounter]:
    """Count ``scalar_mul`` calls made inside the block (current context only)."""
    counter = MulCounter()
    token = _mul_counter.set(counter)
    try:
        yield counter
    finally:
        _mul_counter.reset(token)


_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                 59, 61, 67, 71)


def is_probable_prime(n: int) -> bool:
    """Miller-Rabin over the first twenty prime bases.

    Deterministic for n < 3.3e24; beyond that the error bound is 4^-20.
    """
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _SMALL_PRIMES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def mod_inv(x: int, q: int) -> int:
    x %= q
    if x == 0:
        raise ZeroInverseError(f"0 has no inverse modulo {q}")
    return pow(x, -1, q)


def is_canonical(P: Point, params: DomainParams) -> bool:
    if P.is_infinity:
        return True
    return 0 <= P.x < params.q and 0 <= P.y < params.q


def satisfies_equation(P: Point, params: DomainParams) -> bool:
    q = params.q
    x, y = P.x, P.y
    return (y * y - (x * x * x + params.a * x + params.b)) % q == 0


def is_on_curve(P: Point, params: DomainParams) -> bool:
    if P.is_infinity:
        return True
    return is_canonical(P, params) and satisfies_equation(P, params)


def _require_on_curve(P: Point, params: DomainParams) -> None:
    if not is_on_curve(P, params):
        raise OffCurveError(f"{P!r} is not on curve {params.name}")


def point_neg(P: Point, params: DomainParams) -> Point:
    if P.is_infinity:
        return P
    return Point(P.x, (-P.y) % params.q)


def _add(P: Point, Q: Point, params: DomainParams) -> Point:
    if P.is_infinity:
        return Q
    if Q.is_infinity:
        return P
    q = params.q
    if P.x == Q.x:
        if (P.y + Q.y) % q == 0:
            return INFINITY
        lam = (3 * P.x * P.x + params.a) * mod_inv(2 * P.y, q) % q
    else:
        lam = (Q.y - P.y) * mod_inv(Q.x - P.x, q) % q
    x = (lam * lam - P.x - Q.x) % q
    y = (lam * (P.x - x) - P.y) % q
    return Point(x, y)


def point_add(P: Point, Q: Point, params: DomainParams) -> Point:
    _require_on_curve(P, params)
    _require_on_curve(Q, params)
    return _add(P, Q, params)


def _mul(k: int, P: Point, params: DomainParams) -> Point:
    result = INFINITY
    addend = P
    while k:
        if k & 1:
            result = _add(result, addend, params)
        addend = _add(addend, addend, params)
        k >>= 1
    return result


def scalar_mul(k: int, P: Point, params: DomainParams) -> Point:
    """k*P by double-and-add, least significant bit first."""
    if k < 0:
        raise ValueError("scalar must be non-negative")
    _require_on_curve(P, params)
    counter = _mul_counter.get()
    if counter is not None:
        counter.value += 1
    return _mul(k, P, params)


def validate_domain_params(params: DomainParams, mode: str = STRICT) -> list[Violation]:
    """Every violated domain-parameter condition; an empty list means ok.

    Group-law checks are skipped when q is not prime (the formulas need a
    field) or when G is not on the curve.
    """
    if mode not in EMBEDDING_BOUND:
        raise ValueError(f"unknown validation mode {mode!r}")
    q, a, b, G, n = params.q, params.a, params.b, params.G, params.n
    found: list[Violation] = []

    q_prime = is_probable_prime(q)
    if not q_prime:
        found.append(Violation(Q_NOT_PRIME, f"q = {q} is not prime"))
    if not (0 <= a < q and 0 <= b < q):
        found.append(Violation(COEFFICIENT_RANGE, "a and b must lie in [0, q-1]"))
    if (4 * a ** 3 + 27 * b ** 2) % q == 0:
        found.append(Violation(SINGULAR, "4a^3 + 27b^2 = 0 (mod q)"))
    g_ok = not G.is_infinity and is_on_curve(G, params)
    if not g_ok:
        found.append(Violation(G_OFF_CURVE, f"G = {G!r} is not a finite curve point"))
    if not is_probable_prime(n):
        found.append(Violation(N_NOT_PRIME, f"n = {n} is not prime"))
    if q_prime and g_ok and n > 0:
        try:
            if not _mul(n, G, params).is_infinity:
                found.append(Violation(NG_NOT_INFINITY, "nG != O"))
        except ZeroInverseError:
            found.append(Violation(NG_NOT_INFINITY, "nG could not be evaluated"))
    if n == q:
        found.append(Violation(N_EQUALS_Q, "n = q (anomalous curve)"))
    if n * n <= 16 * q:
        found.append(Violation(N_TOO_SMALL, "n <= 4*sqrt(q)"))
    bound = EMBEDDING_BOUND[mode]
    if n > 1:
        for i in range(1, bound + 1):
            if pow(q, i, n) == 1:
                found.append(Violation(
                    SMALL_EMBEDDING_DEGREE, f"n divides q^{i} - 1 (bound {bound})"))
                break
    if mode == STRICT and n.bit_length() <= STRICT_MIN_ORDER_BITS:
        found.append(Violation(N_BELOW_STRICT_BOUND, "n <= 2^160"))
    return found


def encode_point(P: Point, params: DomainParams) -> bytes:
    if P.is_infinity:
        return b"\x00"
    w = params.coord_len
    return b"\x04" + P.x.to_bytes(w, "big") + P.y.to_bytes(w, "big")


def decode_point(data: bytes, params: DomainParams) -> Point:
    """Inverse of ``encode_point``; rejects non-canonical and off-curve points."""
    if data == b"\x00":
        return INFINITY
    if not data:
        raise PointDecodeError("empty point encoding")
    if data[0] != 0x04:
        raise PointDecodeError(f"bad point marker 0x{data[0]:02x}")
    w = params.coord_len
    if len(data) != 1 + 2 * w:
        raise PointDecodeError(f"point encoding must be {1 + 2 * w} octets, got {len(data)}")
    x = int.from_bytes(data[1:1 + w], "big")
    y = int.from_bytes(data[1 + w:], "big")
    if x >= params.q or y >= params.q:
        raise PointDecodeError("coordinate not reduced modulo q")
    P = Point(x, y)
    if not satisfies_equation(P, params):
        raise PointDecodeError(f"{P!r} is not on curve {params.name}")
    return P


def encode_scalar(s: int, params: DomainParams) -> bytes:
    if not 0 <= s < params.n:
        raise ValueError("scalar out of range [0, n-1]")
    return s.to_bytes(params.scalar_len, "big")


def decode_scalar(data: bytes, params: DomainParams) -> int:
    if len(data) != params.scalar_len:
        raise PointDecodeError(
            f"scalar must be {params.scalar_len} octets, got {len(data)}")
    s = int.from_bytes(data, "big")
    if s >= params.n:
        raise PointDecodeError("scalar not reduced modulo n")
    return s


def encode_coordinate(x: int, params: DomainParams) -> bytes:
    return x.to_bytes(params.coord_len, "big")


# Curve T: the textbook curve used for exhaustive desk checks.
TOY17 = DomainParams(
    name="toy17", curve_id=0x01, q=17, a=2, b=2, G=Point(5, 1), n=19, h=1)

# SEC 2 v2 / FIPS 186-4 P-256.
SECP256R1 = DomainParams(
    name="secp256r1",
    curve_id=0x02,
    q=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFC,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    G=Point(0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
            0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5),
    n=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
    h=1,
)

# SEC 2 v2 secp256k1.
SECP256K1 = DomainParams(
    name="secp256k1",
    curve_id=0x03,
    q=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
    a=0,
    b=7,
    G=Point(0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
            0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8),
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
    h=1,
)

CURVES = {c.name: c for c in (TOY17, SECP256R1, SECP256K1)}
CURVES_BY_ID = {c.curve_id: c for c in CURVES.values()}
DEFAULT_CURVE = SECP256R1


def get_curve(name: str) -> DomainParams:
    try:
        return CURVES[name]
    except KeyError:
        raise KeyError(f"unknown curve {name!r}; known: {', '.join(CURVES)}") from None


def curve_by_id(curve_id: int) -> DomainParams:
    try:
        return CURVES_BY_ID[curve_id]
    except KeyError:
        raise KeyError(f"unknown curve id 0x{curve_id:02x}") from None


def register_curve(params: DomainParams) -> DomainParams:
    """Make a custom curve resolvable by name and by wire id."""
    known = CURVES_BY_ID.get(params.curve_id)
    if known is not None and known != params:
        raise CurveError(f"curve id {params.curve_id:#04x} already names {known.name}")
    CURVES[params.name] = params
    CURVES_BY_ID[params.curve_id] = params
    return params


_PARAM_KEYS = ("q", "a", "b", "gx", "gy", "n")


def parse_params_text(text: str) -> DomainParams:
    """``key = value`` lines: name, id, q, a, b, gx, gy, n and optional h (ints may be hex)."""
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CurveError(f"expected key = value, got {raw!r}")
        fields[key.strip().lower()] = value.strip()
    missing = [k for k in _PARAM_KEYS if k not in fields]
    if missing:
        raise CurveError(f"missing curve parameters: {', '.join(missing)}")
    try:
        ints = {k: int(fields[k], 0) for k in _PARAM_KEYS + ("id", "h") if k in fields}
    except ValueError as exc:
        raise CurveError(f"bad integer in curve parameters: {exc}") from None
    return DomainParams(fields.get("name", "custom"), ints.get("id", 0x80), ints["q"],
                        ints["a"], ints["b"], Point(ints["gx"], ints["gy"]), ints["n"],
                        ints.get("h"))
