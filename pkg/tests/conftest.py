import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smemail.curve_math import TOY17, SECP256R1  # noqa: E402
from smemail.keypair_pki import KeyPair, generate_keypair  # noqa: E402

# filled in by test_acceptance.py; printed after the run
ACCEPTANCE_NOTES: dict[str, str] = {}


@pytest.fixture
def rng():
    return random.Random(20240611)


@pytest.fixture
def toy():
    return TOY17


@pytest.fixture
def p256():
    return SECP256R1


@pytest.fixture
def toy_pair():
    """Fixed desk keys on curve T: sk_a = 3, sk_b = 7."""
    from smemail.curve_math import scalar_mul
    alice = KeyPair(3, scalar_mul(3, TOY17.G, TOY17))
    bob = KeyPair(7, scalar_mul(7, TOY17.G, TOY17))
    return alice, bob


@pytest.fixture
def p256_pair(rng):
    return generate_keypair(SECP256R1, rng), generate_keypair(SECP256R1, rng)


def pytest_terminal_summary(terminalreporter):
    reports = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in getattr(rep, "nodeid", "") and rep.when == "call":
                reports.append((rep.nodeid, outcome))
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in sorted(reports):
        name = nodeid.split("::")[-1]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        note = ACCEPTANCE_NOTES.get(name, "")
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  [{note}]" if note else ""))
