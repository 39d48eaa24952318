from pathlib import Path

import pytest

from smemail import tlv
from smemail.curve_math import TOY17
from smemail.protocol_flow import (
    decode_transcript, encode_transcript, validation_precedes_signcryption)
from smemail.simulator import (
    ScriptError, World, bundled_names, load_bundled, make_mutation, parse_script,
    run_scenario, tokens_match)

GOLDEN = Path(__file__).with_name("golden")
EXPECTED_BUNDLE = {
    "happy-basic", "happy-fig4", "happy-fig5", "masquerade", "modification", "replay",
    "revoked-sender", "revoked-recipient", "ocsp-token-tamper", "dv-digest-mismatch",
    "forward-secrecy-demo",
}


def test_bundle_contains_required_scenarios():
    assert EXPECTED_BUNDLE <= set(bundled_names())
    with pytest.raises(KeyError):
        load_bundled("no-such-thing")


@pytest.mark.parametrize("name", bundled_names())
def test_bundled_scenario_passes(name):
    result = run_scenario(load_bundled(name))
    failed = [v for v in result.verdicts if not v.passed]
    assert not failed, failed
    assert validation_precedes_signcryption(result.events)


@pytest.mark.parametrize("name", bundled_names())
def test_transcript_matches_golden(name):
    text = tlv.armor(run_scenario(load_bundled(name)).transcript_octets())
    assert text == (GOLDEN / f"{name}.transcript").read_text(encoding="ascii")


def test_same_seed_same_bytes_other_seed_differs():
    script = load_bundled("happy-fig4")
    a = run_scenario(script, seed=11).transcript_octets()
    b = run_scenario(script, seed=11).transcript_octets()
    c = run_scenario(script, seed=12).transcript_octets()
    assert a == b and a != c
    assert decode_transcript(a) == run_scenario(script, seed=11).events


def _drive(script):
    world = World(script, script.seed if script.seed is not None else 0)
    for step in script.steps:
        world.run(step)
    return world


@pytest.mark.parametrize("name", [n for n in bundled_names()
                                  if load_bundled(n).curve != TOY17.name])
def test_no_private_scalar_in_transcript(name):
    script = load_bundled(name)
    world = _drive(script)
    data = encode_transcript(world.net.events)
    width = world.params.scalar_len
    secrets = [c.keypair.sk for c in world.clients.values()]
    secrets += [k.sk for k in world.outsider_keys.values()]
    secrets.append(world.ca.key.sk)
    assert secrets
    for sk in secrets:
        assert sk.to_bytes(width, "big") not in data
        assert format(sk, "x") not in data.decode("latin-1")


def test_parse_directives_and_steps():
    script = parse_script(
        "@name demo\n@topology fig5\n@curve toy17\n@seed 9\n"
        "# comment\n\n"
        'alice@example.com send bob@example.com "two words" => sent\n'
        "bob@example.com recv\n")
    assert (script.name, script.topology, script.curve, script.seed) == (
        "demo", "delegated-fig5", "toy17", 9)
    first, second = script.steps
    assert first.args == ("bob@example.com", "two words") and first.expected == ("sent",)
    assert first.line_no == 7 and second.expected is None


@pytest.mark.parametrize("text,line,fragment", [
    ("@colour red", 1, "unknown directive"),
    ("clock advance 5\nca register", 2, "argument"),
    ("\n\nalice@example.com fly", 3, "unknown action"),
    ("alice@example.com register bob@example.com", 1, "belongs to actor"),
    ("ca send a b", 1, "cannot send"),
    ("@seed x", 1, "integer"),
    ("@topology mesh", 1, "unknown topology"),
    ('alice@example.com send b "open', 1, "quotation"),
    ("bob@example.com recv =>", 1, "nothing after"),
    ("@curve nosuch", 0, "nosuch"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ScriptError) as info:
        parse_script(text)
    assert info.value.line_no == line
    assert fragment in str(info.value)


def test_tokens_match():
    assert tokens_match(("reject:replay",), ["reject:replay:seen-R"])
    assert tokens_match(("sent",), ["sent"])
    assert not tokens_match(("reject:rep",), ["reject:replay:seen-R"])
    assert not tokens_match(("sent",), ["sent", "sent"])


def test_failed_expectation_is_reported():
    script = parse_script(
        "ca register alice@example.com => ok\n"
        "ca register alice@example.com => ok\n")
    result = run_scenario(script)
    assert not result.passed
    bad = [v for v in result.verdicts if not v.passed]
    assert [(v.line_no, v.actual) for v in bad] == [(2, ("duplicate",))]


def test_unknown_user_is_an_error_token():
    result = run_scenario(parse_script("ghost@example.com recv"))
    assert result.verdicts[0].actual[0].startswith("error:")


def test_ecdlp_refused_on_strict_curve():
    script = load_bundled("forward-secrecy-p256")
    result = run_scenario(script)
    assert any("infeasible" in v.actual[0] for v in result.verdicts)


def test_unknown_mutation():
    with pytest.raises(ValueError):
        make_mutation("melt", TOY17)
