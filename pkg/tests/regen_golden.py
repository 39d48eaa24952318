"""Rewrite tests/golden/*.transcript from the bundled scenarios.

Run after an intentional change to the wire format or a scenario:

    python3 tests/regen_golden.py
"""

from pathlib import Path

from smemail import tlv
from smemail.simulator import bundled_names, load_bundled, run_scenario

GOLDEN = Path(__file__).with_name("golden")


def render(name: str) -> str:
    return tlv.armor(run_scenario(load_bundled(name)).transcript_octets())


def main() -> None:
    GOLDEN.mkdir(exist_ok=True)
    for name in bundled_names():
        (GOLDEN / f"{name}.transcript").write_text(render(name), encoding="ascii")
        print(name)


if __name__ == "__main__":
    main()
