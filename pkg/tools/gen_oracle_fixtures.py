#!/usr/bin/env python3
"""Generate the frozen plain-data oracle fixtures.

Run from the repository root:

    python3 tools/gen_oracle_fixtures.py

Serializes a battery of plain-data objects with the reference
serializer at every protocol 0-5, drops any dump that contains
import-, reduce-, or extension-flavored opcodes (the machine under
test resolves those to stubs by design, so they can never agree with
the reference), and freezes the expected canonical rendering of the
reference deserializer's result.

The output file is committed; regenerate only when the fixture battery
itself changes, and expect the test suite to notice if the frozen
expectations move.
"""

import base64
import json
import math
import os
import pickle
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from picklediff.opcode_model import iter_instructions  # noqa: E402
from picklediff.pvm import canonical  # noqa: E402

# Opcodes whose semantics the machine intentionally replaces (stub
# imports, object construction, extension registry, persistent ids).
# A dump containing any of these is not a plain-data fixture.
NON_PLAIN = {
    "GLOBAL",
    "STACK_GLOBAL",
    "INST",
    "OBJ",
    "REDUCE",
    "NEWOBJ",
    "NEWOBJ_EX",
    "BUILD",
    "EXT1",
    "EXT2",
    "EXT4",
    "PERSID",
    "BINPERSID",
}


def battery():
    ints = [
        0, 1, -1, 127, -127, 128, -128, 255, -255, 256, -256,
        2**15 - 1, -(2**15), 2**16, -(2**16),
        2**31 - 1, -(2**31), 2**31, 2**32, -(2**32),
        2**63 - 1, -(2**63), 2**63, 2**63 + 1, -(2**63) - 1,
        2**64, -(2**64), 10**30, -(10**30),
    ]
    floats = [
        0.0, -0.0, 1.5, -2.75, 3.141592653589793, 1e308, -1e308,
        1e-308, math.inf, -math.inf, math.nan, 6.02214076e23,
    ]
    texts = [
        "", "ascii text", "héllo", "日本語",
        "emoji \U0001f642", "line\nbreak\ttab", "quotes '\"",
        "nul \x00 inside", "x" * 100,
    ]
    blobs = [b"", b"abc", b"\x00\xff\xfe\x80", bytes(range(64)), b"y" * 300]
    simple = [None, True, False]
    containers = [
        [], (), {},
        [1, 2, 3],
        (1, (2, (3, (4,)))),
        [[[["deep"]]]],
        {"k1": {"k2": {"k3": {"k4": "v"}}}},
        {"a": [1, {"b": (2.5, None)}]},
        [1.5, math.inf, -math.inf, math.nan],
        {1: None, "two": 2, 3.0: b"three"},
        [None, True, False, 0, "mix", 2.5],
        ("single",),
        [(1, 2), (3, 4)],
        {"empty": [], "unit": [0]},
    ]
    sets = [set(), {1, 2, 3}, frozenset(), frozenset({"a", "b"})]
    arrays = [bytearray(), bytearray(b"xy"), bytearray(b"\x00\x01\x02")]

    shared = [1, 2]
    sharing = [[shared, shared], {"left": shared, "right": shared}]

    recursive_list = [1, 2]
    recursive_list.append(recursive_list)
    recursive_dict = {"self": None}
    recursive_dict["self"] = recursive_dict
    recursive = [recursive_list, recursive_dict]

    return (
        ints + floats + texts + blobs + simple + containers + sets
        + arrays + sharing + recursive
    )


def main():
    fixtures = []
    skipped = 0
    for index, obj in enumerate(battery()):
        for proto in range(6):
            try:
                blob = pickle.dumps(obj, proto)
            except Exception:
                skipped += 1
                continue
            names = {ins.spec.name for ins in iter_instructions(blob)}
            if names & NON_PLAIN:
                skipped += 1
                continue
            expected = canonical(pickle.loads(blob))
            fixtures.append(
                {
                    "object_index": index,
                    "protocol": proto,
                    "payload_b64": base64.b64encode(blob).decode("ascii"),
                    "expected": expected,
                }
            )
    out_path = os.path.join(
        os.path.dirname(__file__), "..", "tests", "data", "oracle_fixtures.json"
    )
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as handle:
        json.dump({"fixtures": fixtures}, handle, indent=1)
    print(
        "wrote %d fixtures (%d skipped as non-plain) to %s"
        % (len(fixtures), skipped, os.path.relpath(out_path))
    )


if __name__ == "__main__":
    main()
