#!/usr/bin/env python3
"""Freeze the stub-kind assignments for a spread of import paths.

The import resolver maps (module, name) to one of three stub kinds by
FNV-1a-64 over "module\\x00name" modulo 3.  This script recomputes that
mapping with its own local FNV implementation (kept deliberately
separate from the package's) and freezes the results, so any drift in
the package's hash or kind rule shows up as a fixture diff rather than
silently re-shuffling every stub in recorded corpora.

    python3 tools/gen_stub_fixture.py
"""

import json
import os

FNV_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
KINDS = ("function", "class", "instance")

PATHS = [
    ("posix", "system"),
    ("os", "system"),
    ("nt", "system"),
    ("builtins", "eval"),
    ("builtins", "exec"),
    ("builtins", "getattr"),
    ("builtins", "compile"),
    ("builtins", "list"),
    ("builtins", "set"),
    ("builtins", "bytearray"),
    ("subprocess", "Popen"),
    ("subprocess", "run"),
    ("socket", "socket"),
    ("pickle", "loads"),
    ("copyreg", "_reconstructor"),
    ("operator", "attrgetter"),
    ("functools", "partial"),
    ("shutil", "rmtree"),
    ("webbrowser", "open"),
    ("importlib", "import_module"),
    ("numpy", "ndarray"),
    ("torch", "load"),
    ("collections", "OrderedDict"),
    ("", ""),
    ("a", "b"),
    ("module.with.dots", "name"),
    ("mödule", "näme"),
    ("x" * 50, "y" * 50),
]


def fnv1a64(data: bytes) -> int:
    value = FNV_BASIS
    for byte in data:
        value = ((value ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return value


def main():
    entries = []
    for module, name in PATHS:
        digest = fnv1a64(module.encode("utf-8") + b"\x00" + name.encode("utf-8"))
        entries.append(
            {
                "module": module,
                "name": name,
                "hash_hex": "%016x" % digest,
                "kind": KINDS[digest % 3],
            }
        )
    out_path = os.path.join(
        os.path.dirname(__file__), "..", "tests", "data", "stub_kinds.json"
    )
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as handle:
        json.dump({"entries": entries}, handle, indent=1)
    print("wrote %d stub kind entries" % len(entries))


if __name__ == "__main__":
    main()
