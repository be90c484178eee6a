"""
Shrinking a discrepancy witness
===============================

Fuzz-found payloads carry noise: opcodes that played no part in the
disagreement.  The minimizer removes whole instructions while the
(kind, outcome_vector) verdict stays put, and stops at a payload where
no single-instruction removal survives.
"""

from picklediff import Payload, detect, execute, iter_instructions, minimize

TARGETS = ("internal-pvm", "internal-disasm")


def show(tag, payload):
    names = [ins.spec.name for ins in iter_instructions(payload.pickle_bytes)]
    verdict = detect(execute(payload, TARGETS))
    print("%-9s %r" % (tag, payload.pickle_bytes))
    print("          %d instructions: %s" % (len(names), " ".join(names)))
    print("          verdict: %s" % (verdict,))


# a hex INT needle buried in unrelated work
noisy = Payload(
    pickle_bytes=b"N]q\x00}I1\nI0x1337\n\x85.",
    encoding="ascii",
    buffers_choice=0,
    seed=0,
)
show("original", noisy)

small = minimize(noisy, targets=TARGETS)
show("minimal", small)

# prove 1-minimality by hand: drop each remaining instruction in turn
print()
baseline = detect(execute(small, TARGETS))
instructions = list(iter_instructions(small.pickle_bytes))
pieces = [small.pickle_bytes[i.offset : i.end] for i in instructions]
for drop, ins in enumerate(instructions):
    if ins.spec.name == "STOP":
        continue
    candidate = b"".join(p for k, p in enumerate(pieces) if k != drop)
    verdict = detect(execute(candidate, TARGETS))
    kept = "still trips" if verdict == baseline else "verdict gone"
    print("without %-6s %-18r %s" % (ins.spec.name, candidate, kept))
