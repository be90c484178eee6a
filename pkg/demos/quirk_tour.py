"""
A tour of pickle parser disagreements
=====================================

The same bytes, two verdicts.  The deserializer parses INT lines with
int(s, 0), the static disassembler parses them with int(s, 10); the
deserializer overwrites memo slots, the disassembler treats a repeated
slot as corruption; the deserializer ignores whatever is left on the
stack after STOP, the disassembler does not.  Each payload below is a
minimal witness for one of those gaps.
"""

from picklediff import detect, disassemble, execute, load, render_listing

PAYLOADS = [
    (b"I0x1337\n.", "hex INT literal: loads as 4919, refused as non-decimal"),
    (b"N].", "leftover stack entry after STOP"),
    (b"]q\x00]q\x00.", "memo slot 0 written twice"),
    (b"N.", "control: plain None, everyone agrees"),
]

for data, story in PAYLOADS:
    print("=" * 64)
    print("payload %r  (%s)" % (data, story))

    # what the machine thinks
    result = load(data)
    print("  machine:      %s" % result.outcome, end="")
    if result.ok:
        print("  -> %r" % (result.value,))
    else:
        print("  [%s] %s" % (result.error_label, result.error_detail))

    # what the static pass thinks
    listing = disassemble(data)
    print("  disassembler: %s" % listing.outcome, end="")
    if listing.ok:
        print()
    else:
        print("  [%s] %s" % (listing.error_label, listing.error_detail))

    # and the formal verdict over both targets
    verdict = detect(execute(data, ("internal-pvm", "internal-disasm")))
    print("  verdict:      %s" % (verdict,))

# the disassembler listing for the flagship payload, line by line
print("=" * 64)
print(render_listing(disassemble(b"I0x1337\n.")))
