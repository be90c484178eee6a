"""Grammar-based payload generation.

A payload is a random well-formed opcode sequence terminated by STOP,
plus two pieces of execution metadata: the text encoding the
deserializers should assume and a selection from a small menu of
out-of-band buffer shapes.  "Well-formed" means framing-level validity
only: every instruction parses, every length prefix tells the truth,
and the stream ends at STOP.  Whether the program makes semantic sense
(stack discipline, memo hygiene, decodable text) is exactly what the
targets get to disagree about.

Determinism contract: generate() is a pure function of (seed, limits).
The draw order inside it (opcode count, then each instruction's draws
in emission order, then encoding, then buffers choice) is fixed and
must not be reordered, or previously published campaign seeds stop
reproducing.

The out-of-band buffer values are derived from the payload seed with a
splitmix64 stream rather than the main generator, so a bridge process
in another language (or a stdlib-only one) can rebuild identical
buffers from the seed alone without carrying a PCG64 implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .opcode_model import (
    Delimited,
    FixedLen,
    LenPrefixed,
    NoArg,
    OpcodeSpec,
    ValueCodec,
    catalog,
)

__all__ = [
    "ENCODINGS",
    "GenLimits",
    "Payload",
    "relaxed_limits",
    "generate",
    "build_buffers",
    "splitmix64_stream",
]

ENCODINGS = ("utf-8", "utf-16", "ascii", "latin-1")

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class GenLimits:
    """Size caps for generated payloads.

    The defaults match the primary campaign configuration; see
    relaxed_limits() for the wider second-campaign configuration.
    """

    max_opcodes: int = 20
    min_opcodes: int = 1
    buffers_item_count: int = 3
    max_ascii_digits: int = 10
    max_bytes_len: int = 300
    put_index_max: int = 999999
    long_binput_index_max: int = 65535

    def __post_init__(self):
        if self.min_opcodes < 1 or self.max_opcodes < 1:
            raise ValueError("opcode counts must be positive")
        if self.min_opcodes > self.max_opcodes:
            raise ValueError("min_opcodes must not exceed max_opcodes")
        if self.max_ascii_digits < 1 or self.max_bytes_len < 1:
            raise ValueError("digit and byte caps must be positive")
        if self.buffers_item_count < 0:
            raise ValueError("buffers_item_count must be non-negative")
        if self.put_index_max < 0 or self.long_binput_index_max < 0:
            raise ValueError("index caps must be non-negative")


def relaxed_limits() -> GenLimits:
    """The widened limits of the follow-up campaign: longer decimal
    literals, a byte cap past the 32-bit boundary, and uncapped memo
    indices.  Opcode counts stay at the defaults."""
    return GenLimits(
        max_ascii_digits=25,
        max_bytes_len=0x180000000,
        put_index_max=2**64 - 1,
        long_binput_index_max=2**64 - 1,
    )


@dataclass(frozen=True)
class Payload:
    """One generated test case: pickle bytes plus execution metadata."""

    pickle_bytes: bytes
    encoding: str  # one of ENCODINGS
    buffers_choice: int  # 0..5, see build_buffers
    seed: int  # the 64-bit seed that produced this payload


# ---------------------------------------------------------------------------
# Buffer menu
# ---------------------------------------------------------------------------

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_stream(seed: int, index: int) -> int:
    """The index-th output of a splitmix64 stream keyed by seed.

    This is the standard splitmix64 finalizer applied to
    seed + (index + 1) * gamma.  Kept dependency-free on purpose: the
    external bridge reimplements these few lines to rebuild buffer
    values, and the campaign driver uses the same stream to derive
    per-iteration payload seeds.
    """
    z = (seed + (index + 1) * _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _menu_item(seed: int, index: int):
    v = splitmix64_stream(seed, index)
    kind = v % 3
    if kind == 0:
        length = 1 + ((v >> 8) % 6)
        return ((v >> 16) & _MASK64).to_bytes(8, "little")[:length]
    if kind == 1:
        return "buf%d" % (v % 1000)
    return v % 100000


def _menu_core_bytes(seed: int) -> bytes:
    v = splitmix64_stream(seed, 0)
    length = 4 + (v % 5)
    return (v >> 8).to_bytes(7, "little")[:length]


def build_buffers(choice: int, seed: int, item_count: int):
    """Materialize the out-of-band buffers for a payload.

    The menu:
      0 - no buffers at all (the argument is absent)
      1 - an empty list
      2 - a list of item_count mixed items (bytes, text, integers)
      3 - one mutable byte buffer (a bytearray; note that iterating a
          bytearray yields integers, which is part of the fun)
      4 - one immutable byte string
      5 - a generator yielding the same items as menu 2

    Values are functions of (choice, seed, item_count) only, so any
    process holding the payload metadata reconstructs the same buffers.
    """
    if choice == 0:
        return None
    if choice == 1:
        return []
    if choice == 2:
        return [_menu_item(seed, i + 1) for i in range(item_count)]
    if choice == 3:
        return bytearray(_menu_core_bytes(seed))
    if choice == 4:
        return bytes(_menu_core_bytes(seed))
    if choice == 5:
        return (_menu_item(seed, i + 1) for i in range(item_count))
    raise ValueError("buffers_choice must be 0..5, got %r" % (choice,))


# ---------------------------------------------------------------------------
# Argument synthesis
# ---------------------------------------------------------------------------

_ADVERSARIAL_RATE = 0.10
_DIGITS = b"0123456789"
_HEX_DIGITS = b"0123456789abcdef"
_WORD_CHARS = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_."
_NONASCII_SNIPPETS = (b"\xc3\xa9", b"\xc2\xb5", b"\xe2\x82\xac", b"\xff", b"\\")


def _rand_bytes(rng, n: int) -> bytes:
    if n <= 0:
        return b""
    return rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()


def _pick(rng, pool: bytes, n: int) -> bytes:
    if n <= 0:
        return b""
    idx = rng.integers(0, len(pool), size=n)
    return bytes(pool[int(i)] for i in idx)


def _digit_run(rng, limits: GenLimits) -> bytes:
    return _pick(rng, _DIGITS, 1 + int(rng.integers(0, limits.max_ascii_digits)))


def _adversarial_number(rng, limits: GenLimits) -> bytes:
    # The five shapes behind the known decimal-argument divergences:
    # alternate bases, surrounding whitespace, the protocol-0 boolean
    # spellings, explicit signs, and embedded NUL bytes.
    family = int(rng.integers(0, 5))
    if family == 0:
        return b"0x" + _pick(rng, _HEX_DIGITS, 1 + int(rng.integers(0, 6)))
    if family == 1:
        core = _digit_run(rng, limits)
        return b" " + core if rng.random() < 0.5 else core + b" "
    if family == 2:
        return b"01" if rng.random() < 0.5 else b"00"
    if family == 3:
        sign = b"-" if rng.random() < 0.75 else b"+"
        return sign + _digit_run(rng, limits)
    left = _digit_run(rng, limits)
    right = _digit_run(rng, limits)
    return left + b"\x00" + right


def _int_line(rng, limits: GenLimits) -> bytes:
    if rng.random() < _ADVERSARIAL_RATE:
        return _adversarial_number(rng, limits)
    sign = b"-" if rng.random() < 0.25 else b""
    return sign + _digit_run(rng, limits)


def _float_line(rng, limits: GenLimits) -> bytes:
    if rng.random() < _ADVERSARIAL_RATE:
        return _adversarial_number(rng, limits)
    text = _digit_run(rng, limits)
    if rng.random() < 0.25:
        text = b"-" + text
    if rng.random() < 0.6:
        text += b"." + _digit_run(rng, limits)
    if rng.random() < 0.15:
        text += b"e" + (b"-" if rng.random() < 0.5 else b"") + _pick(rng, _DIGITS, 1)
    return text


def _memo_line(rng, limits: GenLimits) -> bytes:
    if rng.random() < _ADVERSARIAL_RATE:
        return _adversarial_number(rng, limits)
    # endpoint draw with an unsigned dtype so an uncapped limit
    # (2**64 - 1 in the relaxed configuration) stays in range
    value = int(rng.integers(0, limits.put_index_max, endpoint=True, dtype=np.uint64))
    return str(value).encode("ascii")


def _word(rng, max_len: int = 12) -> bytes:
    return _pick(rng, _WORD_CHARS, 1 + int(rng.integers(0, max_len)))


def _line_text(rng) -> bytes:
    text = _word(rng)
    if rng.random() < _ADVERSARIAL_RATE:
        snippet = _NONASCII_SNIPPETS[int(rng.integers(0, len(_NONASCII_SNIPPETS)))]
        cut = int(rng.integers(0, len(text) + 1))
        text = text[:cut] + snippet + text[cut:]
    return text


def _quoted_line(rng) -> bytes:
    inner = _word(rng, 20)
    if rng.random() < _ADVERSARIAL_RATE:
        return inner  # no quotes at all
    quote = b"'" if rng.random() < 0.5 else b'"'
    if rng.random() < _ADVERSARIAL_RATE:
        return quote + inner  # unbalanced
    return quote + inner + quote


def _unicode_line(rng) -> bytes:
    text = _word(rng)
    if rng.random() < 0.3:
        # an escape sequence, sometimes deliberately cut short
        hexlen = int(rng.integers(0, 5))
        text += b"\\u" + _pick(rng, _HEX_DIGITS, hexlen)
    return text


def _delimited_arg(rng, spec: OpcodeSpec, limits: GenLimits) -> bytes:
    codec = spec.codec
    if codec is ValueCodec.ASCII_INT:
        return _int_line(rng, limits)
    if codec is ValueCodec.ASCII_LONG:
        line = _int_line(rng, limits)
        if rng.random() < 0.5:
            line += b"L"
        return line
    if codec is ValueCodec.ASCII_FLOAT:
        return _float_line(rng, limits)
    if codec is ValueCodec.MEMO_INDEX:
        return _memo_line(rng, limits)
    if codec is ValueCodec.QUOTED_STRING:
        return _quoted_line(rng)
    if codec is ValueCodec.UNICODE_ESCAPED:
        return _unicode_line(rng)
    # module/name lines and persistent ids: plain-ish text
    return _line_text(rng)


def _fixed_arg(rng, spec: OpcodeSpec, size: int, limits: GenLimits) -> bytes:
    if spec.codec is ValueCodec.MEMO_INDEX and size == 4:
        cap = min(limits.long_binput_index_max, 2**32 - 1)
        value = int(rng.integers(0, cap, endpoint=True, dtype=np.uint64))
        return value.to_bytes(4, "little")
    if spec.codec is ValueCodec.PROTOCOL_BYTE:
        if rng.random() < 0.10:
            return bytes([int(rng.integers(6, 256))])
        return bytes([int(rng.integers(0, 6))])
    return _rand_bytes(rng, size)


def _prefixed_arg(rng, cat: LenPrefixed, limits: GenLimits) -> bytes:
    if cat.prefix_size == 1:
        cap = min(limits.max_bytes_len, 0xFF)
    elif cat.signed:
        cap = min(limits.max_bytes_len, 2**31 - 1)
    else:
        cap = min(limits.max_bytes_len, 2 ** (8 * cat.prefix_size) - 1)
    length = int(rng.integers(0, cap, endpoint=True, dtype=np.uint64))
    body = _rand_bytes(rng, length)
    return length.to_bytes(cat.prefix_size, "little", signed=cat.signed) + body


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

_NON_STOP = tuple(spec for spec in catalog() if spec.name != "STOP")
_STOP = next(spec for spec in catalog() if spec.name == "STOP")


def generate(seed: int, limits: GenLimits | None = None) -> Payload:
    """Generate one payload from a 64-bit seed.

    The opcode count (STOP excluded) is uniform in
    [min_opcodes, max_opcodes] and each opcode is drawn uniformly from
    the catalog minus STOP.  Arguments are filled in per category:
    fixed-width fields get random bytes (memo indices and the protocol
    byte get the caps and menus described above), length-prefixed
    fields get an honest prefix and a random body, and delimited fields
    get codec-appropriate text with a deliberate minority of
    adversarial numeric spellings.
    """
    if limits is None:
        limits = GenLimits()
    rng = np.random.Generator(np.random.PCG64(seed))
    count = int(rng.integers(limits.min_opcodes, limits.max_opcodes + 1))
    parts = []
    for _ in range(count):
        spec = _NON_STOP[int(rng.integers(0, len(_NON_STOP)))]
        parts.append(bytes([spec.code]))
        cat = spec.category
        if isinstance(cat, NoArg):
            continue
        if isinstance(cat, FixedLen):
            parts.append(_fixed_arg(rng, spec, cat.size, limits))
        elif isinstance(cat, LenPrefixed):
            parts.append(_prefixed_arg(rng, cat, limits))
        else:
            lines = [_delimited_arg(rng, spec, limits) for _ in range(cat.lines)]
            parts.append(b"\n".join(lines) + b"\n")
    parts.append(bytes([_STOP.code]))
    encoding = ENCODINGS[int(rng.integers(0, len(ENCODINGS)))]
    buffers_choice = int(rng.integers(0, 6))
    return Payload(
        pickle_bytes=b"".join(parts),
        encoding=encoding,
        buffers_choice=buffers_choice,
        seed=seed & _MASK64,
    )
