"""Strict static disassembler over the shared opcode catalog.

This is the second of the two internal targets.  It never executes
anything: no imports are resolved, no composite values are built.  It
frames instructions with opcode_model, decodes each argument the way
the reference disassembler does (explicit base 10 for decimal lines,
fixed codecs that ignore the payload's declared string encoding), and
tracks a symbolic stack, a mark stack, and the set of memo keys.

The strictness quirks that make it interesting as a differential
target, all faithfully reproduced:

* decimal integer arguments parse with an explicit base of 10, so
  ``0x``-prefixed or otherwise exotic literals fault here while the
  deserializers accept them;
* text arguments decode with fixed codecs (ascii for the line-oriented
  module/name opcodes, latin-1 for counted protocol-1 strings) no
  matter what encoding the payload requests;
* anything left on the stack after STOP is an error;
* storing a memo key twice is an error, with the decoded argument
  value as the key (so PUT 1 followed by PUT 01 collides: the second
  line decodes to True, and True == 1).

On a fault the listing covers exactly the instructions before the
fault offset; the faulting instruction itself is not listed.  The one
exception is the leftover-stack check, which can only run once STOP
has been consumed, so its fault offset sits just past STOP and the
listing is complete.
"""

from __future__ import annotations

import codecs
import struct
from dataclasses import dataclass

from .opcode_model import (
    Delimited,
    FixedLen,
    LenPrefixed,
    MARK_SYMBOL,
    OpcodeSpec,
    TruncatedArgumentError,
    UnknownOpcodeError,
    ValueCodec,
    read_instruction,
)

__all__ = ["DisasmResult", "disassemble", "render_listing"]


class _Fault(Exception):
    """Internal control flow; carries the verdict for one fault."""

    def __init__(self, label: str, detail: str, offset: int):
        super().__init__(detail)
        self.label = label
        self.detail = detail
        self.offset = offset


@dataclass(frozen=True)
class DisasmResult:
    """Outcome of one static pass: either ok with a full listing, or an
    error label plus the listing of everything before the fault."""

    outcome: str  # "ok" or "error"
    listing: tuple[tuple[int, str, str], ...]
    error_label: str | None = None
    error_detail: str | None = None
    error_offset: int | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"


def _decode_pair_line(line: bytes) -> str:
    # The line-oriented module/name opcodes run their lines through
    # escape decoding and a strict ascii decode, regardless of the
    # payload's declared encoding.
    return codecs.escape_decode(line)[0].decode("ascii")


def _decode_quoted(raw: bytes) -> str:
    data = raw
    for quote in (b'"', b"'"):
        if data.startswith(quote):
            if not data.endswith(quote):
                raise ValueError(
                    "quote %r not found at both ends of %r" % (quote, data)
                )
            data = data[1:-1]
            break
    else:
        raise ValueError("no string quotes around %r" % (data,))
    return codecs.escape_decode(data)[0].decode("ascii")


def _decode_value(spec: OpcodeSpec, raw: bytes):
    """Decode one raw argument the way the reference disassembler would.

    Raises ValueError or UnicodeDecodeError on content the strict
    decoders reject; the caller turns those into a decode-failure.
    """
    codec = spec.codec
    cat = spec.category

    if codec is ValueCodec.NONE:
        return None
    if codec is ValueCodec.ASCII_INT:
        if raw == b"00":
            return False
        if raw == b"01":
            return True
        return int(raw)
    if codec is ValueCodec.ASCII_LONG:
        data = raw
        if data[-1:] == b"L":
            data = data[:-1]
        return int(data)
    if codec is ValueCodec.ASCII_FLOAT:
        return float(raw)
    if codec is ValueCodec.QUOTED_STRING:
        return _decode_quoted(raw)
    if codec is ValueCodec.UNICODE_ESCAPED:
        return str(raw, "raw-unicode-escape")
    if codec in (ValueCodec.RAW_STRING, ValueCodec.UTF8_STRING):
        if isinstance(cat, Delimited):
            if cat.lines == 2:
                module, name = raw.split(b"\n", 1)
                return "%s %s" % (_decode_pair_line(module), _decode_pair_line(name))
            return _decode_pair_line(raw)
        if codec is ValueCodec.RAW_STRING:
            return str(raw, "latin-1")
        return str(raw, "utf-8", "surrogatepass")
    if codec is ValueCodec.RAW_BYTES:
        if spec.name == "BYTEARRAY8":
            return bytearray(raw)
        return raw
    if codec is ValueCodec.LE_INT:
        return int.from_bytes(raw, "little", signed=True)
    if codec is ValueCodec.LE_UINT:
        return int.from_bytes(raw, "little", signed=False)
    if codec is ValueCodec.FLOAT64_BE:
        return struct.unpack(">d", raw)[0]
    if codec is ValueCodec.MEMO_INDEX:
        if isinstance(cat, Delimited):
            # Same reader as ASCII_INT, bool shortcut included, so the
            # decoded value (not the raw text) is the memo key.
            if raw == b"00":
                return False
            if raw == b"01":
                return True
            return int(raw)
        return int.from_bytes(raw, "little", signed=False)
    if codec is ValueCodec.PROTOCOL_BYTE:
        return raw[0]
    if codec is ValueCodec.FRAME_LENGTH:
        return int.from_bytes(raw, "little", signed=False)
    raise AssertionError("unhandled codec %r" % (codec,))


_PUT_NAMES = frozenset(("PUT", "BINPUT", "LONG_BINPUT", "MEMOIZE"))
_GET_NAMES = frozenset(("GET", "BINGET", "LONG_BINGET"))


def disassemble(payload) -> DisasmResult:
    """Statically check one payload; accepts raw bytes or a Payload.

    The declared encoding and buffer menu of a Payload are irrelevant
    here (this target decodes with its own fixed codecs and never
    touches out-of-band buffers), so only the pickle bytes are read.
    """
    data = getattr(payload, "pickle_bytes", payload)
    listing: list[tuple[int, str, str]] = []
    stack: list[str] = []
    markstack: list[int] = []
    memo: dict = {}
    pos = 0
    size = len(data)

    try:
        while True:
            if pos >= size:
                raise _Fault(
                    "bad-argument", "pickle exhausted before seeing STOP", pos
                )
            at = pos
            try:
                spec, raw, nxt = read_instruction(pos, data)
            except UnknownOpcodeError as exc:
                raise _Fault("unknown-opcode", str(exc), exc.offset) from None
            except TruncatedArgumentError as exc:
                raise _Fault("bad-argument", str(exc), exc.offset) from None
            try:
                value = _decode_value(spec, raw)
            except (ValueError, UnicodeDecodeError) as exc:
                raise _Fault("decode-failure", str(exc), at) from None

            before = spec.stack_before
            after = list(spec.stack_after)
            numtopop = len(before)

            # A mark gets popped either because the opcode demands one
            # or because a bare POP finds one on top.
            if MARK_SYMBOL in before or (
                spec.name == "POP" and stack and stack[-1] == MARK_SYMBOL
            ):
                if markstack:
                    markstack.pop()
                    try:
                        while stack[-1] != MARK_SYMBOL:
                            stack.pop()
                    except IndexError:
                        # The mark stack said one exists, but a prior
                        # bulk pop consumed it from the value stack.
                        raise _Fault(
                            "stack-underflow",
                            "mark unwind ran past the bottom of the stack",
                            at,
                        ) from None
                    stack.pop()
                    if MARK_SYMBOL in before:
                        numtopop = before.index(MARK_SYMBOL)
                    else:
                        numtopop = 0
                else:
                    raise _Fault("no-mark", "no MARK exists on stack", at)

            if spec.name in _PUT_NAMES:
                memo_idx = len(memo) if spec.name == "MEMOIZE" else value
                if memo_idx in memo:
                    raise _Fault(
                        "memo-reuse", "memo key %r already defined" % (value,), at
                    )
                if not stack:
                    raise _Fault(
                        "stack-underflow",
                        "stack is empty -- can't store into memo",
                        at,
                    )
                if stack[-1] == MARK_SYMBOL:
                    raise _Fault(
                        "bad-argument", "can't store markobject in the memo", at
                    )
                memo[memo_idx] = stack[-1]
            elif spec.name in _GET_NAMES:
                if value in memo:
                    after = [memo[value]]
                else:
                    raise _Fault(
                        "memo-miss",
                        "memo key %r has never been stored into" % (value,),
                        at,
                    )

            if len(stack) < numtopop:
                raise _Fault(
                    "stack-underflow",
                    "tries to pop %d items from stack with only %d items"
                    % (numtopop, len(stack)),
                    at,
                )
            if numtopop:
                del stack[-numtopop:]
            if MARK_SYMBOL in after:
                markstack.append(at)
            stack.extend(after)

            listing.append((at, spec.name, "" if value is None else repr(value)))
            pos = nxt
            if spec.name == "STOP":
                break

        if stack:
            # This check can only run after STOP was consumed, so the
            # fault offset sits just past it and the listing is whole.
            raise _Fault(
                "stack-not-empty", "stack not empty after STOP: %r" % (stack,), pos
            )
    except _Fault as fault:
        return DisasmResult(
            outcome="error",
            listing=tuple(listing),
            error_label=fault.label,
            error_detail=fault.detail,
            error_offset=fault.offset,
        )

    return DisasmResult(outcome="ok", listing=tuple(listing))


def render_listing(result: DisasmResult) -> str:
    """Render a result as one line per instruction, for triage reports."""
    lines = [
        "%5d: %-14s %s" % (offset, name, arg) if arg else "%5d: %s" % (offset, name)
        for offset, name, arg in result.listing
    ]
    if not result.ok:
        lines.append(
            "error: %s at offset %d (%s)"
            % (result.error_label, result.error_offset, result.error_detail)
        )
    return "\n".join(lines)
