"""Static catalog of the pickle opcode set, protocols 0 through 5.

Every consumer in the package (generator, virtual machine, disassembler)
shares this one table, so the three never drift apart on framing.  Each
opcode carries its argument category (how many bytes the argument
occupies and how that is determined), a value codec naming how the raw
argument bytes decode to a runtime value, the protocol that introduced
it, and the symbolic stack effect used by the disassembler.

The table mirrors the opcode set published by the reference
disassembler's documentation for protocols 0-5 (68 opcodes).  It is
embedded as data rather than derived at runtime so the model stays
fixed even if the host interpreter changes underneath us.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

__all__ = [
    "ArgCategory",
    "NoArg",
    "FixedLen",
    "LenPrefixed",
    "Delimited",
    "ValueCodec",
    "OpcodeSpec",
    "Instruction",
    "FramingError",
    "UnknownOpcodeError",
    "TruncatedArgumentError",
    "catalog",
    "lookup",
    "read_instruction",
    "iter_instructions",
    "STOP_BYTE",
]

STOP_BYTE = 0x2E  # '.'


class FramingError(ValueError):
    """Base for instruction-framing failures; carries the fault offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class UnknownOpcodeError(FramingError):
    """The byte at the current offset is not a cataloged opcode."""


class TruncatedArgumentError(FramingError):
    """The stream ends (or a length prefix is unusable) inside an argument."""


@dataclass(frozen=True)
class NoArg:
    """The opcode takes no argument bytes."""


@dataclass(frozen=True)
class FixedLen:
    """The argument is exactly ``size`` bytes."""

    size: int  # 1, 2, 4, or 8


@dataclass(frozen=True)
class LenPrefixed:
    """A length prefix of ``prefix_size`` bytes, then that many bytes.

    ``signed`` matters only for 4-byte prefixes: the reference format
    declares some 4-byte counts signed (so a negative count is
    representable but never satisfiable).
    """

    prefix_size: int  # 1, 4, or 8
    signed: bool = False


@dataclass(frozen=True)
class Delimited:
    """Newline-terminated argument; ``lines`` consecutive lines belong
    to the instruction (2 for the module/name pair opcodes)."""

    terminator: int = 0x0A
    lines: int = 1


ArgCategory = NoArg | FixedLen | LenPrefixed | Delimited


class ValueCodec(enum.Enum):
    """How an opcode's raw argument bytes map to a runtime value."""

    NONE = "none"
    ASCII_INT = "ascii-int"
    ASCII_LONG = "ascii-long-with-L-suffix"
    ASCII_FLOAT = "ascii-float"
    QUOTED_STRING = "quoted-string"
    RAW_STRING = "raw-string"
    UNICODE_ESCAPED = "unicode-escaped"
    UTF8_STRING = "utf8-string"
    RAW_BYTES = "raw-bytes"
    LE_INT = "little-endian-int"
    LE_UINT = "little-endian-uint"
    FLOAT64_BE = "float64-big-endian"
    MEMO_INDEX = "memo-index"
    PROTOCOL_BYTE = "protocol-byte"
    FRAME_LENGTH = "frame-length"


# Symbolic stack-effect names, matching the reference disassembler's
# vocabulary.  MARK is special: it opens a run of values ("stackslice")
# that mark-popping opcodes consume wholesale.
MARK_SYMBOL = "mark"
SLICE_SYMBOL = "stackslice"


@dataclass(frozen=True)
class OpcodeSpec:
    code: int
    name: str
    category: ArgCategory
    codec: ValueCodec
    min_protocol: int
    stack_before: tuple[str, ...] = ()
    stack_after: tuple[str, ...] = ()

    @property
    def char(self) -> str:
        return chr(self.code)

    def __repr__(self) -> str:  # compact; the default dataclass repr drowns test output
        return f"<OpcodeSpec {self.name} {self.code:#04x}>"


_TABLE: list[OpcodeSpec] = []


def _op(code, name, proto, category, codec, before=(), after=()):
    _TABLE.append(
        OpcodeSpec(
            code=ord(code) if isinstance(code, str) else code,
            name=name,
            category=category,
            codec=codec,
            min_protocol=proto,
            stack_before=tuple(before),
            stack_after=tuple(after),
        )
    )


_NOARG = NoArg()
_U1 = FixedLen(1)
_U2 = FixedLen(2)
_F4 = FixedLen(4)
_F8 = FixedLen(8)
_LP1 = LenPrefixed(1)
_LP4S = LenPrefixed(4, signed=True)
_LP4U = LenPrefixed(4, signed=False)
_LP8 = LenPrefixed(8)
_LINE = Delimited()
_PAIR = Delimited(lines=2)

C = ValueCodec

# fmt: off
# Protocol 0
_op("(",  "MARK",             0, _NOARG, C.NONE,           [],                            [MARK_SYMBOL])
_op(".",  "STOP",             0, _NOARG, C.NONE,           ["any"],                       [])
_op("0",  "POP",              0, _NOARG, C.NONE,           ["any"],                       [])
_op("2",  "DUP",              0, _NOARG, C.NONE,           ["any"],                       ["any", "any"])
_op("F",  "FLOAT",            0, _LINE,  C.ASCII_FLOAT,    [],                            ["float"])
_op("I",  "INT",              0, _LINE,  C.ASCII_INT,      [],                            ["int_or_bool"])
_op("L",  "LONG",             0, _LINE,  C.ASCII_LONG,     [],                            ["int"])
_op("N",  "NONE",             0, _NOARG, C.NONE,           [],                            ["None"])
_op("P",  "PERSID",           0, _LINE,  C.RAW_STRING,     [],                            ["any"])
_op("R",  "REDUCE",           0, _NOARG, C.NONE,           ["any", "any"],                ["any"])
_op("S",  "STRING",           0, _LINE,  C.QUOTED_STRING,  [],                            ["bytes_or_str"])
_op("V",  "UNICODE",          0, _LINE,  C.UNICODE_ESCAPED,[],                            ["str"])
_op("a",  "APPEND",           0, _NOARG, C.NONE,           ["list", "any"],               ["list"])
_op("b",  "BUILD",            0, _NOARG, C.NONE,           ["any", "any"],                ["any"])
_op("c",  "GLOBAL",           0, _PAIR,  C.UTF8_STRING,    [],                            ["any"])
_op("d",  "DICT",             0, _NOARG, C.NONE,           [MARK_SYMBOL, SLICE_SYMBOL],   ["dict"])
_op("g",  "GET",              0, _LINE,  C.MEMO_INDEX,     [],                            ["any"])
_op("i",  "INST",             0, _PAIR,  C.RAW_STRING,     [MARK_SYMBOL, SLICE_SYMBOL],   ["any"])
_op("l",  "LIST",             0, _NOARG, C.NONE,           [MARK_SYMBOL, SLICE_SYMBOL],   ["list"])
_op("p",  "PUT",              0, _LINE,  C.MEMO_INDEX,     [],                            [])
_op("s",  "SETITEM",          0, _NOARG, C.NONE,           ["dict", "any", "any"],        ["dict"])
_op("t",  "TUPLE",            0, _NOARG, C.NONE,           [MARK_SYMBOL, SLICE_SYMBOL],   ["tuple"])
# Protocol 1
_op(")",  "EMPTY_TUPLE",      1, _NOARG, C.NONE,           [],                            ["tuple"])
_op("1",  "POP_MARK",         1, _NOARG, C.NONE,           [MARK_SYMBOL, SLICE_SYMBOL],   [])
_op("G",  "BINFLOAT",         1, _F8,    C.FLOAT64_BE,     [],                            ["float"])
_op("J",  "BININT",           1, _F4,    C.LE_INT,         [],                            ["int"])
_op("K",  "BININT1",          1, _U1,    C.LE_UINT,        [],                            ["int"])
_op("M",  "BININT2",          1, _U2,    C.LE_UINT,        [],                            ["int"])
_op("Q",  "BINPERSID",        1, _NOARG, C.NONE,           ["any"],                       ["any"])
_op("T",  "BINSTRING",        1, _LP4S,  C.RAW_STRING,     [],                            ["bytes_or_str"])
_op("U",  "SHORT_BINSTRING",  1, _LP1,   C.RAW_STRING,     [],                            ["bytes_or_str"])
_op("X",  "BINUNICODE",       1, _LP4U,  C.UTF8_STRING,    [],                            ["str"])
_op("]",  "EMPTY_LIST",       1, _NOARG, C.NONE,           [],                            ["list"])
_op("e",  "APPENDS",          1, _NOARG, C.NONE,           ["list", MARK_SYMBOL, SLICE_SYMBOL], ["list"])
_op("h",  "BINGET",           1, _U1,    C.MEMO_INDEX,     [],                            ["any"])
_op("j",  "LONG_BINGET",      1, _F4,    C.MEMO_INDEX,     [],                            ["any"])
_op("o",  "OBJ",              1, _NOARG, C.NONE,           [MARK_SYMBOL, "any", SLICE_SYMBOL], ["any"])
_op("q",  "BINPUT",           1, _U1,    C.MEMO_INDEX,     [],                            [])
_op("r",  "LONG_BINPUT",      1, _F4,    C.MEMO_INDEX,     [],                            [])
_op("u",  "SETITEMS",         1, _NOARG, C.NONE,           ["dict", MARK_SYMBOL, SLICE_SYMBOL], ["dict"])
_op("}",  "EMPTY_DICT",       1, _NOARG, C.NONE,           [],                            ["dict"])
# Protocol 2
_op(0x80, "PROTO",            2, _U1,    C.PROTOCOL_BYTE,  [],                            [])
_op(0x81, "NEWOBJ",           2, _NOARG, C.NONE,           ["any", "any"],                ["any"])
_op(0x82, "EXT1",             2, _U1,    C.LE_UINT,        [],                            ["any"])
_op(0x83, "EXT2",             2, _U2,    C.LE_UINT,        [],                            ["any"])
_op(0x84, "EXT4",             2, _F4,    C.LE_INT,         [],                            ["any"])
_op(0x85, "TUPLE1",           2, _NOARG, C.NONE,           ["any"],                       ["tuple"])
_op(0x86, "TUPLE2",           2, _NOARG, C.NONE,           ["any", "any"],                ["tuple"])
_op(0x87, "TUPLE3",           2, _NOARG, C.NONE,           ["any", "any", "any"],         ["tuple"])
_op(0x88, "NEWTRUE",          2, _NOARG, C.NONE,           [],                            ["bool"])
_op(0x89, "NEWFALSE",         2, _NOARG, C.NONE,           [],                            ["bool"])
_op(0x8A, "LONG1",            2, _LP1,   C.LE_INT,         [],                            ["int"])
_op(0x8B, "LONG4",            2, _LP4S,  C.LE_INT,         [],                            ["int"])
# Protocol 3
_op("B",  "BINBYTES",         3, _LP4U,  C.RAW_BYTES,      [],                            ["bytes"])
_op("C",  "SHORT_BINBYTES",   3, _LP1,   C.RAW_BYTES,      [],                            ["bytes"])
# Protocol 4
_op(0x8C, "SHORT_BINUNICODE", 4, _LP1,   C.UTF8_STRING,    [],                            ["str"])
_op(0x8D, "BINUNICODE8",      4, _LP8,   C.UTF8_STRING,    [],                            ["str"])
_op(0x8E, "BINBYTES8",        4, _LP8,   C.RAW_BYTES,      [],                            ["bytes"])
_op(0x8F, "EMPTY_SET",        4, _NOARG, C.NONE,           [],                            ["set"])
_op(0x90, "ADDITEMS",         4, _NOARG, C.NONE,           ["set", MARK_SYMBOL, SLICE_SYMBOL], ["set"])
_op(0x91, "FROZENSET",        4, _NOARG, C.NONE,           [MARK_SYMBOL, SLICE_SYMBOL],   ["frozenset"])
_op(0x92, "NEWOBJ_EX",        4, _NOARG, C.NONE,           ["any", "any", "any"],         ["any"])
_op(0x93, "STACK_GLOBAL",     4, _NOARG, C.NONE,           ["str", "str"],                ["any"])
_op(0x94, "MEMOIZE",          4, _NOARG, C.NONE,           ["any"],                       ["any"])
_op(0x95, "FRAME",            4, _F8,    C.FRAME_LENGTH,   [],                            [])
# Protocol 5
_op(0x96, "BYTEARRAY8",       5, _LP8,   C.RAW_BYTES,      [],                            ["bytearray"])
_op(0x97, "NEXT_BUFFER",      5, _NOARG, C.NONE,           [],                            ["buffer"])
_op(0x98, "READONLY_BUFFER",  5, _NOARG, C.NONE,           ["buffer"],                    ["buffer"])
# fmt: on

_TABLE.sort(key=lambda spec: spec.code)
_CATALOG: tuple[OpcodeSpec, ...] = tuple(_TABLE)
_BY_CODE: dict[int, OpcodeSpec] = {spec.code: spec for spec in _CATALOG}
_BY_NAME: dict[str, OpcodeSpec] = {spec.name: spec for spec in _CATALOG}

assert len(_BY_CODE) == len(_CATALOG), "opcode codes must be distinct"


def catalog() -> tuple[OpcodeSpec, ...]:
    """The full immutable opcode catalog, ordered by code byte."""
    return _CATALOG


def lookup(code: int | bytes | str) -> OpcodeSpec | None:
    """Find the spec for an opcode byte; None if the byte is unassigned."""
    if isinstance(code, (bytes, bytearray)):
        code = code[0] if code else -1
    elif isinstance(code, str):
        code = ord(code)
    return _BY_CODE.get(code)


def by_name(name: str) -> OpcodeSpec:
    return _BY_NAME[name]


@dataclass(frozen=True)
class Instruction:
    """One framed instruction: spec, raw argument bytes, byte extent."""

    spec: OpcodeSpec
    arg: bytes
    offset: int
    end: int


def read_instruction(pos: int, data: bytes) -> tuple[OpcodeSpec, bytes, int]:
    """Frame exactly one instruction starting at ``pos``.

    Returns (spec, raw argument bytes, next position).  The raw argument
    excludes any length prefix and the trailing terminator; for the
    two-line opcodes it is both lines joined by the interior newline.

    Raises UnknownOpcodeError for an unassigned opcode byte and
    TruncatedArgumentError when the argument cannot be fully framed
    (stream ends inside it, or a signed length prefix is negative).
    Never reads past the end of ``data``.
    """
    if pos >= len(data):
        raise TruncatedArgumentError("no opcode byte at offset %d" % pos, pos)
    spec = _BY_CODE.get(data[pos])
    if spec is None:
        raise UnknownOpcodeError(
            "unknown opcode 0x%02x at offset %d" % (data[pos], pos), pos
        )
    start = pos + 1
    cat = spec.category
    if isinstance(cat, NoArg):
        return spec, b"", start
    if isinstance(cat, FixedLen):
        end = start + cat.size
        if end > len(data):
            raise TruncatedArgumentError(
                "%s argument truncated at offset %d" % (spec.name, pos), pos
            )
        return spec, data[start:end], end
    if isinstance(cat, LenPrefixed):
        body = start + cat.prefix_size
        if body > len(data):
            raise TruncatedArgumentError(
                "%s length prefix truncated at offset %d" % (spec.name, pos), pos
            )
        count = int.from_bytes(
            data[start:body], "little", signed=cat.signed
        )
        if count < 0:
            raise TruncatedArgumentError(
                "%s declares a negative byte count at offset %d" % (spec.name, pos),
                pos,
            )
        end = body + count
        if end > len(data):
            raise TruncatedArgumentError(
                "%s argument truncated at offset %d" % (spec.name, pos), pos
            )
        return spec, data[body:end], end
    # Delimited
    cursor = start
    for _ in range(cat.lines):
        nl = data.find(bytes([cat.terminator]), cursor)
        if nl < 0:
            raise TruncatedArgumentError(
                "%s argument missing terminator at offset %d" % (spec.name, pos), pos
            )
        cursor = nl + 1
    return spec, data[start : cursor - 1], cursor


def iter_instructions(data: bytes, pos: int = 0):
    """Yield Instructions from ``pos`` until STOP is consumed or the
    data ends.  Framing faults propagate to the caller."""
    while pos < len(data):
        spec, arg, end = read_instruction(pos, data)
        yield Instruction(spec=spec, arg=arg, offset=pos, end=end)
        pos = end
        if spec.code == STOP_BYTE:
            return
