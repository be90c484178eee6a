"""A deserializer-faithful pickle virtual machine.

The machine reimplements the semantics of the reference pure-Python
deserializer from scratch: same storage areas (stack, metastack, memo),
same argument parsing (base-0 integer literals, quote stripping and
escape decoding, lazy newline handling), same frame bookkeeping, same
tolerance for residual stack items and memo overwrites.  It diverges
deliberately in exactly three places, all needed to keep execution
hermetic and observable:

- imports resolve to inert stubs (``resolve_import``), never real code;
- persistent-id opcodes wrap their argument instead of consulting a
  store;
- the final stack/metastack/memo are captured and returned alongside
  the result, for both normal halts and faults.

Faults never escape as raw exceptions (memory exhaustion excepted,
which the harness accounts against the payload's budget): every
abnormal path is mapped to a small vocabulary of error labels.  The
labels are triage metadata; discrepancy detection uses only the
ok/error bit.
"""

from __future__ import annotations

import codecs
import re
import struct
import sys
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import opcode_model
from .opcode_model import by_name

__all__ = [
    "ERROR_LABELS",
    "DEPTH_LIMIT",
    "DepthLimitError",
    "LoadResult",
    "Machine",
    "MachineState",
    "PersistentId",
    "StubFunction",
    "canonical",
    "canonical_state",
    "fnv1a64",
    "load",
    "resolve_import",
    "scrub_addresses",
]

HIGHEST_PROTOCOL = 5

ERROR_LABELS = (
    "stack-underflow",
    "no-mark",
    "bad-argument",
    "unknown-opcode",
    "decode-failure",
    "buffers-exhausted",
    "frame-violation",
    "memo-miss",
    "not-implemented",
)


# ---------------------------------------------------------------------------
# Import stubs.
#
# GLOBAL/STACK_GLOBAL/INST/OBJ need *something* to stand in for the object
# they would import.  The stand-in kind is chosen by hashing the dotted
# name, so a given (module, name) always yields the same kind here, in the
# out-of-process bridge, and across campaign runs.

_FNV1A64_BASIS = 0xCBF29CE484222325
_FNV1A64_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """FNV-1a, 64-bit variant."""
    h = _FNV1A64_BASIS
    for byte in data:
        h = ((h ^ byte) * _FNV1A64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class StubFunction:
    """Stands in for an imported callable; accepts anything, returns None."""

    def __init__(self, module: str, name: str):
        self.module = module
        self.name = name
        self.__name__ = name

    def __call__(self, *args, **kwargs):
        return None

    def __repr__(self):
        return f"stub:function:{self.module}.{self.name}"


class _StubMarker:
    """Common base for generated stub classes, so the renderer and tests
    can recognize them.  Instances behave like objects of an empty
    user-defined class: writable __dict__, no methods, default identity
    semantics."""

    _stub_module = ""
    _stub_name = ""


def _make_stub_class(module: str, name: str) -> type:
    return type(
        "Stub_" + re.sub(r"\W", "_", name)[:40],
        (_StubMarker,),
        {"_stub_module": module, "_stub_name": name},
    )


def resolve_import(module: str, name: str) -> Any:
    """Deterministic import stub: FNV-1a-64 over module, NUL, name picks
    one of three stand-in kinds.  Never imports real code, never fails."""
    h = fnv1a64(module.encode("utf-8") + b"\x00" + name.encode("utf-8"))
    kind = h % 3
    if kind == 0:
        return StubFunction(module, name)
    cls = _make_stub_class(module, name)
    if kind == 1:
        return cls
    return cls()


@dataclass(frozen=True)
class PersistentId:
    """Inert wrapper for PERSID/BINPERSID arguments."""

    pid: Any


# ---------------------------------------------------------------------------
# Canonical rendering.

DEPTH_LIMIT = 10_000

_ADDRESS_RE = re.compile(r"0x[0-9a-fA-F]{4,16}")


class DepthLimitError(Exception):
    """Value graph deeper than the rendering cap."""


def scrub_addresses(text: str) -> str:
    """Replace address-like hex runs (0x + 4-16 hex digits) with 0xADDR.

    Idempotent: the replacement token contains no hex-digit run of its
    own, so a second pass matches nothing.
    """
    return _ADDRESS_RE.sub("0xADDR", text)


def _render(value: Any, seen: set[int], depth: int) -> str:
    if depth > DEPTH_LIMIT:
        raise DepthLimitError("value nesting exceeds %d" % DEPTH_LIMIT)
    # bool is an int subclass; test it first.
    if value is None or isinstance(value, (bool, int, float, str, bytes, bytearray)):
        return repr(value)
    if isinstance(value, StubFunction):
        return f"stub:function:{value.module}.{value.name}"
    if isinstance(value, type) and issubclass(value, _StubMarker):
        return f"stub:class:{value._stub_module}.{value._stub_name}"
    if isinstance(value, _StubMarker):
        return f"stub:instance:{value._stub_module}.{value._stub_name}"
    if isinstance(value, PersistentId):
        return "persid:" + _render(value.pid, seen, depth + 1)
    if isinstance(value, list):
        if id(value) in seen:
            return "[...]"
        seen.add(id(value))
        try:
            return "[" + ", ".join(_render(v, seen, depth + 1) for v in value) + "]"
        finally:
            seen.discard(id(value))
    if isinstance(value, tuple):
        if id(value) in seen:
            return "(...)"
        seen.add(id(value))
        try:
            if len(value) == 1:
                return "(" + _render(value[0], seen, depth + 1) + ",)"
            return "(" + ", ".join(_render(v, seen, depth + 1) for v in value) + ")"
        finally:
            seen.discard(id(value))
    if isinstance(value, dict):
        if id(value) in seen:
            return "{...}"
        seen.add(id(value))
        try:
            return (
                "{"
                + ", ".join(
                    _render(k, seen, depth + 1) + ": " + _render(v, seen, depth + 1)
                    for k, v in value.items()
                )
                + "}"
            )
        finally:
            seen.discard(id(value))
    if isinstance(value, (set, frozenset)):
        # Sort by rendered text so the form is independent of hash seeding
        # (and therefore comparable across processes).
        if id(value) in seen:
            return "{...}" if isinstance(value, set) else "frozenset({...})"
        seen.add(id(value))
        try:
            body = ", ".join(sorted(_render(v, seen, depth + 1) for v in value))
        finally:
            seen.discard(id(value))
        if isinstance(value, frozenset):
            return "frozenset({%s})" % body if body else "frozenset()"
        return "{%s}" % body if body else "set()"
    # memoryviews and anything else exotic: the plain repr, which the
    # address scrub normalizes.
    return repr(value)


def canonical(value: Any) -> str:
    """Render a runtime value to its canonical comparable text form."""
    try:
        text = _render(value, set(), 0)
    except RecursionError:
        raise DepthLimitError("value nesting exceeds interpreter recursion limit")
    return scrub_addresses(text)


@dataclass
class MachineState:
    """The three storage areas, as left behind by a load."""

    stack: list = field(default_factory=list)
    metastack: list = field(default_factory=list)
    memo: dict = field(default_factory=dict)


def canonical_state(state: MachineState) -> dict:
    """Render every value in the state to canonical text.

    Returns a mapping with the same three fields; memo keys become
    decimal strings so the form survives JSON transport unchanged.
    """
    return {
        "stack": [canonical(v) for v in state.stack],
        "metastack": [[canonical(v) for v in seg] for seg in state.metastack],
        "memo": {str(k): canonical(v) for k, v in sorted(state.memo.items())},
    }


@dataclass
class LoadResult:
    outcome: str  # "ok" | "error"
    error_label: str | None
    error_detail: str | None
    value: Any
    state: MachineState

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"


# ---------------------------------------------------------------------------
# Execution faults (internal control flow).


class _Stop(Exception):
    def __init__(self, value):
        self.value = value


class _Fault(Exception):
    def __init__(self, label: str, message: str):
        super().__init__(message)
        self.label = label


def _fault(label: str, message: str) -> _Fault:
    return _Fault(label, message)


class _Unframer:
    """Frame bookkeeping with the reference deserializer's exact rules:
    an exhausted frame falls through to the outer stream on the *next*
    read, a read crossing a frame boundary mid-argument faults, and a
    new frame may not open before the current one is drained."""

    def __init__(self, data: bytes):
        self._pos = 0
        self._data = data
        self._frame = None  # (bytes, pos) | None

    def _file_read(self, n: int) -> bytes:
        chunk = self._data[self._pos : self._pos + n]
        self._pos += len(chunk)
        return chunk

    def _file_readline(self) -> bytes:
        nl = self._data.find(b"\n", self._pos)
        end = len(self._data) if nl < 0 else nl + 1
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def read(self, n: int) -> bytes:
        if self._frame is not None:
            buf, fpos = self._frame
            chunk = buf[fpos : fpos + n]
            if not chunk and n != 0:
                self._frame = None
                return self._file_read(n)
            if len(chunk) < n:
                raise _fault("frame-violation", "stream exhausted inside a frame")
            self._frame = (buf, fpos + n)
            return chunk
        return self._file_read(n)

    def readline(self) -> bytes:
        if self._frame is not None:
            buf, fpos = self._frame
            nl = buf.find(b"\n", fpos)
            if nl < 0:
                chunk = buf[fpos:]
            else:
                chunk = buf[fpos : nl + 1]
            if not chunk:
                self._frame = None
                return self._file_readline()
            if chunk[-1] != 0x0A:
                raise _fault("frame-violation", "stream exhausted inside a frame")
            self._frame = (buf, fpos + len(chunk))
            return chunk
        return self._file_readline()

    def load_frame(self, frame_size: int):
        if self._frame is not None:
            buf, fpos = self._frame
            if buf[fpos:] != b"":
                raise _fault(
                    "frame-violation", "new frame opens before the current one ends"
                )
        self._frame = (self._file_read(frame_size), 0)


def _decode_long(data: bytes) -> int:
    return int.from_bytes(data, byteorder="little", signed=True)


def _handles(name):
    def deco(fn):
        fn._opcode_name = name
        return fn

    return deco


class Machine:
    """One single-use execution of a payload.

    ``encoding``/``errors`` apply to the three 8-bit string opcodes, as
    in the reference deserializer; ``buffers`` is the out-of-band buffer
    iterable or None.
    """

    def __init__(
        self,
        data: bytes,
        *,
        encoding: str = "ascii",
        errors: str = "strict",
        buffers: Iterable | None = None,
    ):
        self._data = bytes(data)
        self.encoding = encoding
        self.errors = errors
        self._buffers = iter(buffers) if buffers is not None else None
        self.stack: list = []
        self.metastack: list = []
        self.memo: dict = {}
        self.proto = 0

    # -- plumbing -----------------------------------------------------

    def _read(self, n: int) -> bytes:
        """Strict read: short data is a fault here rather than a later
        EOF, which is outcome-equivalent to the reference behavior (a
        short raw read always exhausts the stream, so the reference
        machine faults at the next dispatch at the latest)."""
        chunk = self._unframer.read(n)
        if len(chunk) < n:
            raise _fault("bad-argument", "stream exhausted inside an argument")
        return chunk

    def _readline(self) -> bytes:
        # Deliberately lazy, like the reference: a line without a
        # terminator is returned as-is and the handler's [:-1] slice
        # eats a real byte.
        return self._unframer.readline()

    def pop_mark(self) -> list:
        if not self.metastack:
            raise _fault("no-mark", "no MARK frame to pop")
        items = self.stack
        self.stack = self.metastack.pop()
        return items

    def _state(self) -> MachineState:
        return MachineState(self.stack, self.metastack, self.memo)

    def find_class(self, module: str, name: str) -> Any:
        return resolve_import(module, name)

    def persistent_load(self, pid: Any) -> Any:
        return PersistentId(pid)

    # -- driver -------------------------------------------------------

    def load(self) -> LoadResult:
        self._unframer = _Unframer(self._data)
        try:
            dispatch = self._dispatch
            while True:
                key = self._unframer.read(1)
                if not key:
                    raise _fault("bad-argument", "stream ended before STOP")
                handler = dispatch.get(key[0])
                if handler is None:
                    raise _fault(
                        "unknown-opcode", "unknown opcode 0x%02x" % key[0]
                    )
                handler(self)
        except _Stop as stop:
            return LoadResult("ok", None, None, stop.value, self._state())
        except _Fault as f:
            return LoadResult("error", f.label, str(f), None, self._state())
        except MemoryError:
            raise  # budgeted by the harness, not a machine-level outcome
        except RecursionError:
            return LoadResult(
                "error", "not-implemented", "recursion limit", None, self._state()
            )
        except UnicodeError as e:
            return LoadResult("error", "decode-failure", str(e), None, self._state())
        except ValueError as e:
            # int()/float()/escape parsing; everything else value-shaped
            # raises typed faults above.
            return LoadResult("error", "decode-failure", str(e), None, self._state())
        except IndexError as e:
            return LoadResult("error", "stack-underflow", str(e), None, self._state())
        except (TypeError, AttributeError, OverflowError) as e:
            return LoadResult("error", "bad-argument", str(e), None, self._state())
        except Exception as e:  # fault safety: nothing escapes
            return LoadResult(
                "error",
                "bad-argument",
                "%s: %s" % (type(e).__name__, e),
                None,
                self._state(),
            )

    # -- handlers, protocol 0 ------------------------------------------

    @_handles("PROTO")
    def op_proto(self):
        proto = self._read(1)[0]
        if not 0 <= proto <= HIGHEST_PROTOCOL:
            raise _fault("bad-argument", "unsupported pickle protocol: %d" % proto)
        self.proto = proto

    @_handles("FRAME")
    def op_frame(self):
        (frame_size,) = struct.unpack("<Q", self._read(8))
        if frame_size > sys.maxsize:
            raise _fault("bad-argument", "frame size out of range: %d" % frame_size)
        self._unframer.load_frame(frame_size)

    @_handles("PERSID")
    def op_persid(self):
        try:
            pid = self._readline()[:-1].decode("ascii")
        except UnicodeDecodeError:
            raise _fault(
                "decode-failure", "protocol-0 persistent ID is not ASCII"
            ) from None
        self.stack.append(self.persistent_load(pid))

    @_handles("BINPERSID")
    def op_binpersid(self):
        pid = self.stack.pop()
        self.stack.append(self.persistent_load(pid))

    @_handles("NONE")
    def op_none(self):
        self.stack.append(None)

    @_handles("NEWFALSE")
    def op_newfalse(self):
        self.stack.append(False)

    @_handles("NEWTRUE")
    def op_newtrue(self):
        self.stack.append(True)

    @_handles("INT")
    def op_int(self):
        data = self._readline()
        # The two-byte literals 00/01 (newline included in the compare)
        # are booleans; everything else parses with base 0.
        if data == b"00\n":
            val = False
        elif data == b"01\n":
            val = True
        else:
            val = int(data, 0)
        self.stack.append(val)

    @_handles("BININT")
    def op_binint(self):
        self.stack.append(int.from_bytes(self._read(4), "little", signed=True))

    @_handles("BININT1")
    def op_binint1(self):
        self.stack.append(self._read(1)[0])

    @_handles("BININT2")
    def op_binint2(self):
        self.stack.append(int.from_bytes(self._read(2), "little"))

    @_handles("LONG")
    def op_long(self):
        val = self._readline()[:-1]
        if val and val[-1] == 0x4C:  # optional 'L' suffix
            val = val[:-1]
        self.stack.append(int(val, 0))

    @_handles("LONG1")
    def op_long1(self):
        n = self._read(1)[0]
        self.stack.append(_decode_long(self._read(n)))

    @_handles("LONG4")
    def op_long4(self):
        (n,) = struct.unpack("<i", self._read(4))
        if n < 0:
            raise _fault("bad-argument", "LONG4 has a negative byte count")
        self.stack.append(_decode_long(self._read(n)))

    @_handles("FLOAT")
    def op_float(self):
        self.stack.append(float(self._readline()[:-1]))

    @_handles("BINFLOAT")
    def op_binfloat(self):
        self.stack.append(struct.unpack(">d", self._read(8))[0])

    def _decode_string(self, value: bytes):
        if self.encoding == "bytes":
            return value
        return value.decode(self.encoding, self.errors)

    @_handles("STRING")
    def op_string(self):
        data = self._readline()[:-1]
        if len(data) >= 2 and data[0] == data[-1] and data[0] in b"\"'":
            data = data[1:-1]
        else:
            raise _fault("bad-argument", "STRING argument is not quoted")
        self.stack.append(self._decode_string(codecs.escape_decode(data)[0]))

    @_handles("BINSTRING")
    def op_binstring(self):
        (n,) = struct.unpack("<i", self._read(4))
        if n < 0:
            raise _fault("bad-argument", "BINSTRING has a negative byte count")
        self.stack.append(self._decode_string(self._read(n)))

    @_handles("SHORT_BINSTRING")
    def op_short_binstring(self):
        n = self._read(1)[0]
        self.stack.append(self._decode_string(self._read(n)))

    @_handles("BINBYTES")
    def op_binbytes(self):
        (n,) = struct.unpack("<I", self._read(4))
        if n > sys.maxsize:
            raise _fault("bad-argument", "BINBYTES count exceeds address space")
        self.stack.append(self._read(n))

    @_handles("SHORT_BINBYTES")
    def op_short_binbytes(self):
        n = self._read(1)[0]
        self.stack.append(self._read(n))

    @_handles("BINBYTES8")
    def op_binbytes8(self):
        (n,) = struct.unpack("<Q", self._read(8))
        if n > sys.maxsize:
            raise _fault("bad-argument", "BINBYTES8 count exceeds address space")
        self.stack.append(self._read(n))

    @_handles("BYTEARRAY8")
    def op_bytearray8(self):
        (n,) = struct.unpack("<Q", self._read(8))
        if n > sys.maxsize:
            raise _fault("bad-argument", "BYTEARRAY8 count exceeds address space")
        self.stack.append(bytearray(self._read(n)))

    @_handles("NEXT_BUFFER")
    def op_next_buffer(self):
        if self._buffers is None:
            raise _fault(
                "buffers-exhausted",
                "stream refers to out-of-band data but no buffers were given",
            )
        try:
            buf = next(self._buffers)
        except StopIteration:
            raise _fault("buffers-exhausted", "not enough out-of-band buffers") from None
        self.stack.append(buf)

    @_handles("READONLY_BUFFER")
    def op_readonly_buffer(self):
        buf = self.stack[-1]
        with memoryview(buf) as m:
            if not m.readonly:
                self.stack[-1] = m.toreadonly()

    @_handles("UNICODE")
    def op_unicode(self):
        self.stack.append(str(self._readline()[:-1], "raw-unicode-escape"))

    @_handles("BINUNICODE")
    def op_binunicode(self):
        (n,) = struct.unpack("<I", self._read(4))
        if n > sys.maxsize:
            raise _fault("bad-argument", "BINUNICODE count exceeds address space")
        self.stack.append(str(self._read(n), "utf-8", "surrogatepass"))

    @_handles("SHORT_BINUNICODE")
    def op_short_binunicode(self):
        n = self._read(1)[0]
        self.stack.append(str(self._read(n), "utf-8", "surrogatepass"))

    @_handles("BINUNICODE8")
    def op_binunicode8(self):
        (n,) = struct.unpack("<Q", self._read(8))
        if n > sys.maxsize:
            raise _fault("bad-argument", "BINUNICODE8 count exceeds address space")
        self.stack.append(str(self._read(n), "utf-8", "surrogatepass"))

    # -- containers ----------------------------------------------------

    @_handles("EMPTY_TUPLE")
    def op_empty_tuple(self):
        self.stack.append(())

    @_handles("TUPLE")
    def op_tuple(self):
        # pop_mark swaps self.stack; it must run before the append target
        # is looked up (same in LIST/FROZENSET below).
        items = self.pop_mark()
        self.stack.append(tuple(items))

    @_handles("TUPLE1")
    def op_tuple1(self):
        self.stack[-1] = (self.stack[-1],)

    @_handles("TUPLE2")
    def op_tuple2(self):
        if len(self.stack) < 2:
            raise _fault("stack-underflow", "TUPLE2 needs two stack items")
        self.stack[-2:] = [(self.stack[-2], self.stack[-1])]

    @_handles("TUPLE3")
    def op_tuple3(self):
        if len(self.stack) < 3:
            raise _fault("stack-underflow", "TUPLE3 needs three stack items")
        self.stack[-3:] = [(self.stack[-3], self.stack[-2], self.stack[-1])]

    @_handles("EMPTY_LIST")
    def op_empty_list(self):
        self.stack.append([])

    @_handles("EMPTY_DICT")
    def op_empty_dict(self):
        self.stack.append({})

    @_handles("EMPTY_SET")
    def op_empty_set(self):
        self.stack.append(set())

    @_handles("FROZENSET")
    def op_frozenset(self):
        items = self.pop_mark()
        self.stack.append(frozenset(items))

    @_handles("LIST")
    def op_list(self):
        items = self.pop_mark()
        self.stack.append(items)

    @_handles("DICT")
    def op_dict(self):
        items = self.pop_mark()
        self.stack.append({items[i]: items[i + 1] for i in range(0, len(items), 2)})

    # -- object construction -------------------------------------------

    def _instantiate(self, klass, args):
        if args or not isinstance(klass, type) or hasattr(klass, "__getinitargs__"):
            value = klass(*args)
        else:
            value = klass.__new__(klass)
        self.stack.append(value)

    @_handles("INST")
    def op_inst(self):
        module = self._readline()[:-1].decode("ascii")
        name = self._readline()[:-1].decode("ascii")
        klass = self.find_class(module, name)
        self._instantiate(klass, self.pop_mark())

    @_handles("OBJ")
    def op_obj(self):
        args = self.pop_mark()
        if not args:
            raise _fault("stack-underflow", "OBJ with no class on the stack")
        cls = args.pop(0)
        self._instantiate(cls, args)

    @_handles("NEWOBJ")
    def op_newobj(self):
        args = self.stack.pop()
        cls = self.stack.pop()
        self.stack.append(cls.__new__(cls, *args))

    @_handles("NEWOBJ_EX")
    def op_newobj_ex(self):
        kwargs = self.stack.pop()
        args = self.stack.pop()
        cls = self.stack.pop()
        self.stack.append(cls.__new__(cls, *args, **kwargs))

    @_handles("GLOBAL")
    def op_global(self):
        module = self._readline()[:-1].decode("utf-8")
        name = self._readline()[:-1].decode("utf-8")
        self.stack.append(self.find_class(module, name))

    @_handles("STACK_GLOBAL")
    def op_stack_global(self):
        name = self.stack.pop()
        module = self.stack.pop()
        if type(name) is not str or type(module) is not str:
            raise _fault("bad-argument", "STACK_GLOBAL requires two strings")
        self.stack.append(self.find_class(module, name))

    @_handles("EXT1")
    def op_ext1(self):
        self._get_extension(self._read(1)[0])

    @_handles("EXT2")
    def op_ext2(self):
        self._get_extension(int.from_bytes(self._read(2), "little"))

    @_handles("EXT4")
    def op_ext4(self):
        self._get_extension(int.from_bytes(self._read(4), "little", signed=True))

    def _get_extension(self, code: int):
        # The extension registry is empty in this hermetic machine, so
        # every code is either forbidden or unregistered.
        if code <= 0:
            raise _fault("bad-argument", "EXT specifies code <= 0")
        raise _fault("bad-argument", "unregistered extension code %d" % code)

    @_handles("REDUCE")
    def op_reduce(self):
        args = self.stack.pop()
        func = self.stack[-1]
        self.stack[-1] = func(*args)

    @_handles("BUILD")
    def op_build(self):
        state = self.stack.pop()
        inst = self.stack[-1]
        setstate = getattr(inst, "__setstate__", None)
        if setstate is not None:
            setstate(state)
            return
        slotstate = None
        if isinstance(state, tuple) and len(state) == 2:
            state, slotstate = state
        if state:
            inst_dict = inst.__dict__
            for k, v in state.items():
                inst_dict[k] = v
        if slotstate:
            for k, v in slotstate.items():
                setattr(inst, k, v)

    # -- stack and memo management --------------------------------------

    @_handles("POP")
    def op_pop(self):
        if self.stack:
            del self.stack[-1]
        else:
            self.pop_mark()

    @_handles("POP_MARK")
    def op_pop_mark(self):
        self.pop_mark()

    @_handles("DUP")
    def op_dup(self):
        self.stack.append(self.stack[-1])

    @_handles("MARK")
    def op_mark(self):
        self.metastack.append(self.stack)
        self.stack = []

    @_handles("GET")
    def op_get(self):
        i = int(self._readline()[:-1])
        if i not in self.memo:
            raise _fault("memo-miss", "no memo entry at index %d" % i)
        self.stack.append(self.memo[i])

    @_handles("BINGET")
    def op_binget(self):
        i = self._read(1)[0]
        if i not in self.memo:
            raise _fault("memo-miss", "no memo entry at index %d" % i)
        self.stack.append(self.memo[i])

    @_handles("LONG_BINGET")
    def op_long_binget(self):
        i = int.from_bytes(self._read(4), "little")
        if i not in self.memo:
            raise _fault("memo-miss", "no memo entry at index %d" % i)
        self.stack.append(self.memo[i])

    @_handles("PUT")
    def op_put(self):
        i = int(self._readline()[:-1])
        if i < 0:
            raise _fault("bad-argument", "negative PUT index")
        self.memo[i] = self.stack[-1]

    @_handles("BINPUT")
    def op_binput(self):
        i = self._read(1)[0]
        self.memo[i] = self.stack[-1]

    @_handles("LONG_BINPUT")
    def op_long_binput(self):
        i = int.from_bytes(self._read(4), "little")
        if i > sys.maxsize:
            raise _fault("bad-argument", "LONG_BINPUT index out of range")
        self.memo[i] = self.stack[-1]

    @_handles("MEMOIZE")
    def op_memoize(self):
        self.memo[len(self.memo)] = self.stack[-1]

    # -- container mutation ---------------------------------------------

    @_handles("APPEND")
    def op_append(self):
        value = self.stack.pop()
        self.stack[-1].append(value)

    @_handles("APPENDS")
    def op_appends(self):
        items = self.pop_mark()
        list_obj = self.stack[-1]
        try:
            extend = list_obj.extend
        except AttributeError:
            pass
        else:
            extend(items)
            return
        # Reference fallback: lacking extend(), append() is looked up
        # before the (possibly empty) loop runs, so a mark directly
        # above an append-less object faults even with nothing to add.
        append = list_obj.append
        for item in items:
            append(item)

    @_handles("SETITEM")
    def op_setitem(self):
        value = self.stack.pop()
        key = self.stack.pop()
        self.stack[-1][key] = value

    @_handles("SETITEMS")
    def op_setitems(self):
        items = self.pop_mark()
        d = self.stack[-1]
        for i in range(0, len(items), 2):
            d[items[i]] = items[i + 1]

    @_handles("ADDITEMS")
    def op_additems(self):
        items = self.pop_mark()
        set_obj = self.stack[-1]
        if isinstance(set_obj, set):
            set_obj.update(items)
        else:
            add = set_obj.add
            for item in items:
                add(item)

    @_handles("STOP")
    def op_stop(self):
        raise _Stop(self.stack.pop())


Machine._dispatch = {
    by_name(method._opcode_name).code: method
    for method in vars(Machine).values()
    if callable(method) and hasattr(method, "_opcode_name")
}


def load(
    payload,
    *,
    buffers_items: int = 3,
) -> LoadResult:
    """Run one payload through a fresh machine.

    Accepts a generator Payload (whose encoding, buffers menu id, and
    seed select the execution environment) or plain bytes, which run
    with the reference defaults: ascii encoding, no buffers.
    """
    if isinstance(payload, (bytes, bytearray)):
        machine = Machine(bytes(payload))
    else:
        from .generator import build_buffers

        machine = Machine(
            payload.pickle_bytes,
            encoding=payload.encoding,
            buffers=build_buffers(payload.buffers_choice, payload.seed, buffers_items),
        )
    return machine.load()
