"""Serve the interpreter's own pickle readers over line-delimited JSON.

One process, three targets: the pure-Python deserializer (instrumented
to expose its stack, metastack, and memo), the C deserializer (only its
memo and result are reachable from the outside, so that is what it
reports), and the disassembler (outcome only). A harness writes one
JSON request per line on standard input and reads one JSON response
per line on standard output; the process announces itself with the
line {"ready": true} once it is serving.

Everything a response carries is text. Values are rendered with the
same canonical conventions the in-process pickle machine uses (the
same stub naming, the same container forms, the same address scrub)
so a record produced here is directly comparable with a record
produced there. The few dozen lines of shared convention (the FNV-1a
stub rule, the splitmix64 buffer menu, the renderer) are duplicated
here on purpose: this package must stay standard-library-only, and
the conventions are frozen by fixtures on both sides.

Memory discipline: if PICKLEDIFF_BRIDGE_MEM_MIB is set, the process
installs that address-space limit before touching the first payload.
An allocation that breaches it surfaces as a MemoryError, which is
reported as an error response with error_type "budget-exceeded"
rather than crashing the process.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import os
import pickle
import pickletools
import re
import sys
from dataclasses import dataclass
from typing import Any

__all__ = [
    "TARGETS",
    "PersistentId",
    "StubFunction",
    "build_buffers",
    "canonicalize",
    "fnv1a64",
    "main",
    "resolve_import",
    "scrub_addresses",
    "serve",
    "splitmix64_stream",
]

TARGETS = ("ext-pure-deserializer", "ext-c-deserializer", "ext-disassembler")

UNRENDERABLE = "<unrenderable>"

_MASK64 = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Import stubs (mirror of the in-process machine's rule)
# ---------------------------------------------------------------------------

_FNV1A64_BASIS = 0xCBF29CE484222325
_FNV1A64_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """FNV-1a, 64-bit variant."""
    h = _FNV1A64_BASIS
    for byte in data:
        h = ((h ^ byte) * _FNV1A64_PRIME) & _MASK64
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
    """Common base for generated stub classes so the renderer can
    recognize them."""

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
# Canonical rendering (mirror of the in-process machine's renderer)
# ---------------------------------------------------------------------------

DEPTH_LIMIT = 10_000

_ADDRESS_RE = re.compile(r"0x[0-9a-fA-F]{4,16}")


def scrub_addresses(text: str) -> str:
    """Replace address-like hex runs (0x + 4-16 hex digits) with 0xADDR."""
    return _ADDRESS_RE.sub("0xADDR", text)


def _render(value: Any, seen: set, depth: int) -> str:
    if depth > DEPTH_LIMIT:
        raise RecursionError("value nesting exceeds %d" % DEPTH_LIMIT)
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
        # Sort by rendered text so the form is independent of hash seeding.
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
    return repr(value)


def canonicalize(value: Any) -> str:
    """Render a runtime value to its canonical comparable text form.

    Values the renderer cannot handle (typically graphs deeper than the
    cap) become the fixed token "<unrenderable>"; the process must keep
    serving, whatever the payload built.
    """
    try:
        text = _render(value, set(), 0)
    except Exception:
        return UNRENDERABLE
    return scrub_addresses(text)


# ---------------------------------------------------------------------------
# Buffer menu (mirror of the payload generator's menu)
# ---------------------------------------------------------------------------

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_stream(seed: int, index: int) -> int:
    """The index-th output of a splitmix64 stream keyed by seed."""
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
    """Materialize the out-of-band buffers for a payload; values are
    functions of (choice, seed, item_count) only, so this process
    reconstructs exactly what the payload's generator handed the
    in-process machine."""
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
# Targets
# ---------------------------------------------------------------------------


class _PureUnpickler(pickle._Unpickler):
    def find_class(self, module, name):
        return resolve_import(module, name)

    def persistent_load(self, pid):
        return PersistentId(pid)


class _CUnpickler(pickle.Unpickler):
    # pickle.Unpickler is the C implementation when the interpreter has
    # one; without it this degrades to a second pure target, which is
    # honest if uninteresting.
    def find_class(self, module, name):
        return resolve_import(module, name)

    def persistent_load(self, pid):
        return PersistentId(pid)


def _memo_fields(memo) -> dict:
    # The C deserializer hands out a memo proxy rather than the dict
    # itself; copy() materializes either form.
    raw = memo.copy() if hasattr(memo, "copy") else dict(memo)
    return {str(k): canonicalize(v) for k, v in sorted(raw.items())}


def _run_pure(data: bytes, encoding: str, buffers) -> dict:
    up = _PureUnpickler(io.BytesIO(data), encoding=encoding, buffers=buffers)
    fields: dict = {}
    try:
        value = up.load()
        fields["outcome"] = "ok"
        fields["result_repr"] = canonicalize(value)
    except MemoryError:
        fields["outcome"] = "error"
        fields["error_type"] = "budget-exceeded"
        fields["error_detail"] = "allocation failed during load"
    except Exception as exc:
        fields["outcome"] = "error"
        fields["error_type"] = type(exc).__name__
        fields["error_detail"] = str(exc)
    fields["stack"] = [canonicalize(v) for v in getattr(up, "stack", []) or []]
    fields["metastack"] = [
        [canonicalize(v) for v in seg] for seg in getattr(up, "metastack", []) or []
    ]
    fields["memo"] = _memo_fields(getattr(up, "memo", {}) or {})
    return fields


def _run_c(data: bytes, encoding: str, buffers) -> dict:
    up = _CUnpickler(io.BytesIO(data), encoding=encoding, buffers=buffers)
    fields: dict = {}
    try:
        value = up.load()
        fields["outcome"] = "ok"
        fields["result_repr"] = canonicalize(value)
    except MemoryError:
        fields["outcome"] = "error"
        fields["error_type"] = "budget-exceeded"
        fields["error_detail"] = "allocation failed during load"
    except Exception as exc:
        fields["outcome"] = "error"
        fields["error_type"] = type(exc).__name__
        fields["error_detail"] = str(exc)
    # The C deserializer's operand stack is not reachable from the
    # outside; its memo is, through the public attribute.
    try:
        fields["memo"] = _memo_fields(up.memo)
    except Exception:
        pass
    return fields


def _run_disasm(data: bytes, encoding: str, buffers) -> dict:
    try:
        pickletools.dis(data, out=io.StringIO())
        return {"outcome": "ok"}
    except MemoryError:
        return {
            "outcome": "error",
            "error_type": "budget-exceeded",
            "error_detail": "allocation failed during parse",
        }
    except Exception as exc:
        return {
            "outcome": "error",
            "error_type": type(exc).__name__,
            "error_detail": str(exc),
        }


_RUNNERS = {
    "ext-pure-deserializer": _run_pure,
    "ext-c-deserializer": _run_c,
    "ext-disassembler": _run_disasm,
}


# ---------------------------------------------------------------------------
# Wire loop
# ---------------------------------------------------------------------------


def _protocol_error(request_id, detail: str) -> dict:
    response = {
        "outcome": "error",
        "error_type": "bridge-protocol",
        "error_detail": detail,
    }
    if request_id is not None:
        response["id"] = request_id
    return response


def _handle_line(line: bytes) -> dict:
    try:
        request = json.loads(line)
    except ValueError:
        return _protocol_error(None, "request line is not JSON")
    if not isinstance(request, dict):
        return _protocol_error(None, "request line is not a JSON object")
    request_id = request.get("id")

    target = request.get("target")
    runner = _RUNNERS.get(target)
    if runner is None:
        return _protocol_error(request_id, "unknown target %r" % (target,))
    try:
        data = base64.b64decode(request.get("payload_b64", ""), validate=True)
    except (binascii.Error, TypeError) as exc:
        return _protocol_error(request_id, "bad payload_b64: %s" % (exc,))
    encoding = str(request.get("encoding", "ascii"))
    try:
        buffers = build_buffers(
            int(request.get("buffers_choice", 0)),
            int(request.get("seed", 0)),
            int(request.get("buffers_items", 3)),
        )
    except (ValueError, TypeError) as exc:
        return _protocol_error(request_id, "bad buffers request: %s" % (exc,))

    try:
        fields = runner(data, encoding, buffers)
    except MemoryError:
        fields = {
            "outcome": "error",
            "error_type": "budget-exceeded",
            "error_detail": "allocation failed while reporting",
        }
    except Exception as exc:
        # A runner escape is a bridge bug, not a target verdict; report
        # it as such and keep serving.
        fields = {
            "outcome": "error",
            "error_type": "bridge-protocol",
            "error_detail": "runner failed: %s" % (exc,),
        }
    response = {"id": request_id, "target": target}
    response.update(fields)
    return response


def _install_memory_limit():
    mib = os.environ.get("PICKLEDIFF_BRIDGE_MEM_MIB")
    if not mib:
        return
    try:
        limit = int(mib) << 20
        import resource

        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ValueError, OSError, ImportError):
        pass  # serve without a hard cap rather than not at all


def serve(stdin=None, stdout=None) -> None:
    """Announce readiness, then answer one response line per request
    line until end of input."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout
    stdout.write(json.dumps({"ready": True}) + "\n")
    stdout.flush()
    for line in iter(stdin.readline, b""):
        if not line.strip():
            continue
        response = _handle_line(line)
        try:
            stdout.write(json.dumps(response, ensure_ascii=True) + "\n")
            stdout.flush()
        except (BrokenPipeError, OSError):
            return


def main() -> int:
    _install_memory_limit()
    try:
        serve()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
