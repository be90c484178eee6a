"""Execution phase driver: one payload in, one record per target out.

Internal targets (the PVM and the static disassembler) run in this
process.  External targets run in a bridge subprocess speaking
line-delimited JSON on its standard streams; one session serves all
three external target names sequentially.

Budget policy: each target gets a wall-clock and a memory cap per
payload.  A target that blows its budget yields an error record with
the reserved label "budget-exceeded", which the evaluator treats as
non-comparable; resource exhaustion is interesting but it is not a
parser disagreement.  Internal targets are budgeted post-hoc (the
pickle machine always terminates, so a long run just flags itself on
the way out) and by catching MemoryError; the bridge is budgeted by a
receive timeout plus a hard address-space limit the bridge installs
from the environment variable PICKLEDIFF_BRIDGE_MEM_MIB.

Hermeticity: the bridge session is recycled after every request whose
outcome was an error, and after 1,000 requests regardless, so one
payload cannot poison the interpreter state seen by the next.
"""

from __future__ import annotations

import base64
import json
import os
import queue
import subprocess
import threading
import time
from dataclasses import dataclass

from . import pvm
from .disassembler import disassemble
from .generator import Payload

__all__ = [
    "TARGETS",
    "TARGET_KINDS",
    "Budgets",
    "ExecutionRecord",
    "BridgeUnavailable",
    "BridgeSession",
    "Harness",
    "execute",
]

TARGETS = (
    "internal-pvm",
    "internal-disasm",
    "ext-pure-deserializer",
    "ext-c-deserializer",
    "ext-disassembler",
)

TARGET_KINDS = {
    "internal-pvm": "deserializer",
    "internal-disasm": "disassembler",
    "ext-pure-deserializer": "deserializer",
    "ext-c-deserializer": "deserializer",
    "ext-disassembler": "disassembler",
}

_EXTERNAL = frozenset(t for t in TARGETS if t.startswith("ext-"))

BUDGET_LABEL = "budget-exceeded"

_RECYCLE_EVERY = 1000


@dataclass(frozen=True)
class Budgets:
    """Per-target, per-payload caps."""

    wall_clock_s: float = 2.0
    memory_mib: int = 512


@dataclass(frozen=True)
class ExecutionRecord:
    """What one target did with one payload."""

    target: str
    kind: str  # "deserializer" | "disassembler"
    outcome: str  # "ok" | "error"
    error_label: str | None = None
    error_detail: str | None = None
    state: dict | None = None  # canonical stack/metastack/memo, where exposed
    result_repr: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"


class BridgeUnavailable(RuntimeError):
    """The bridge process died and one respawn retry did not help."""


def _budget_record(target: str, detail: str) -> ExecutionRecord:
    return ExecutionRecord(
        target=target,
        kind=TARGET_KINDS[target],
        outcome="error",
        error_label=BUDGET_LABEL,
        error_detail=detail,
    )


def _as_payload(payload) -> Payload:
    if isinstance(payload, Payload):
        return payload
    return Payload(
        pickle_bytes=bytes(payload), encoding="ascii", buffers_choice=0, seed=0
    )


# ---------------------------------------------------------------------------
# Internal targets
# ---------------------------------------------------------------------------


def _run_internal_pvm(
    payload: Payload, budgets: Budgets, buffers_items: int
) -> ExecutionRecord:
    start = time.perf_counter()
    try:
        result = pvm.load(payload, buffers_items=buffers_items)
    except MemoryError:
        return _budget_record("internal-pvm", "allocation failed during load")
    if time.perf_counter() - start > budgets.wall_clock_s:
        return _budget_record("internal-pvm", "wall clock budget exceeded")
    try:
        state = pvm.canonical_state(result.state)
        result_repr = pvm.canonical(result.value) if result.ok else None
    except (pvm.DepthLimitError, RecursionError):
        return ExecutionRecord(
            target="internal-pvm",
            kind="deserializer",
            outcome="error",
            error_label="not-implemented",
            error_detail="value nesting exceeds the rendering depth cap",
        )
    except MemoryError:
        return _budget_record("internal-pvm", "allocation failed while rendering")
    return ExecutionRecord(
        target="internal-pvm",
        kind="deserializer",
        outcome=result.outcome,
        error_label=result.error_label,
        error_detail=result.error_detail,
        state=state,
        result_repr=result_repr,
    )


def _run_internal_disasm(payload: Payload, budgets: Budgets) -> ExecutionRecord:
    start = time.perf_counter()
    try:
        result = disassemble(payload)
    except MemoryError:
        return _budget_record("internal-disasm", "allocation failed during parse")
    if time.perf_counter() - start > budgets.wall_clock_s:
        return _budget_record("internal-disasm", "wall clock budget exceeded")
    return ExecutionRecord(
        target="internal-disasm",
        kind="disassembler",
        outcome=result.outcome,
        error_label=result.error_label,
        error_detail=result.error_detail,
    )


# ---------------------------------------------------------------------------
# Bridge session
# ---------------------------------------------------------------------------


def _pump(stream, sink: queue.SimpleQueue):
    for line in iter(stream.readline, b""):
        sink.put(line)
    sink.put(None)


class BridgeSession:
    """One bridge subprocess plus the bookkeeping to keep it honest.

    The launch contract: a single executable path, no arguments, that
    prints the line {"ready": true} once it is serving.  The memory
    budget travels in the environment variable PICKLEDIFF_BRIDGE_MEM_MIB
    so the bridge can install its own hard limit before touching any
    payload.
    """

    def __init__(
        self,
        command: str,
        budgets: Budgets | None = None,
        buffers_items: int = 3,
        spawn_timeout_s: float = 20.0,
    ):
        self._command = command
        self._budgets = budgets or Budgets()
        self._buffers_items = buffers_items
        self._spawn_timeout_s = spawn_timeout_s
        self._proc = None
        self._lines: queue.SimpleQueue | None = None
        self._next_id = 0
        self._since_recycle = 0
        self._spawn()

    # -- process lifecycle

    def _spawn(self):
        self._kill()
        env = dict(os.environ)
        env["PICKLEDIFF_BRIDGE_MEM_MIB"] = str(self._budgets.memory_mib)
        try:
            self._proc = subprocess.Popen(
                [self._command],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                env=env,
            )
        except OSError as exc:
            raise BridgeUnavailable(
                "could not launch bridge %r: %s" % (self._command, exc)
            ) from exc
        self._lines = queue.SimpleQueue()
        threading.Thread(
            target=_pump, args=(self._proc.stdout, self._lines), daemon=True
        ).start()
        line = self._next_line(self._spawn_timeout_s)
        ready = False
        if line is not None:
            try:
                ready = bool(json.loads(line).get("ready"))
            except (ValueError, AttributeError):
                ready = False
        if not ready:
            self._kill()
            raise BridgeUnavailable(
                "bridge %r did not announce readiness" % (self._command,)
            )
        self._since_recycle = 0

    def _kill(self):
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except OSError:
                pass
            self._proc = None
        self._lines = None

    def close(self):
        self._kill()

    def _next_line(self, timeout: float):
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            return b""  # distinguish timeout (b"") from EOF (None)

    def _alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    # -- requests

    def run(self, payload: Payload, target: str) -> ExecutionRecord:
        """Execute one payload on one external target.

        Timeouts become budget-exceeded records.  A dead process gets
        one respawn-and-resend; a second death raises BridgeUnavailable
        so the caller can abandon this payload without abandoning the
        campaign.
        """
        for _attempt in (0, 1):
            if not self._alive():
                self._spawn()  # raises BridgeUnavailable if it cannot
            response = self._round_trip(payload, target)
            if response is _TIMED_OUT:
                self._kill()  # a late response must not leak into the next request
                return _budget_record(target, "no response within wall clock budget")
            if response is _DIED:
                # reap explicitly: right after an EOF the exit status may
                # not be visible to poll() yet, and a liveness probe would
                # wrongly skip the respawn
                self._kill()
                continue
            return self._to_record(response, target)
        raise BridgeUnavailable(
            "bridge died twice on one request (target %s)" % (target,)
        )

    def _round_trip(self, payload: Payload, target: str):
        request = {
            "id": self._next_id,
            "payload_b64": base64.b64encode(payload.pickle_bytes).decode("ascii"),
            "encoding": payload.encoding,
            "buffers_choice": payload.buffers_choice,
            "seed": payload.seed,
            "target": target,
            "buffers_items": self._buffers_items,
        }
        self._next_id += 1
        try:
            self._proc.stdin.write(json.dumps(request).encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return _DIED
        line = self._next_line(self._budgets.wall_clock_s)
        if line is None:
            return _DIED
        if line == b"":
            return _TIMED_OUT
        try:
            response = json.loads(line)
        except ValueError:
            response = {"outcome": "error", "error_type": "bridge-protocol"}
        if response.get("id") not in (None, request["id"]):
            response = {"outcome": "error", "error_type": "bridge-protocol"}
        return response

    def _to_record(self, response: dict, target: str) -> ExecutionRecord:
        outcome = response.get("outcome")
        if outcome not in ("ok", "error"):
            outcome = "error"
            response = {"error_type": "bridge-protocol"}
        state = {
            k: response[k] for k in ("stack", "metastack", "memo") if k in response
        }
        record = ExecutionRecord(
            target=target,
            kind=TARGET_KINDS[target],
            outcome=outcome,
            error_label=response.get("error_type") if outcome == "error" else None,
            error_detail=response.get("error_detail"),
            state=state or None,
            result_repr=response.get("result_repr"),
        )
        self._since_recycle += 1
        if outcome == "error" or self._since_recycle >= _RECYCLE_EVERY:
            self._kill()  # next request respawns fresh
        return record


_TIMED_OUT = object()
_DIED = object()


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


class Harness:
    """Runs payloads against a fixed target set in a fixed order.

    The record order (and therefore every outcome vector downstream)
    follows the canonical TARGETS order, not the order the caller
    happened to list targets in.
    """

    def __init__(
        self,
        targets,
        budgets: Budgets | None = None,
        bridge_cmd: str | None = None,
        buffers_items: int = 3,
        bridge: BridgeSession | None = None,
    ):
        requested = list(targets)
        unknown = [t for t in requested if t not in TARGETS]
        if unknown:
            raise ValueError("unknown targets: %s" % (", ".join(unknown),))
        if len(set(requested)) != len(requested):
            raise ValueError("duplicate targets in %r" % (requested,))
        if len(requested) < 2:
            raise ValueError("need at least two targets to compare")
        self.targets = tuple(t for t in TARGETS if t in set(requested))
        self.budgets = budgets or Budgets()
        self._buffers_items = buffers_items
        self._owns_bridge = False
        self._bridge = bridge
        if any(t in _EXTERNAL for t in self.targets) and self._bridge is None:
            if not bridge_cmd:
                raise ValueError(
                    "external targets require a bridge command or session"
                )
            self._bridge = BridgeSession(
                bridge_cmd, budgets=self.budgets, buffers_items=buffers_items
            )
            self._owns_bridge = True

    def run(self, payload) -> list:
        """One record per configured target, in canonical order."""
        payload = _as_payload(payload)
        records = []
        for target in self.targets:
            if target == "internal-pvm":
                records.append(
                    _run_internal_pvm(payload, self.budgets, self._buffers_items)
                )
            elif target == "internal-disasm":
                records.append(_run_internal_disasm(payload, self.budgets))
            else:
                records.append(self._bridge.run(payload, target))
        return records

    def close(self):
        if self._owns_bridge and self._bridge is not None:
            self._bridge.close()
            self._bridge = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


def execute(
    payload,
    targets,
    budgets: Budgets | None = None,
    bridge_cmd: str | None = None,
    buffers_items: int = 3,
) -> list:
    """One-shot convenience over Harness for internal-heavy callers."""
    harness = Harness(
        targets, budgets=budgets, bridge_cmd=bridge_cmd, buffers_items=buffers_items
    )
    try:
        return harness.run(payload)
    finally:
        harness.close()
