"""Evaluation phase: detect discrepancies, minimize, deduplicate.

Two kinds of verdict come out of a set of per-target execution
records.  An error discrepancy means the targets disagree about
whether the payload is an error at all (exception types are ignored on
purpose; implementations legitimately pick different exception
classes).  A storage discrepancy means every target accepted the
payload but the storage areas or the result differ as canonical
strings.  Budget-exceeded records are non-comparable and drop out
before either rule runs; resource exhaustion is an environment
property, not a parser disagreement.

Storage comparison is fieldwise over the fields both records actually
expose (the C deserializer cannot show its operand stack, so against
it only memo and result are meaningful).  The vector labels storage
classes greedily: each deserializer record joins the first earlier
class whose representative it matches on all shared fields, else it
opens a new class.  The representative stays the first member, so
labels are deterministic in record order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

from .generator import Payload
from .opcode_model import FramingError, iter_instructions
from .pvm import scrub_addresses

__all__ = [
    "Signature",
    "Discrepancy",
    "comparable_fields",
    "detect",
    "minimize",
    "dedup",
    "make_discrepancy",
    "opcode_profile",
]

_STATE_FIELDS = ("stack", "metastack", "memo")


@dataclass(frozen=True)
class Signature:
    """Dedup key: what kind of disagreement, who disagreed with whom,
    and which opcodes the minimized payload needs to trigger it."""

    kind: str  # "error" | "storage"
    outcome_vector: tuple[str, ...]
    opcode_profile: frozenset[str]

    def digest(self) -> str:
        blob = json.dumps(
            [self.kind, list(self.outcome_vector), sorted(self.opcode_profile)]
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Discrepancy:
    """One finding: the minimized payload, where it came from, and the
    records that exhibit the disagreement."""

    kind: str
    signature: Signature
    payload: Payload  # minimized
    original_payload: Payload
    records: tuple


def opcode_profile(pickle_bytes: bytes) -> frozenset:
    names = set()
    try:
        for ins in iter_instructions(pickle_bytes):
            names.add(ins.spec.name)
    except FramingError:
        pass
    return frozenset(names)


def comparable_fields(record) -> dict:
    """The canonical fields a record exposes, each as one scrubbed
    string ready for exact comparison."""
    fields = {}
    state = record.state or {}
    for name in _STATE_FIELDS:
        if name in state:
            fields[name] = scrub_addresses(
                json.dumps(state[name], sort_keys=True, ensure_ascii=True)
            )
    if record.result_repr is not None:
        fields["result_repr"] = scrub_addresses(record.result_repr)
    return fields


def detect(records) -> tuple | None:
    """Evaluate one payload's records; returns (kind, outcome_vector)
    or None.

    The error rule looks at the ok/error bit of every comparable
    record, disassemblers included.  The storage rule runs only when
    every comparable record is ok, and only over deserializers.
    """
    usable = [r for r in records if r.error_label != "budget-exceeded"]
    if len(usable) < 2:
        return None
    bits = tuple(r.outcome for r in usable)
    if any(b != bits[0] for b in bits):
        return ("error", bits)
    if bits[0] != "ok":
        return None

    deserializers = [r for r in usable if r.kind == "deserializer"]
    if len(deserializers) < 2:
        return None
    representatives: list[dict] = []
    letters = []
    for record in deserializers:
        fields = comparable_fields(record)
        for index, rep in enumerate(representatives):
            shared = fields.keys() & rep.keys()
            if all(fields[k] == rep[k] for k in shared):
                letters.append(chr(65 + index))
                break
        else:
            representatives.append(fields)
            letters.append(chr(65 + len(representatives) - 1))
    if len(set(letters)) < 2:
        return None
    return ("storage", tuple(letters))


def minimize(payload: Payload, targets=None, oracle=None) -> Payload:
    """Shrink a discrepancy-triggering payload by whole instructions.

    Greedy delta debugging: try removing instruction chunks at halving
    granularity down to single instructions, keeping any removal under
    which the oracle still reports the same (kind, outcome_vector).
    STOP is never removed.  The result is 1-minimal: removing any one
    remaining instruction changes or kills the verdict.
    """
    if oracle is None:
        from . import harness as _harness

        def oracle(p, _targets=targets):
            return detect(_harness.execute(p, _targets))

    baseline = oracle(payload)
    if baseline is None:
        return payload
    try:
        instructions = list(iter_instructions(payload.pickle_bytes))
    except FramingError:
        return payload

    data = payload.pickle_bytes
    pieces = [data[ins.offset : ins.end] for ins in instructions]
    removable = [
        k for k, ins in enumerate(instructions) if ins.spec.name != "STOP"
    ]

    def rebuild(keep) -> Payload:
        kept = set(keep)
        blob = b"".join(
            pieces[k]
            for k in range(len(pieces))
            if k in kept or instructions[k].spec.name == "STOP"
        )
        return replace(payload, pickle_bytes=blob)

    current = list(removable)
    granularity = 2
    while len(current) >= 1:
        chunk_size = -(-len(current) // granularity)
        reduced = False
        for start in range(0, len(current), chunk_size):
            chunk = set(current[start : start + chunk_size])
            candidate_keep = [k for k in current if k not in chunk]
            if oracle(rebuild(candidate_keep)) == baseline:
                current = candidate_keep
                granularity = max(granularity - 1, 2)
                reduced = True
                break
        if not reduced:
            if granularity >= len(current):
                break
            granularity = min(len(current), granularity * 2)

    if current == removable:
        return payload
    return rebuild(current)


def dedup(finding: Discrepancy, seen: set) -> bool:
    """True when the finding's signature is new; records it in seen."""
    if finding.signature in seen:
        return False
    seen.add(finding.signature)
    return True


def make_discrepancy(kind, outcome_vector, original, minimized, records) -> Discrepancy:
    signature = Signature(
        kind=kind,
        outcome_vector=tuple(outcome_vector),
        opcode_profile=opcode_profile(minimized.pickle_bytes),
    )
    return Discrepancy(
        kind=kind,
        signature=signature,
        payload=minimized,
        original_payload=original,
        records=tuple(records),
    )
