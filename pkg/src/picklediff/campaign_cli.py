"""Campaign orchestration and the command-line entry point.

The campaign loop is the generate/execute/evaluate cycle: derive a
payload seed for iteration i by mixing the campaign seed with i
(splitmix64, the same stream the buffer menu uses), generate, run all
targets, detect.  Hits flow through a two-stage dedup: a cheap
pre-filter on (kind, outcome vector, opcode profile of the original
payload) decides whether minimization is worth running at all, and the
minimized payload's signature is the real dedup key.  The raw
pre-dedup hits are kept in a bounded on-disk ring so a different dedup
policy can be replayed later without re-fuzzing.

Iteration indices, not workers, own the seeds: worker w of N handles
iterations w, w+N, w+2N, ...  The corpus a campaign discovers is
therefore (near) independent of the worker count, and a single-worker
run is exactly reproducible from (seed, limits, iteration count).

Persistence is crash-only: findings are staged in a temporary
directory and renamed into place, stats are rewritten atomically, and
nothing in the output directory is ever mutated in place.
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import json
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, field

from . import __version__
from .evaluator import detect, dedup, make_discrepancy, minimize, opcode_profile
from .generator import GenLimits, Payload, generate, relaxed_limits, splitmix64_stream
from .harness import (
    TARGETS,
    Budgets,
    BridgeUnavailable,
    Harness,
)

__all__ = [
    "CampaignConfig",
    "CampaignStats",
    "ConfigError",
    "BridgeSpawnError",
    "run_campaign",
    "replay",
    "main",
]

_RAW_RING_SIZE = 10000
_STATS_INTERVAL_S = 5.0
_PROGRESS_EVERY = 500


class ConfigError(ValueError):
    """The campaign configuration cannot be run as given."""


class BridgeSpawnError(RuntimeError):
    """External targets were requested but the bridge would not start."""


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    targets: tuple
    out_dir: str
    duration_s: float | None = None
    max_iterations: int | None = None
    workers: int = 1
    limits: GenLimits = field(default_factory=GenLimits)
    budgets: Budgets = field(default_factory=Budgets)
    bridge_cmd: str | None = None

    def validate(self):
        if self.duration_s is None and self.max_iterations is None:
            raise ConfigError("a duration or an iteration count is required")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        if self.max_iterations is not None and self.max_iterations <= 0:
            raise ConfigError("iteration count must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        unknown = [t for t in self.targets if t not in TARGETS]
        if unknown:
            raise ConfigError("unknown targets: %s" % (", ".join(unknown),))
        if len(set(self.targets)) != len(self.targets):
            raise ConfigError("duplicate targets")
        if len(self.targets) < 2:
            raise ConfigError("need at least two targets")
        if any(t.startswith("ext-") for t in self.targets) and not self.bridge_cmd:
            raise ConfigError("external targets require --bridge-cmd")


@dataclass
class CampaignStats:
    payloads_executed: int = 0
    error_discrepancy_hits: int = 0
    storage_discrepancy_hits: int = 0
    unique_signatures: int = 0
    per_target_errors: dict = field(default_factory=dict)
    aborted_payloads: int = 0
    elapsed_s: float = 0.0

    @property
    def throughput(self) -> float:
        return self.payloads_executed / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["throughput"] = self.throughput
        return data


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _write_atomic(path: str, blob: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as handle:
        handle.write(blob)
    os.replace(tmp, path)


def _payload_meta(payload: Payload, config: CampaignConfig) -> dict:
    return {
        "seed": payload.seed,
        "encoding": payload.encoding,
        "buffers_choice": payload.buffers_choice,
        "limits": dataclasses.asdict(config.limits),
        "targets": list(config.targets),
        "tool_version": __version__,
    }


class _Corpus:
    """Owns the output directory layout.

    findings/<signature-digest>/{payload.pkl, meta.json, records.json}
    raw/hit-<n>.json          ring of the last pre-dedup hits
    stats.json                rewritten atomically on a timer
    report.txt                human-readable triage summary at the end
    """

    def __init__(self, out_dir: str, config: CampaignConfig):
        self.root = out_dir
        self.config = config
        self.findings_dir = os.path.join(out_dir, "findings")
        self.raw_dir = os.path.join(out_dir, "raw")
        os.makedirs(self.findings_dir, exist_ok=True)
        os.makedirs(self.raw_dir, exist_ok=True)
        self._raw_counter = 0

    def record_raw(self, payload: Payload, kind: str, vector):
        slot = self._raw_counter % _RAW_RING_SIZE
        self._raw_counter += 1
        entry = {
            "payload_b64": base64.b64encode(payload.pickle_bytes).decode("ascii"),
            "kind": kind,
            "outcome_vector": list(vector),
            **_payload_meta(payload, self.config),
        }
        _write_atomic(
            os.path.join(self.raw_dir, "hit-%05d.json" % slot),
            json.dumps(entry, indent=1).encode("utf-8"),
        )

    def persist_finding(self, finding):
        digest = finding.signature.digest()
        final = os.path.join(self.findings_dir, digest)
        if os.path.exists(final):
            return
        staging = os.path.join(self.findings_dir, ".staging-" + digest)
        os.makedirs(staging, exist_ok=True)
        with open(os.path.join(staging, "payload.pkl"), "wb") as handle:
            handle.write(finding.payload.pickle_bytes)
        meta = _payload_meta(finding.payload, self.config)
        meta.update(
            {
                "kind": finding.kind,
                "outcome_vector": list(finding.signature.outcome_vector),
                "opcode_profile": sorted(finding.signature.opcode_profile),
                "signature_digest": digest,
                "original_payload_b64": base64.b64encode(
                    finding.original_payload.pickle_bytes
                ).decode("ascii"),
            }
        )
        with open(os.path.join(staging, "meta.json"), "wb") as handle:
            handle.write(json.dumps(meta, indent=1).encode("utf-8"))
        records = [dataclasses.asdict(r) for r in finding.records]
        with open(os.path.join(staging, "records.json"), "wb") as handle:
            handle.write(json.dumps(records, indent=1).encode("utf-8"))
        os.rename(staging, final)

    def write_stats(self, stats: CampaignStats):
        _write_atomic(
            os.path.join(self.root, "stats.json"),
            json.dumps(stats.to_dict(), indent=1).encode("utf-8"),
        )

    def write_report(self, findings, stats: CampaignStats):
        lines = [
            "campaign report",
            "payloads executed: %d" % stats.payloads_executed,
            "error discrepancy hits: %d" % stats.error_discrepancy_hits,
            "storage discrepancy hits: %d" % stats.storage_discrepancy_hits,
            "unique signatures: %d" % stats.unique_signatures,
            "",
        ]
        for finding in findings:
            sig = finding.signature
            lines.append("finding %s [%s]" % (sig.digest(), finding.kind))
            lines.append("  vector: %s" % (", ".join(sig.outcome_vector),))
            lines.append("  opcodes: %s" % (", ".join(sorted(sig.opcode_profile)),))
            lines.append("  payload: %r" % (finding.payload.pickle_bytes,))
            for record in finding.records:
                detail = record.error_label or ""
                lines.append(
                    "    %-22s %-5s %s" % (record.target, record.outcome, detail)
                )
            if finding.kind == "storage":
                lines.append("  note: storage findings need manual review")
            lines.append("")
        _write_atomic(
            os.path.join(self.root, "report.txt"),
            "\n".join(lines).encode("utf-8"),
        )


# ---------------------------------------------------------------------------
# Workers
# ---------------------------------------------------------------------------


def _worker_loop(config: CampaignConfig, worker_index: int, deadline, emit):
    """Run this worker's share of iterations; report through emit()."""
    harness = Harness(
        config.targets,
        budgets=config.budgets,
        bridge_cmd=config.bridge_cmd,
        buffers_items=config.limits.buffers_item_count,
    )
    executed = 0
    aborted = 0
    target_errors = dict.fromkeys(harness.targets, 0)

    def flush_progress():
        nonlocal executed, aborted, target_errors
        if executed or aborted:
            emit(("progress", executed, aborted, target_errors))
        executed = 0
        aborted = 0
        target_errors = dict.fromkeys(harness.targets, 0)

    try:
        iteration = worker_index
        while True:
            if config.max_iterations is not None and iteration >= config.max_iterations:
                break
            if deadline is not None and time.monotonic() >= deadline:
                break
            payload = generate(
                splitmix64_stream(config.seed, iteration), config.limits
            )
            try:
                records = harness.run(payload)
            except BridgeUnavailable:
                aborted += 1
                iteration += config.workers
                continue
            executed += 1
            for record in records:
                if record.outcome == "error":
                    target_errors[record.target] += 1
            verdict = detect(records)
            if verdict is not None:
                emit(("hit", payload, verdict[0], verdict[1]))
            if (executed + aborted) % _PROGRESS_EVERY == 0:
                flush_progress()
            iteration += config.workers
    finally:
        flush_progress()
        harness.close()
        emit(("done", worker_index))


class _Sink:
    """Single consumer of worker events: counts, dedups, persists."""

    def __init__(self, config: CampaignConfig, corpus: _Corpus):
        self.config = config
        self.corpus = corpus
        self.stats = CampaignStats(
            per_target_errors=dict.fromkeys(
                tuple(t for t in TARGETS if t in set(config.targets)), 0
            )
        )
        self.findings = []
        self._prefilter = set()
        self._signatures = set()
        self._harness = None

    def _minimizer_harness(self) -> Harness:
        # The sink re-executes payloads during minimization on its own
        # session, never on a worker's.
        if self._harness is None:
            self._harness = Harness(
                self.config.targets,
                budgets=self.config.budgets,
                bridge_cmd=self.config.bridge_cmd,
                buffers_items=self.config.limits.buffers_item_count,
            )
        return self._harness

    def close(self):
        if self._harness is not None:
            self._harness.close()
            self._harness = None

    def handle(self, event):
        tag = event[0]
        if tag == "progress":
            _, executed, aborted, target_errors = event
            self.stats.payloads_executed += executed
            self.stats.aborted_payloads += aborted
            for target, count in target_errors.items():
                self.stats.per_target_errors[target] = (
                    self.stats.per_target_errors.get(target, 0) + count
                )
        elif tag == "hit":
            _, payload, kind, vector = event
            self._on_hit(payload, kind, tuple(vector))

    def _on_hit(self, payload: Payload, kind: str, vector: tuple):
        if kind == "error":
            self.stats.error_discrepancy_hits += 1
        else:
            self.stats.storage_discrepancy_hits += 1
        self.corpus.record_raw(payload, kind, vector)

        prefilter_key = (kind, vector, opcode_profile(payload.pickle_bytes))
        if prefilter_key in self._prefilter:
            return
        self._prefilter.add(prefilter_key)

        harness = self._minimizer_harness()

        def oracle(candidate):
            try:
                return detect(harness.run(candidate))
            except BridgeUnavailable:
                return None

        minimized = minimize(payload, oracle=oracle)
        final_verdict = oracle(minimized)
        if final_verdict is None:
            return  # did not reproduce on the sink's session
        try:
            records = harness.run(minimized)
        except BridgeUnavailable:
            return
        finding = make_discrepancy(
            final_verdict[0], final_verdict[1], payload, minimized, records
        )
        if dedup(finding, self._signatures):
            self.stats.unique_signatures += 1
            self.findings.append(finding)
            self.corpus.persist_finding(finding)


# ---------------------------------------------------------------------------
# Campaign driver
# ---------------------------------------------------------------------------


def _probe_bridge(config: CampaignConfig):
    """Fail fast (and loudly) if external targets cannot be served."""
    if not any(t.startswith("ext-") for t in config.targets):
        return
    try:
        harness = Harness(
            config.targets,
            budgets=config.budgets,
            bridge_cmd=config.bridge_cmd,
            buffers_items=config.limits.buffers_item_count,
        )
        harness.close()
    except (BridgeUnavailable, ValueError) as exc:
        raise BridgeSpawnError(str(exc)) from exc


def run_campaign(config: CampaignConfig) -> CampaignStats:
    config.validate()
    try:
        os.makedirs(config.out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output directory not writable: %s" % (exc,)) from exc
    _probe_bridge(config)

    corpus = _Corpus(config.out_dir, config)
    sink = _Sink(config, corpus)
    started = time.monotonic()
    deadline = started + config.duration_s if config.duration_s is not None else None
    last_stats_write = started

    def maybe_write_stats():
        nonlocal last_stats_write
        now = time.monotonic()
        if now - last_stats_write >= _STATS_INTERVAL_S:
            sink.stats.elapsed_s = now - started
            corpus.write_stats(sink.stats)
            last_stats_write = now

    try:
        if config.workers == 1:
            def emit(event):
                if event[0] != "done":
                    sink.handle(event)
                maybe_write_stats()

            _worker_loop(config, 0, deadline, emit)
        else:
            queue = multiprocessing.Queue()
            procs = [
                multiprocessing.Process(
                    target=_worker_loop,
                    args=(config, w, deadline, queue.put),
                    daemon=True,
                )
                for w in range(config.workers)
            ]
            for proc in procs:
                proc.start()
            remaining = len(procs)
            while remaining:
                try:
                    event = queue.get(timeout=1.0)
                except Exception:
                    if not any(p.is_alive() for p in procs):
                        break
                    maybe_write_stats()
                    continue
                if event[0] == "done":
                    remaining -= 1
                else:
                    sink.handle(event)
                maybe_write_stats()
            for proc in procs:
                proc.join(timeout=10)
    finally:
        sink.close()
        sink.stats.elapsed_s = time.monotonic() - started
        corpus.write_stats(sink.stats)
        corpus.write_report(sink.findings, sink.stats)
    return sink.stats


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def _load_corpus_payload(path: str) -> Payload:
    with open(path, "rb") as handle:
        blob = handle.read()
    meta_path = os.path.join(os.path.dirname(path) or ".", "meta.json")
    encoding, buffers_choice, seed = "ascii", 0, 0
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as handle:
            meta = json.load(handle)
        encoding = meta.get("encoding", encoding)
        buffers_choice = meta.get("buffers_choice", buffers_choice)
        seed = meta.get("seed", seed)
    return Payload(
        pickle_bytes=blob, encoding=encoding, buffers_choice=buffers_choice, seed=seed
    )


def replay(
    path: str,
    targets,
    budgets: Budgets | None = None,
    bridge_cmd: str | None = None,
    buffers_items: int = 3,
    out=sys.stdout,
) -> int:
    """Run one corpus payload and print what every target thought.

    Exit status: 0 no discrepancy, 1 discrepancy, 2 usage or IO error.
    """
    try:
        payload = _load_corpus_payload(path)
    except OSError as exc:
        print("cannot read payload: %s" % (exc,), file=out)
        return 2
    try:
        harness = Harness(
            targets,
            budgets=budgets,
            bridge_cmd=bridge_cmd,
            buffers_items=buffers_items,
        )
    except (ValueError, BridgeUnavailable) as exc:
        print("cannot run: %s" % (exc,), file=out)
        return 2
    try:
        records = harness.run(payload)
    except BridgeUnavailable as exc:
        print("bridge failed: %s" % (exc,), file=out)
        return 2
    finally:
        harness.close()

    print("payload: %r" % (payload.pickle_bytes,), file=out)
    print(
        "encoding: %s  buffers_choice: %d  seed: %d"
        % (payload.encoding, payload.buffers_choice, payload.seed),
        file=out,
    )
    for record in records:
        line = "%-22s %-5s" % (record.target, record.outcome)
        if record.error_label:
            line += "  label=%s" % record.error_label
        if record.error_detail:
            line += "  detail=%s" % record.error_detail
        print(line, file=out)
        if record.result_repr is not None:
            print("    result: %s" % (record.result_repr,), file=out)
        if record.state:
            for name in ("stack", "metastack", "memo"):
                if name in record.state:
                    print("    %s: %s" % (name, record.state[name]), file=out)
    verdict = detect(records)
    if verdict is None:
        print("verdict: no discrepancy", file=out)
        return 0
    print("verdict: %s discrepancy, vector %s" % (verdict[0], list(verdict[1])), file=out)
    return 1


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--targets",
        default="internal-pvm,internal-disasm",
        help="comma-separated target ids (%s)" % (",".join(TARGETS),),
    )
    parser.add_argument("--budget-ms", type=int, default=2000,
                        help="per-target wall clock budget in milliseconds")
    parser.add_argument("--budget-mem-mib", type=int, default=512,
                        help="per-target memory budget in MiB")
    parser.add_argument("--bridge-cmd", default=None,
                        help="path to the bridge executable for ext-* targets")
    parser.add_argument("--buffers-items", type=int, default=3,
                        help="item count for the out-of-band buffer menus")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picklediff",
        description="differential fuzzer for pickle deserializers and disassemblers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a fuzzing campaign")
    stop = run_p.add_mutually_exclusive_group(required=True)
    stop.add_argument("--duration", type=float, metavar="SECONDS",
                      help="wall clock campaign length")
    stop.add_argument("--iterations", type=int, metavar="N",
                      help="exact iteration count (reproducible)")
    run_p.add_argument("--seed", type=int, default=0, help="64-bit campaign seed")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--max-opcodes", type=int, default=None)
    run_p.add_argument("--min-opcodes", type=int, default=None)
    run_p.add_argument("--max-ascii-digits", type=int, default=None)
    run_p.add_argument("--max-bytes-len", type=int, default=None)
    run_p.add_argument("--put-max", type=int, default=None)
    run_p.add_argument("--long-binput-max", type=int, default=None)
    run_p.add_argument("--relaxed", action="store_true",
                       help="start from the relaxed limit set")
    run_p.add_argument("--out", required=True, metavar="DIR")
    _add_common_flags(run_p)

    replay_p = sub.add_parser("replay", help="re-run one corpus payload")
    replay_p.add_argument("payload", help="path to a payload file (raw pickle bytes)")
    _add_common_flags(replay_p)
    return parser


def _limits_from_args(args) -> GenLimits:
    limits = relaxed_limits() if args.relaxed else GenLimits()
    overrides = {
        "max_opcodes": args.max_opcodes,
        "min_opcodes": args.min_opcodes,
        "max_ascii_digits": args.max_ascii_digits,
        "max_bytes_len": args.max_bytes_len,
        "put_index_max": args.put_max,
        "long_binput_index_max": args.long_binput_max,
        "buffers_item_count": args.buffers_items,
    }
    present = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(limits, **present)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    targets = tuple(t.strip() for t in args.targets.split(",") if t.strip())
    budgets = Budgets(
        wall_clock_s=args.budget_ms / 1000.0, memory_mib=args.budget_mem_mib
    )

    if args.command == "replay":
        return replay(
            args.payload,
            targets,
            budgets=budgets,
            bridge_cmd=args.bridge_cmd,
            buffers_items=args.buffers_items,
        )

    try:
        limits = _limits_from_args(args)
    except ValueError as exc:
        print("bad limits: %s" % (exc,), file=sys.stderr)
        return 2
    config = CampaignConfig(
        seed=args.seed,
        targets=targets,
        out_dir=args.out,
        duration_s=args.duration,
        max_iterations=args.iterations,
        workers=args.workers,
        limits=limits,
        budgets=budgets,
        bridge_cmd=args.bridge_cmd,
    )
    try:
        stats = run_campaign(config)
    except (ConfigError, BridgeSpawnError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(
        "executed %d payloads in %.1fs (%.0f/s): %d error hits, %d storage hits, "
        "%d unique signatures"
        % (
            stats.payloads_executed,
            stats.elapsed_s,
            stats.throughput,
            stats.error_discrepancy_hits,
            stats.storage_discrepancy_hits,
            stats.unique_signatures,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
