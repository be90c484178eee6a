"""Acceptance gate: the five shipping criteria, one verdict line each.

Each test prints `[acceptance] <criterion>: PASS|FAIL ...` straight to
the terminal (bypassing capture) so a full `pytest -v` run shows the
five verdicts at a glance.
"""

import json
import time
from pathlib import Path

import pytest

from picklediff.campaign_cli import CampaignConfig, run_campaign
from picklediff.disassembler import disassemble
from picklediff.evaluator import detect, minimize
from picklediff.generator import generate
from picklediff.harness import execute
from picklediff.opcode_model import iter_instructions, read_instruction
from picklediff.pvm import canonical, load

INTERNAL = ("internal-pvm", "internal-disasm")
PUBLISHED_CAMPAIGN_SEED = 5
DATA_DIR = Path(__file__).parent / "data"


def _verdict(capsys, name, ok, detail):
    with capsys.disabled():
        print("\n[acceptance] %s: %s (%s)" % (name, "PASS" if ok else "FAIL", detail))
    assert ok, "%s: %s" % (name, detail)


def _internal_verdict(data: bytes):
    return detect(execute(data, INTERNAL))


# ---------------------------------------------------------------------------
# 1. Regression fixtures
# ---------------------------------------------------------------------------


def test_regression_fixtures(capsys):
    expected = [
        (b"I0x1337\n.", ("error", ("ok", "error"))),
        (b"N].", ("error", ("ok", "error"))),
        (b"]q\x00]q\x00.", ("error", ("ok", "error"))),
        (b"N.", None),
        (b"].", None),
    ]
    started = time.perf_counter()
    failures = []
    for data, want in expected:
        got = _internal_verdict(data)
        if got != want:
            failures.append("%r: wanted %r, got %r" % (data, want, got))
    elapsed = time.perf_counter() - started
    ok = not failures and elapsed < 1.0
    detail = "5 fixtures, %.2fs" % elapsed if ok else "; ".join(failures) or (
        "too slow: %.2fs" % elapsed
    )
    _verdict(capsys, "regression-fixtures", ok, detail)


# ---------------------------------------------------------------------------
# 2. Fuzz rediscovery of the three known quirk classes
# ---------------------------------------------------------------------------


def _classify_finding(finding_dir: Path):
    """Map one campaign finding onto a known quirk class, if any."""
    meta = json.loads((finding_dir / "meta.json").read_text())
    if meta["kind"] != "error":
        return None
    records = json.loads((finding_dir / "records.json").read_text())
    by_target = {r["target"]: r for r in records}
    pvm_rec = by_target.get("internal-pvm")
    dis_rec = by_target.get("internal-disasm")
    if not pvm_rec or not dis_rec:
        return None
    if pvm_rec["outcome"] != "ok" or dis_rec["outcome"] != "error":
        return None
    label = dis_rec["error_label"]
    if label == "stack-not-empty":
        return "stack-not-empty"
    if label == "memo-reuse":
        return "memo-reuse"
    if label == "decode-failure":
        blob = (finding_dir / "payload.pkl").read_bytes()
        result = disassemble(blob)
        if result.error_offset is None:
            return None
        spec, arg, _ = read_instruction(result.error_offset, blob)
        if spec.name in ("INT", "LONG"):
            body = arg.strip().lstrip(b"+-")
            if body[:2].lower() in (b"0x", b"0o", b"0b"):
                return "base-10"
    return None


def test_fuzz_rediscovery(capsys, tmp_path):
    started = time.perf_counter()
    config = CampaignConfig(
        seed=PUBLISHED_CAMPAIGN_SEED,
        targets=INTERNAL,
        out_dir=str(tmp_path / "campaign"),
        max_iterations=2_000_000,
        workers=1,
    )
    stats = run_campaign(config)
    classes = set()
    findings_dir = tmp_path / "campaign" / "findings"
    for digest_dir in findings_dir.iterdir():
        cls = _classify_finding(digest_dir)
        if cls:
            classes.add(cls)
    elapsed = time.perf_counter() - started
    ok = len(classes) >= 2
    detail = (
        "seed %d, %d payloads, %d signatures, classes %s, %.0fs"
        % (
            PUBLISHED_CAMPAIGN_SEED,
            stats.payloads_executed,
            stats.unique_signatures,
            sorted(classes) or "none",
            elapsed,
        )
    )
    _verdict(capsys, "fuzz-rediscovery", ok, detail)


# ---------------------------------------------------------------------------
# 3. PVM oracle equivalence on plain-data pickles
# ---------------------------------------------------------------------------


def test_pvm_oracle_equivalence(capsys):
    started = time.perf_counter()
    doc = json.loads((DATA_DIR / "oracle_fixtures.json").read_text())
    fixtures = doc["fixtures"]
    corpus_text = " ".join(f["expected"] for f in fixtures)
    coverage_ok = (
        len(fixtures) >= 200
        and {f["protocol"] for f in fixtures} == set(range(6))
        and str(2**63) in corpus_text
        and "inf" in corpus_text
        and "nan" in corpus_text
        and "\\xe9" in corpus_text.encode("unicode_escape").decode()
    )
    import base64

    mismatches = 0
    for fixture in fixtures:
        blob = base64.b64decode(fixture["payload_b64"])
        result = load(blob)
        if result.outcome != "ok" or canonical(result.value) != fixture["expected"]:
            mismatches += 1
    elapsed = time.perf_counter() - started
    ok = coverage_ok and mismatches == 0 and elapsed < 10.0
    detail = "%d fixtures, %d mismatches, %.2fs" % (
        len(fixtures),
        mismatches,
        elapsed,
    )
    if not coverage_ok:
        detail += ", fixture coverage incomplete"
    _verdict(capsys, "pvm-oracle-equivalence", ok, detail)


# ---------------------------------------------------------------------------
# 4. Grammar validity of generated payloads
# ---------------------------------------------------------------------------


def test_grammar_validity(capsys):
    started = time.perf_counter()
    framing_errors = 0
    first_run = []
    for seed in range(10_000):
        payload = generate(seed)
        first_run.append(payload.pickle_bytes)
        try:
            instructions = list(iter_instructions(payload.pickle_bytes))
            if instructions[-1].spec.name != "STOP":
                framing_errors += 1
        except Exception:
            framing_errors += 1
    identical = all(
        generate(seed).pickle_bytes == first_run[seed] for seed in range(10_000)
    )
    elapsed = time.perf_counter() - started
    ok = framing_errors == 0 and identical and elapsed < 30.0
    detail = "10000 payloads, %d framing errors, byte-identical rerun: %s, %.1fs" % (
        framing_errors,
        identical,
        elapsed,
    )
    _verdict(capsys, "grammar-validity", ok, detail)


# ---------------------------------------------------------------------------
# 5. Minimizer soundness on fuzz-found discrepancies
# ---------------------------------------------------------------------------


def _is_one_minimal(payload, baseline):
    import dataclasses

    instructions = list(iter_instructions(payload.pickle_bytes))
    pieces = [payload.pickle_bytes[i.offset : i.end] for i in instructions]
    for drop, instruction in enumerate(instructions):
        if instruction.spec.name == "STOP":
            continue
        candidate = b"".join(p for k, p in enumerate(pieces) if k != drop)
        mutated = dataclasses.replace(payload, pickle_bytes=candidate)
        if detect(execute(mutated, INTERNAL)) == baseline:
            return False
    return True


def test_minimizer_soundness(capsys):
    started = time.perf_counter()
    found = 0
    seed = 0
    unsound = []
    not_minimal = []
    while found < 100 and seed < 200_000:
        payload = generate(seed)
        seed += 1
        baseline = detect(execute(payload, INTERNAL))
        if baseline is None:
            continue
        found += 1
        small = minimize(payload, targets=INTERNAL)
        if detect(execute(small, INTERNAL)) != baseline:
            unsound.append(seed - 1)
            continue
        if not _is_one_minimal(small, baseline):
            not_minimal.append(seed - 1)
    elapsed = time.perf_counter() - started
    ok = (
        found == 100
        and not unsound
        and not not_minimal
        and elapsed < 120.0
    )
    detail = "%d findings from %d seeds, %d unsound, %d not 1-minimal, %.0fs" % (
        found,
        seed,
        len(unsound),
        len(not_minimal),
        elapsed,
    )
    _verdict(capsys, "minimizer-soundness", ok, detail)
