"""Pickle virtual machine: canonical rendering, import stubs, and
differential agreement with an instrumented copy of the stdlib's pure
deserializer."""

import io
import json
import pickle
import resource
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picklediff.generator import build_buffers, generate
from picklediff.pvm import (
    DepthLimitError,
    ERROR_LABELS,
    Machine,
    MachineState,
    PersistentId,
    StubFunction,
    canonical,
    canonical_state,
    fnv1a64,
    load,
    resolve_import,
    scrub_addresses,
)

DATA_DIR = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# Reference engine: the stdlib pure deserializer with our import stubs
# and persistent-id hook patched in, so both sides live in the same
# deterministic environment.
# ---------------------------------------------------------------------------


class _RefUnpickler(pickle._Unpickler):
    def find_class(self, module, name):
        return resolve_import(module, name)

    def persistent_load(self, pid):
        return PersistentId(pid)


def _ref_run(data, encoding="ascii", buffers=None):
    up = _RefUnpickler(io.BytesIO(data), encoding=encoding, buffers=buffers)
    try:
        value = up.load()
        outcome = "ok"
    except (MemoryError, RecursionError):
        return None
    except Exception:
        value, outcome = None, "error"
    state = MachineState(
        list(getattr(up, "stack", []) or []),
        list(getattr(up, "metastack", []) or []),
        dict(getattr(up, "memo", {}) or {}),
    )
    return outcome, value, state


def _my_run(data, encoding="ascii", buffers=None):
    machine = Machine(data, encoding=encoding, buffers=buffers)
    try:
        res = machine.load()
    except (MemoryError, RecursionError):
        return None
    return res.outcome, res.value, MachineState(
        machine.stack, machine.metastack, machine.memo
    )


def _assert_agreement(data, encoding="ascii", buffers_factory=None):
    ref = _ref_run(data, encoding, buffers_factory() if buffers_factory else None)
    mine = _my_run(data, encoding, buffers_factory() if buffers_factory else None)
    if ref is None or mine is None:
        return  # resource blowup on one side: not comparable in-process
    assert ref[0] == mine[0], (data, ref[0], mine[0])
    if ref[0] == "ok":
        try:
            expected_value = canonical(ref[1])
            expected_state = canonical_state(ref[2])
        except DepthLimitError:
            return
        assert canonical(mine[1]) == expected_value, data
        assert canonical_state(mine[2]) == expected_state, data


# ---------------------------------------------------------------------------
# Canonical rendering
# ---------------------------------------------------------------------------


def test_canonical_primitives():
    assert canonical(None) == "None"
    assert canonical(True) == "True"
    assert canonical(1) == "1"
    assert canonical(1.5) == "1.5"
    assert canonical("a") == "'a'"
    assert canonical(b"a") == "b'a'"
    assert canonical(bytearray(b"a")) == "bytearray(b'a')"


def test_canonical_bool_is_not_rendered_as_int():
    assert canonical([True, 1]) == "[True, 1]"


def test_canonical_cycles():
    l = []
    l.append(l)
    assert canonical(l) == "[[...]]"
    d = {}
    d["self"] = d
    assert canonical(d) == "{'self': {...}}"
    t = ([],)
    t[0].append(t)
    assert canonical(t) == "([(...)],)"


def test_canonical_sets_are_order_independent():
    assert canonical({3, 1, 2}) == canonical({2, 3, 1})
    assert canonical(frozenset()) == "frozenset()"
    assert canonical(set()) == "set()"


def test_canonical_singleton_tuple_keeps_trailing_comma():
    assert canonical((1,)) == "(1,)"


def test_scrub_addresses_is_idempotent():
    text = "<object at 0x7f3a12bc9d40> and 0xdead"
    once = scrub_addresses(text)
    assert once == "<object at 0xADDR> and 0xADDR"
    assert scrub_addresses(once) == once


def test_scrub_leaves_short_hex_alone():
    assert scrub_addresses("0xff plus 0x123") == "0xff plus 0x123"


def test_canonical_depth_cap():
    deep = []
    node = deep
    for _ in range(11000):
        nxt = []
        node.append(nxt)
        node = nxt
    with pytest.raises(DepthLimitError):
        canonical(deep)


def test_canonical_state_renders_memo_keys_as_strings():
    state = MachineState([1], [[None]], {0: "x", 7: b"y"})
    rendered = canonical_state(state)
    assert rendered == {
        "stack": ["1"],
        "metastack": [["None"]],
        "memo": {"0": "'x'", "7": "b'y'"},
    }
    json.dumps(rendered)  # must survive JSON transport unchanged


# ---------------------------------------------------------------------------
# Import stubs
# ---------------------------------------------------------------------------


def test_fnv1a64_known_vectors():
    # Published test vectors for the 64-bit FNV-1a parameters.
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_resolve_import_is_deterministic_and_total():
    a = resolve_import("os", "system")
    b = resolve_import("os", "system")
    assert canonical(a) == canonical(b)
    # arbitrary dotted paths never raise
    resolve_import("no.such.module", "NoSuchName")
    resolve_import("", "")


def test_resolve_import_kind_fixture():
    # Frozen with an independent FNV implementation; guards both the
    # hash and the kind selection rule.
    entries = json.loads((DATA_DIR / "stub_kinds.json").read_text())["entries"]
    assert len(entries) >= 20
    for entry in entries:
        key = entry["module"].encode() + b"\x00" + entry["name"].encode()
        assert fnv1a64(key) == int(entry["hash_hex"], 16), entry
        stub = resolve_import(entry["module"], entry["name"])
        rendered = canonical(stub)
        assert rendered.startswith("stub:%s:" % entry["kind"]), entry


def test_stub_function_swallows_any_call():
    fn = StubFunction("m", "f")
    assert fn(1, 2, key="v") is None
    assert canonical(fn) == "stub:function:m.f"


def test_stub_instance_build_applies_dict_state():
    # find a (module, name) pair that resolves to a class
    cls = None
    for i in range(100):
        candidate = resolve_import("mod%d" % i, "Name")
        if isinstance(candidate, type):
            cls = candidate
            break
    assert cls is not None
    obj = cls()
    obj.__dict__["a"] = 1
    assert "stub:instance:" in canonical(obj)


# ---------------------------------------------------------------------------
# Directed machine behavior
# ---------------------------------------------------------------------------


def test_load_simple_values():
    assert load(b"N.").value is None
    assert load(b"I42\n.").value == 42
    assert load(b"I01\n.").value is True
    assert load(b"I00\n.").value is False
    assert load(b"L-7L\n.").value == -7
    assert load(b"F2.5\n.").value == 2.5
    assert load(b"S'abc'\n.").value == "abc"
    assert load(b"\x8c\x03abc.").value == "abc"
    assert load(b"(I1\nI2\nt.").value == (1, 2)


def test_int_line_accepts_base_prefixes():
    # The deserializer parses INT lines with int(s, 0); hex and octal
    # prefixes load fine here even though the static disassembler's
    # decimal codec rejects them.  That asymmetry is the flagship
    # error discrepancy, so pin the machine side of it.
    assert load(b"I0x1337\n.").value == 0x1337
    assert load(b"I0o17\n.").value == 15


def test_load_result_shape_on_error():
    res = load(b"I1,2\n.")
    assert res.outcome == "error"
    assert res.error_label in ERROR_LABELS
    assert res.error_label == "decode-failure"
    assert res.value is None
    assert res.state is not None


def test_load_self_referential_list():
    res = load(b"(lp0\ng0\na.")
    assert res.outcome == "ok"
    assert canonical(res.value) == "[[...]]"
    assert canonical_state(res.state)["memo"]["0"] == "[[...]]"


def test_persistent_ids_are_wrapped():
    assert canonical(load(b"Pabc\n.").value) == "persid:'abc'"
    assert canonical(load(b"S'x'\nQ.").value) == "persid:'x'"


def test_memo_error_labels():
    assert load(b"h\x05.").error_label == "memo-miss"
    assert load(b"]p-1\n.").outcome == "error"
    assert load(b"q\x00.").error_label == "stack-underflow"


def test_proto_range_check():
    assert load(b"\x80\x05N.").outcome == "ok"
    res = load(b"\x80\x06N.")
    assert res.outcome == "error"
    assert res.error_label == "bad-argument"


DIRECTED = [
    b"",
    b".",
    b"N.",
    b"N",
    b"I42\n.",
    b"I0x7\n.",
    b"I01\n.",
    b"I00\n.",
    b"I\n.",
    b"L123L\n.",
    b"L\n.",
    b"L0xffL\n.",
    b"F1.5\n.",
    b"F1,5\n.",
    b"F\n.",
    b"S'abc'\n.",
    b"Sabc\n.",
    b"S'abc\n.",
    b'S"a\'b"\n.',
    b"S'a\\x41b'\n.",
    b"V\\u0041\n.",
    b"Vplain\n.",
    b"U\x03abc.",
    b"U\x03a\xffc.",
    b"T\x03\x00\x00\x00abc.",
    b"T\xff\xff\xff\xffabc.",
    b"X\x03\x00\x00\x00abc.",
    b"X\x02\x00\x00\x00\xc3\xa9.",
    b"X\x01\x00\x00\x00\xff.",
    b"\x8c\x02\xc3\xa9.",
    b"\x8d\x01\x00\x00\x00\x00\x00\x00\x00A.",
    b"B\x02\x00\x00\x00xy.",
    b"C\x01z.",
    b"\x8e\x01\x00\x00\x00\x00\x00\x00\x00z.",
    b"\x96\x02\x00\x00\x00\x00\x00\x00\x00ab.",
    b"K\x41.",
    b"M\x01\x02.",
    b"J\xff\xff\xff\xff.",
    b"\x8a\x01\xff.",
    b"\x8a\x00.",
    b"\x8b\x02\x00\x00\x00\xff\xff.",
    b"G@\x04\x00\x00\x00\x00\x00\x00.",
    b"G@\x04\x00\x00.",
    b"(t.",
    b"(l.",
    b"(d.",
    b"t.",
    b"0.",
    b"(I1\nI2\nI3\nt.",
    b"\x85.",
    b"N\x85.",
    b"NN\x86.",
    b"NNN\x87.",
    b"]N\x85a?",
    b"}S'k'\nI1\ns.",
    b"}(S'a'\nI1\nS'b'\nI2\nu.",
    b"}(S'a'\nI1\nS'b'\nu.",
    b"\x8f(I1\nI2\n\x90.",
    b"(I1\nI2\n\x91.",
    b"\x8f(I1\n[\x90.",
    b"]e.",
    b"]a.",
    b"(lp0\ng0\na.",
    b"]q\x00h\x00e.",
    b"h\x00.",
    b"j\x00\x00\x00\x00.",
    b"]p0\n(g0\ng0\ne.",
    b"]p-1\n.",
    b"]r\xff\xff\xff\xff.",
    b"q\x00.",
    b"cposix\nsystem\n.",
    b"cjson\n\xffbad\n.",
    b"c\n\n.",
    b"\x8c\x02os\x8c\x06system\x93.",
    b"N\x8c\x06system\x93.",
    b"(cposix\nsystem\no.",
    b"(icollections\nOrderedDict\n.",
    b"(iposix\nsystem\nI1\n.",
    b"cposix\nsystem\n)R.",
    b"cposix\nsystem\nNR.",
    b"\x80\x02cmod\nKls\n)\x81.",
    b"\x80\x02cmod\nKls\n\x81.",
    b"\x80\x04cmod\nKls\n)}\x92.",
    b"cmod\nKls\n}b.",
    b"N}b.",
    b"Pabc\n.",
    b"P\xffabc\n.",
    b"S'x'\nQ.",
    b"Q.",
    b"\x82\x01.",
    b"\x82\x00.",
    b"\x83\x01\x00.",
    b"\x84\x01\x00\x00\x00.",
    b"\x80\x04\x95\x03\x00\x00\x00\x00\x00\x00\x00N..",
    b"\x80\x04\x95\x02\x00\x00\x00\x00\x00\x00\x00I12\n.",
    b"\x80\x04\x95\x09\x00\x00\x00\x00\x00\x00\x00\x95\x01\x00\x00\x00\x00\x00\x00\x00N.",
    b"\x80\x04\x95\x0a\x00\x00\x00\x00\x00\x00\x00\x95\x01\x00\x00\x00\x00\x00\x00\x00NN.",
    b"\x95\x03\x00\x00\x00\x00\x00\x00\x00N.",
    b"\x94.",
    b"N\x94\x94.",
    b"N(Nst.",
    b"\x80\x05\x97.",
    b"\x80\x05\x97\x98.",
    b"2.",
    b"1.",
    b"(2.",
    b"(N2.",
    b"(NN2.",
]


@pytest.mark.parametrize("data", DIRECTED, ids=lambda d: d.hex()[:24])
def test_directed_agreement_with_reference(data):
    _assert_agreement(data)


def test_directed_agreement_under_other_encodings():
    for enc in ("ascii", "latin-1", "utf-8", "bytes"):
        for data in (b"U\x03a\xffc.", b"S'\\xff'\n.", b"T\x01\x00\x00\x00\xff."):
            _assert_agreement(data, encoding=enc)


def test_generated_payloads_agree_with_reference():
    for seed in range(400):
        payload = generate(seed)
        _assert_agreement(
            payload.pickle_bytes,
            encoding=payload.encoding,
            buffers_factory=lambda p=payload: build_buffers(
                p.buffers_choice, p.seed, 3
            ),
        )


@settings(max_examples=250, deadline=None)
@given(st.binary(min_size=0, max_size=64))
def test_random_bytes_agree_with_reference(data):
    _assert_agreement(data)


# ---------------------------------------------------------------------------
# Out-of-band buffers
# ---------------------------------------------------------------------------


def test_next_buffer_without_buffers_errors():
    res = load(b"\x80\x05\x97.", buffers_items=3)
    # module-level bytes entry point runs without buffers
    assert Machine(b"\x80\x05\x97.").load().outcome == "error"
    assert res.outcome in ("ok", "error")


def test_buffers_menus_differential():
    payload = b"\x80\x05\x97."
    for choice in range(6):
        _assert_agreement(
            payload,
            buffers_factory=lambda c=choice: build_buffers(c, 99, 3),
        )
    # two draws from the same menu
    _assert_agreement(
        b"\x80\x05\x97\x97\x86.",
        buffers_factory=lambda: build_buffers(2, 7, 3),
    )
    # readonly conversion
    _assert_agreement(
        b"\x80\x05\x97\x98.",
        buffers_factory=lambda: build_buffers(2, 7, 3),
    )


def test_buffer_menu_equivalences():
    assert list(build_buffers(5, 123, 3)) == build_buffers(2, 123, 3)
    assert bytes(build_buffers(3, 123, 3)) == build_buffers(4, 123, 3)
    assert build_buffers(0, 1, 3) is None
    assert build_buffers(1, 1, 3) == []
    with pytest.raises(ValueError):
        build_buffers(6, 1, 3)


def test_buffers_menu_is_function_of_seed_only():
    assert build_buffers(2, 5, 4) == build_buffers(2, 5, 4)
    assert build_buffers(2, 5, 4) != build_buffers(2, 6, 4)


# ---------------------------------------------------------------------------
# Outcome taxonomy
# ---------------------------------------------------------------------------


def test_every_error_gets_a_cataloged_label():
    for seed in range(400):
        payload = generate(seed)
        res = load(payload)
        if res.outcome == "error":
            assert res.error_label in ERROR_LABELS, (seed, res.error_label)
        else:
            assert res.error_label is None


def test_machine_is_single_use_state_visible_after_error():
    machine = Machine(b"I1\nI2\nt")  # truncated: no STOP
    res = machine.load()
    assert res.outcome == "error"
    assert machine.stack  # partial work remains inspectable
