import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from decompeval import compilecheck
from decompeval.binpipe import ToolchainConfig
from decompeval.compilecheck import (CompileOutcome, attempt_schedule, compile_at_k, compile_check,
                                     wrap_candidate)
from decompeval.stats import wilson_interval

from .conftest import FAKE_BIN, FIXTURES

SUITE = FIXTURES / "compile_suite"
EXPECTED = json.loads((SUITE / "expected.json").read_text())
VALID = "int add(int a,int b)=>a+b;"
INVALID = "int add(int a,int b)=>a+;"


def test_schedule_beams():
    assert [p.beam for p in attempt_schedule(5)] == [1, 1, 1, 2, 2]
    assert [p.beam for p in attempt_schedule(1)] == [1]
    assert [p.beam for p in attempt_schedule(7)] == [1, 1, 1, 2, 2, 2, 2]
    assert all((p.temperature, p.top_p) == (0.2, 0.99) for p in attempt_schedule(5))
    for bad in (0, -1):
        with pytest.raises(ValueError):
            attempt_schedule(bad)


def test_wrap_never_edits_candidate():
    assert wrap_candidate(VALID) == VALID + "\n\nvoid main() {}\n"
    with_main = "void main() { print(1); }\n"
    assert wrap_candidate(with_main) == with_main


@pytest.mark.parametrize("criterion", ["syntax", "aot", "analyze"])
def test_single_snippets(criterion, fake_toolchain):
    ok = compile_check(VALID, fake_toolchain, criterion)
    bad = compile_check(INVALID, fake_toolchain, criterion)
    assert ok.success and ok.wall_time >= 0
    assert not bad.success and bad.diagnostics


@pytest.mark.parametrize("criterion", ["syntax", "aot"])
def test_crafted_suite_split(criterion, fake_toolchain):
    results = {p.name: compile_check(p.read_text(), fake_toolchain, criterion).success
               for p in sorted(SUITE.glob("*.dart"))}
    assert results == EXPECTED
    assert sum(results.values()) == 12


@pytest.mark.toolchain
def test_crafted_suite_real_dart(dart_sdk, tmp_path):
    cfg = ToolchainConfig.from_mapping({"dart": dart_sdk, "scratch_root": str(tmp_path)}, env={})
    results = {p.name: compile_check(p.read_text(), cfg, "aot").success for p in sorted(SUITE.glob("*.dart"))}
    assert results == EXPECTED


def test_timeout_is_failure_not_abort(tmp_path, monkeypatch):
    monkeypatch.setenv("FAKE_TOOL_SLEEP", "5")
    cfg = ToolchainConfig.from_mapping({"dart": str(FAKE_BIN / "dart"), "timeout": 0.5,
                                        "scratch_root": str(tmp_path)}, env={})
    out = compile_check(VALID, cfg, "aot")
    assert not out.success and out.diagnostics.startswith("timeout")


def test_unknown_criterion(offline_toolchain):
    with pytest.raises(ValueError):
        compile_check(VALID, offline_toolchain, "jit")


def _items(successes, n):
    return [(f"item{i:02d}", [VALID] if i < successes else [INVALID] * 5) for i in range(n)]


@pytest.mark.parametrize("s,n,lo,hi", [(27, 34, 63.2, 89.7), (22, 34, 47.9, 78.5)])
def test_rates_and_wilson(s, n, lo, hi, offline_toolchain):
    res = compile_at_k(_items(s, n), offline_toolchain, 5, criterion="syntax")
    assert (res.successes, res.n) == (s, n)
    assert res.rate == s / n
    assert res.interval == wilson_interval(s, n)
    assert abs(100 * res.interval.lower - lo) <= 0.1 and abs(100 * res.interval.upper - hi) <= 0.1


def test_all_identical_valid(offline_toolchain):
    res = compile_at_k([(f"i{i}", [VALID] * 5) for i in range(6)], offline_toolchain, 5, criterion="syntax")
    assert res.rate == 1.0
    assert all(it.first_success_attempt == 0 for it in res.per_item)


def test_zero_hypotheses_is_failure(offline_toolchain):
    res = compile_at_k([("empty", [])], offline_toolchain, 5, criterion="syntax")
    assert res.successes == 0
    assert "no hypotheses" in res.per_item[0].outcomes[0].diagnostics


def test_short_circuit_and_memo(offline_toolchain, monkeypatch):
    calls = []
    real = compilecheck.compile_check

    def counting(code, cfg, criterion="aot", tag=""):
        calls.append(code)
        return real(code, cfg, criterion, tag)

    monkeypatch.setattr(compilecheck, "compile_check", counting)
    res = compile_at_k([("a", [INVALID, INVALID, VALID, VALID, INVALID])], offline_toolchain, 5,
                       criterion="syntax")
    assert res.per_item[0].first_success_attempt == 2
    assert calls == [INVALID, VALID]  # duplicate compiled once, nothing after the first success
    assert res.per_item[0].outcomes[3] is None


def test_surplus_hypotheses_ignored(offline_toolchain):
    res = compile_at_k([("a", [INVALID, VALID])], offline_toolchain, 1, criterion="syntax")
    assert res.successes == 0


def test_compile_at_1_view(offline_toolchain):
    items = [("a", [VALID]), ("b", [INVALID, VALID]), ("c", [INVALID] * 5)]
    res = compile_at_k(items, offline_toolchain, 5, criterion="syntax")
    one = res.at(1)
    assert (res.successes, one.successes) == (2, 1)
    assert one.interval == wilson_interval(1, 3)
    assert res.rate >= one.rate


hyp_lists = st.lists(st.lists(st.sampled_from([VALID, INVALID]), min_size=0, max_size=5),
                     min_size=1, max_size=8)


@settings(max_examples=30, deadline=None)
@given(hyp_lists)
def test_short_circuit_agrees_with_full(lists):
    offline_toolchain = ToolchainConfig(dart_compiler=None, swift_compiler=None)
    items = [(f"i{j}", h) for j, h in enumerate(lists)]
    fast = compile_at_k(items, offline_toolchain, 5, criterion="syntax")
    full = compile_at_k(items, offline_toolchain, 5, criterion="syntax", short_circuit=False)
    assert fast.successes == full.successes
    assert [i.first_success_attempt for i in fast.per_item] == [i.first_success_attempt for i in full.per_item]
    assert fast.successes >= fast.at(1).successes


def test_order_and_jobs_independent(fake_toolchain):
    items = [(p.stem, [p.read_text()]) for p in sorted(SUITE.glob("*.dart"))]
    base = compile_at_k(items, fake_toolchain, 1, criterion="aot", jobs=1)
    shuffled = items[:]
    random.Random(3).shuffle(shuffled)
    other = compile_at_k(shuffled, fake_toolchain, 1, criterion="aot", jobs=4)
    assert base.successes == other.successes == 12
    by_id = {i.item_id: i.success for i in other.per_item}
    assert {i.item_id: i.success for i in base.per_item} == by_id
    assert [i.item_id for i in other.per_item] == sorted(i for i, _ in items)


def test_outcome_dict():
    assert CompileOutcome(True).to_dict() == {"success": True, "diagnostics": "", "wall_time": 0.0}
