import dataclasses
import json
import random

import pytest
from hypothesis import given, strategies as st

from decompeval.corpus import (Corpus, CorpusError, FunctionRecord, dump_corpus, load_corpus,
                               parse_corpus, save_corpus, summarize_composition, validate_record)


def rec(**kw):
    base = dict(id="r1", language="dart", source="int f() => 1;\n", assembly="\tret\n",
                provenance="natural", origin="t", optimization="aot-default", reasoning=None,
                split="train")
    base.update(kw)
    return FunctionRecord(**base)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    c = load_corpus(p)
    assert len(c) == 0 and dict(c.manifest) == {}
    assert dump_corpus(c) == ""


def test_single_record(tmp_path):
    p = tmp_path / "one.jsonl"
    p.write_text(rec().to_json() + "\n")
    assert len(load_corpus(p)) == 1


def test_mini_corpus_round_trip(fixtures, tmp_path):
    src = fixtures / "mini_corpus.jsonl"
    c = load_corpus(src)
    assert len(c) == 12
    out = tmp_path / "again.jsonl"
    save_corpus(c, out)
    assert out.read_bytes() == src.read_bytes()
    assert [r.id for r in load_corpus(out)] == [r.id for r in c]


def test_valid_record_has_no_violations():
    assert validate_record(rec()) == []
    assert validate_record(rec(language="swift", optimization="O0")) == []


def test_dart_at_O0_is_one_violation():
    problems = validate_record(rec(optimization="O0"))
    assert len(problems) == 1 and problems[0].startswith("language/optimization")


def test_natural_with_reasoning_is_one_violation():
    problems = validate_record(rec(reasoning="thinking"))
    assert len(problems) == 1 and problems[0].startswith("reasoning")
    assert validate_record(rec(provenance="synthetic", reasoning="thinking")) == []


MUTATIONS = {
    "source": lambda r: dataclasses.replace(r, source=""),
    "assembly": lambda r: dataclasses.replace(r, assembly=""),
    "language": lambda r: dataclasses.replace(r, language="kotlin"),
    "provenance": lambda r: dataclasses.replace(r, provenance="scraped"),
    "split": lambda r: dataclasses.replace(r, split="dev"),
    "optimization": lambda r: dataclasses.replace(r, optimization="O2"),
    "language/optimization": lambda r: dataclasses.replace(r, language="swift"),
    "reasoning": lambda r: dataclasses.replace(r, reasoning="trace"),
    "id": lambda r: dataclasses.replace(r, id=""),
}


@pytest.mark.parametrize("name", sorted(MUTATIONS))
def test_each_mutation_is_caught(name):
    problems = validate_record(MUTATIONS[name](rec()))
    assert problems, name


@given(st.sets(st.sampled_from(sorted(MUTATIONS)), max_size=4))
def test_validator_empty_iff_unmutated(names):
    r = rec()
    for name in sorted(names):
        r = MUTATIONS[name](r)
    assert (validate_record(r) == []) == (not names)


def test_unknown_field_names_line_and_field():
    obj = json.loads(rec().to_json())
    obj["extra"] = 1
    with pytest.raises(CorpusError, match=r"line 1: unknown field 'extra'"):
        parse_corpus([json.dumps(obj)])


def test_missing_field_names_line():
    obj = json.loads(rec().to_json())
    del obj["origin"]
    with pytest.raises(CorpusError, match=r"line 2: missing field 'origin'"):
        parse_corpus(["", json.dumps(obj)])


def test_duplicate_ids_name_both_lines():
    line = rec().to_json()
    with pytest.raises(CorpusError, match=r"lines 1 and 3"):
        parse_corpus([line, rec(id="r2").to_json(), line])


def test_invalid_record_rejected_on_load():
    with pytest.raises(CorpusError, match="line 1"):
        parse_corpus([rec(optimization="O0").to_json()])


def test_manifest_must_agree():
    good = json.dumps({"type": "manifest", "counts": {"dart/natural/train": 1}})
    assert len(parse_corpus([good, rec().to_json()])) == 1
    bad = json.dumps({"type": "manifest", "counts": {"dart/natural/train": 2}})
    with pytest.raises(CorpusError, match="declared 2, found 1"):
        parse_corpus([bad, rec().to_json()])
    with pytest.raises(CorpusError, match="first line"):
        parse_corpus([rec().to_json(), good])


def test_composition_dart_only(fixtures):
    s = summarize_composition(load_corpus(fixtures / "composition" / "dart_only.jsonl"))
    assert s.total == 1194
    assert s.count(provenance="natural") == 246
    assert s.count(provenance="synthetic") == 948
    assert s.count(language="swift") == 0


def test_composition_dart_swift(fixtures):
    s = summarize_composition(load_corpus(fixtures / "composition" / "dart_swift.jsonl"))
    assert s.total == 1000
    assert s.count(language="dart") == 246
    assert s.count(language="swift") == 754


def test_composition_test_sets(fixtures):
    s = summarize_composition(load_corpus(fixtures / "composition" / "test_sets.jsonl"))
    assert s.split_totals == {"test": 73, "test-natural": 34}
    assert s.total == sum(s.counts.values())


def test_composition_permutation_invariant(fixtures):
    records = list(load_corpus(fixtures / "mini_corpus.jsonl").records)
    shuffled = records[:]
    random.Random(7).shuffle(shuffled)
    assert summarize_composition(records) == summarize_composition(Corpus.from_records(shuffled))


def test_corpus_lookup(fixtures):
    c = load_corpus(fixtures / "mini_corpus.jsonl")
    first = c.records[0]
    assert c.get(first.id) is first
    assert all(r.split == "train" for r in c.by_split("train"))
    with pytest.raises(KeyError):
        c.get("nope")
