"""Parallel corpus of assembly/source function pairs.

On disk a corpus is a ``.jsonl`` file: an optional manifest line
``{"type": "manifest", "counts": {"dart/natural/train": 246, ...}}``
followed by one record object per line with exactly the fields of
:class:`FunctionRecord`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

LANGUAGES = ("dart", "swift")
PROVENANCES = ("natural", "synthetic")
OPTIMIZATIONS = ("aot-default", "O0")
SPLITS = ("train", "test", "test-natural")

# optimization profile each language is compiled with
OPTIMIZATION_FOR = {"dart": "aot-default", "swift": "O0"}

RECORD_FIELDS = ("id", "language", "source", "assembly", "provenance",
                 "origin", "optimization", "reasoning", "split")


class CorpusError(ValueError):
    """Malformed corpus file or inconsistent corpus contents."""


@dataclass(frozen=True)
class FunctionRecord:
    id: str
    language: str
    source: str
    assembly: str
    provenance: str
    origin: str
    optimization: str
    reasoning: str | None
    split: str

    def to_json(self) -> str:
        obj = {name: getattr(self, name) for name in RECORD_FIELDS}
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))

    @property
    def key(self) -> str:
        return composition_key(self.language, self.provenance, self.split)


def composition_key(language: str, provenance: str, split: str) -> str:
    return f"{language}/{provenance}/{split}"


def validate_record(record: FunctionRecord) -> list[str]:
    """Return one description per violated record invariant (empty = valid)."""
    problems = []
    if not isinstance(record.id, str) or not record.id:
        problems.append("id: must be a non-empty string")
    if record.language not in LANGUAGES:
        problems.append(f"language: {record.language!r} not in {LANGUAGES}")
    if record.provenance not in PROVENANCES:
        problems.append(f"provenance: {record.provenance!r} not in {PROVENANCES}")
    if record.optimization not in OPTIMIZATIONS:
        problems.append(f"optimization: {record.optimization!r} not in {OPTIMIZATIONS}")
    if record.split not in SPLITS:
        problems.append(f"split: {record.split!r} not in {SPLITS}")
    if not isinstance(record.origin, str):
        problems.append("origin: must be a string")
    if not isinstance(record.source, str) or not record.source:
        problems.append("source: must be non-empty text")
    if not isinstance(record.assembly, str) or not record.assembly:
        problems.append("assembly: must be non-empty text")
    expected = OPTIMIZATION_FOR.get(record.language)
    if (expected is not None and record.optimization in OPTIMIZATIONS
            and record.optimization != expected):
        problems.append(
            f"language/optimization: {record.language} records must use "
            f"{expected!r}, got {record.optimization!r}")
    if record.reasoning is not None and not isinstance(record.reasoning, str):
        problems.append("reasoning: must be text or null")
    elif record.reasoning and record.provenance != "synthetic":
        problems.append("reasoning: only synthetic records may carry a reasoning trace")
    return problems


@dataclass(frozen=True)
class Corpus:
    records: tuple[FunctionRecord, ...] = ()
    manifest: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "manifest", MappingProxyType(dict(self.manifest)))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_split(self, *splits: str) -> list[FunctionRecord]:
        return [r for r in self.records if r.split in splits]

    def get(self, record_id: str) -> FunctionRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    @classmethod
    def from_records(cls, records: Iterable[FunctionRecord]) -> "Corpus":
        """Build a corpus whose manifest declares the actual counts."""
        records = tuple(records)
        counts = Counter(r.key for r in records)
        return cls(records, dict(sorted(counts.items())))


@dataclass(frozen=True)
class CompositionSummary:
    counts: Mapping[tuple[str, str, str], int]
    split_totals: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.split_totals.values())

    def count(self, language: str | None = None, provenance: str | None = None,
              split: str | None = None) -> int:
        return sum(c for (lang, prov, sp), c in self.counts.items()
                   if (language is None or lang == language)
                   and (provenance is None or prov == provenance)
                   and (split is None or sp == split))


def summarize_composition(corpus: Corpus | Iterable[FunctionRecord]) -> CompositionSummary:
    records = corpus.records if isinstance(corpus, Corpus) else tuple(corpus)
    counts = Counter((r.language, r.provenance, r.split) for r in records)
    totals = Counter()
    for (_, _, split), c in counts.items():
        totals[split] += c
    return CompositionSummary(dict(sorted(counts.items())), dict(sorted(totals.items())))


def _parse_record(obj: dict, lineno: int) -> FunctionRecord:
    keys = set(obj)
    unknown = keys - set(RECORD_FIELDS)
    if unknown:
        raise CorpusError(f"line {lineno}: unknown field {sorted(unknown)[0]!r}")
    for name in RECORD_FIELDS:
        if name not in obj:
            raise CorpusError(f"line {lineno}: missing field {name!r}")
        value = obj[name]
        if name == "reasoning":
            if value is not None and not isinstance(value, str):
                raise CorpusError(f"line {lineno}: field 'reasoning' must be a string or null")
        elif not isinstance(value, str):
            raise CorpusError(f"line {lineno}: field {name!r} must be a string")
    record = FunctionRecord(**{name: obj[name] for name in RECORD_FIELDS})
    problems = validate_record(record)
    if problems:
        field_name = problems[0].split(":", 1)[0]
        raise CorpusError(f"line {lineno}: field {field_name!r}: {problems[0]}")
    return record


def parse_corpus(lines: Iterable[str]) -> Corpus:
    records: list[FunctionRecord] = []
    manifest: dict[str, int] | None = None
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusError(f"line {lineno}: expected an object")
        if obj.get("type") == "manifest":
            if records or manifest is not None:
                raise CorpusError(f"line {lineno}: manifest must be the first line")
            counts = obj.get("counts")
            if not isinstance(counts, dict) or not all(
                    isinstance(v, int) and v >= 0 for v in counts.values()):
                raise CorpusError(f"line {lineno}: field 'counts' must map keys to counts")
            manifest = dict(counts)
            continue
        record = _parse_record(obj, lineno)
        if record.id in seen:
            raise CorpusError(
                f"duplicate id {record.id!r} on lines {seen[record.id]} and {lineno}")
        seen[record.id] = lineno
        records.append(record)

    actual = Counter(r.key for r in records)
    if manifest is None:
        manifest = dict(sorted(actual.items()))
    else:
        declared = {k: v for k, v in manifest.items() if v}
        if declared != dict(actual):
            diffs = sorted(k for k in set(declared) | set(actual)
                           if declared.get(k, 0) != actual.get(k, 0))
            detail = ", ".join(f"{k}: declared {declared.get(k, 0)}, found {actual.get(k, 0)}"
                               for k in diffs)
            raise CorpusError(f"manifest counts disagree with records ({detail})")
    return Corpus(records, manifest)


def load_corpus(path: str | Path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def dump_corpus(corpus: Corpus) -> str:
    if not corpus.records and not corpus.manifest:
        return ""
    counts = dict(sorted(Counter(r.key for r in corpus.records).items()))
    header = json.dumps({"type": "manifest", "counts": counts}, separators=(",", ":"))
    return "".join(line + "\n" for line in [header] + [r.to_json() for r in corpus.records])


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")
