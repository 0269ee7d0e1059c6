"""Evaluation report model plus markdown and CSV rendering.

CodeBLEU means are shown on a 0-100 scale and compiled-only summaries on
0-1, the same dual convention the published tables use. The CSV form is
lossless: every field is stored as JSON, so floats keep full precision.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

from .stats import IntervalEstimate, ScoreSummary, ZTestResult

DASH = "–"  # en dash between interval bounds


@dataclass(frozen=True)
class CodeBleuRow:
    label: str
    summary: ScoreSummary


@dataclass(frozen=True)
class CompileRow:
    label: str
    k: int
    successes: int
    n: int
    rate: float
    interval: IntervalEstimate


@dataclass(frozen=True)
class ZTestRow:
    metric: str
    label_a: str
    label_b: str
    result: ZTestResult


@dataclass(frozen=True)
class CompiledOnlyRow:
    label: str
    summary: ScoreSummary | None  # None: nothing compiled


@dataclass(frozen=True)
class EvaluationReport:
    header: dict = field(default_factory=dict)
    codebleu: tuple[CodeBleuRow, ...] = ()
    compile_at_k: tuple[CompileRow, ...] = ()
    ztests: tuple[ZTestRow, ...] = ()
    compiled_only: tuple[CompiledOnlyRow, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        def interval(x):
            return IntervalEstimate(**x)

        def summary(x):
            if x is None:
                return None
            return ScoreSummary(**{**x, "interval": interval(x["interval"])})

        return cls(
            header=d.get("header", {}),
            codebleu=tuple(CodeBleuRow(r["label"], summary(r["summary"])) for r in d.get("codebleu", ())),
            compile_at_k=tuple(CompileRow(**{**r, "interval": interval(r["interval"])})
                               for r in d.get("compile_at_k", ())),
            ztests=tuple(ZTestRow(r["metric"], r["label_a"], r["label_b"], ZTestResult(**r["result"]))
                         for r in d.get("ztests", ())),
            compiled_only=tuple(CompiledOnlyRow(r["label"], summary(r["summary"]))
                                for r in d.get("compiled_only", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))


# -- markdown ---------------------------------------------------------------

def _table(head: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _pct_cell(row: CompileRow) -> str:
    iv = row.interval
    return f"{100 * row.rate:.1f}% ({100 * iv.lower:.1f}{DASH}{100 * iv.upper:.1f})"


def _markdown(report: EvaluationReport) -> str:
    lines = ["# Evaluation report", ""]
    for key in sorted(report.header):
        lines.append(f"- {key}: {json.dumps(report.header[key], sort_keys=True)}")
    lines.append("")

    lines += ["## CodeBLEU (0-100)", ""]
    rows = []
    for r in report.codebleu:
        s = r.summary
        rows.append([r.label, str(s.n), f"{100 * s.mean:.1f}", f"{100 * s.sd:.1f}",
                     f"{100 * s.interval.lower:.2f}{DASH}{100 * s.interval.upper:.2f}"])
    lines += _table(["Model", "n", "Mean", "SD", "95% CI"], rows) + [""]

    lines += ["## compile@k", ""]
    by_label: dict[str, dict[int, CompileRow]] = {}
    for r in report.compile_at_k:
        by_label.setdefault(r.label, {})[r.k] = r
    ks = sorted({r.k for r in report.compile_at_k}, reverse=True)
    rows = []
    for label, per_k in by_label.items():
        n = next(iter(per_k.values())).n
        rows.append([label, str(n)] + [_pct_cell(per_k[k]) if k in per_k else "" for k in ks])
    lines += _table(["Model", "n"] + [f"compile@k_{k} (95% CI)" for k in ks], rows) + [""]

    if report.ztests:
        lines += ["## Pairwise two-proportion z-tests", ""]
        rows = [[t.metric, t.label_a, t.label_b, f"{t.result.z:.3f}", f"{t.result.p_two_sided:.3f}"]
                for t in report.ztests]
        lines += _table(["Metric", "A", "B", "z", "p (two-sided)"], rows) + [""]

    lines += ["## CodeBLEU on compiled outputs only (0-1)", ""]
    rows = []
    for r in report.compiled_only:
        s = r.summary
        if s is None:
            rows.append([r.label, "0", "no compiled outputs", "", "", ""])
            continue
        rows.append([r.label, str(s.n), f"{s.mean:.4f}", f"{s.sd:.4f}",
                     f"{s.interval.lower:.4f}{DASH}{s.interval.upper:.4f}",
                     f"{s.min:.4f}{DASH}{s.max:.4f}"])
    lines += _table(["Model", "Samples", "Avg.", "SD", "95% CI", "Min-Max"], rows)
    return "\n".join(lines) + "\n"


# -- csv --------------------------------------------------------------------

def _flatten(obj, prefix: str, out: list[tuple[str, str]]) -> None:
    if isinstance(obj, dict) and obj:
        for k in sorted(obj):
            _flatten(obj[k], f"{prefix}.{k}" if prefix else k, out)
    elif isinstance(obj, (list, tuple)) and obj:
        for i, v in enumerate(obj):
            _flatten(v, f"{prefix}[{i}]", out)
    else:
        out.append((prefix, json.dumps(obj, sort_keys=True)))


def _csv(report: EvaluationReport) -> str:
    rows: list[tuple[str, str]] = []
    _flatten(report.to_dict(), "", rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "value"])
    w.writerows(rows)
    return buf.getvalue()


def _assign(root: dict, path: str, value) -> None:
    parts = []
    for seg in path.split("."):
        name, _, rest = seg.partition("[")
        parts.append(name)
        while rest:
            idx, _, rest = rest.partition("]")
            parts.append(int(idx))
            rest = rest[1:] if rest.startswith("[") else rest
    node = root
    for cur, nxt in zip(parts, parts[1:]):
        if isinstance(cur, int):
            while len(node) <= cur:
                node.append(None)
            if node[cur] is None:
                node[cur] = [] if isinstance(nxt, int) else {}
            node = node[cur]
        else:
            node = node.setdefault(cur, [] if isinstance(nxt, int) else {})
    last = parts[-1]
    if isinstance(last, int):
        while len(node) <= last:
            node.append(None)
        node[last] = value
    else:
        node[last] = value


def parse_csv(text: str) -> EvaluationReport:
    """Inverse of the CSV rendering."""
    reader = csv.reader(io.StringIO(text))
    head = next(reader)
    if head != ["path", "value"]:
        raise ValueError("not a report CSV")
    root: dict = {}
    for path, value in reader:
        _assign(root, path, json.loads(value))
    return EvaluationReport.from_dict(root)


def render_report(report: EvaluationReport, fmt: str = "markdown") -> str:
    if fmt == "markdown":
        return _markdown(report)
    if fmt == "csv":
        return _csv(report)
    if fmt == "json":
        return report.to_json() + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
