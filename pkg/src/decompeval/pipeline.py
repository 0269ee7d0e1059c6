"""End-to-end evaluation driven by one TOML run config.

Example::

    [run]
    corpus = "corpus.jsonl"
    output_dir = "runs/first"
    k = 5
    jobs = 4
    seed = 0
    criterion = "aot"            # aot | analyze | syntax
    codebleu_splits = ["test"]
    compile_splits = ["test-natural"]
    formats = ["markdown", "csv"]

    [toolchain]
    dart = "dart"
    timeout = 60

    [codebleu]
    weights = [0.25, 0.25, 0.25, 0.25]

    [[models]]
    label = "base"
    url = "http://localhost:8000/v1/chat/completions"
    model = "base-4b"
    api_key_env = "EVAL_API_KEY"

A model entry may give ``hypotheses = "file.jsonl"`` instead of an
endpoint to score pre-recorded generations.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .binpipe import ToolchainConfig
from .compilecheck import CRITERIA, CompileAtKResult, attempt_schedule, compile_at_k
from .corpus import Corpus, load_corpus
from .inference import (DEFAULT_MARKERS, PARITY_POLICY, EndpointConfig, Hypothesis,
                        generate_for_record, read_hypotheses, write_hypotheses)
from .report import (CodeBleuRow, CompiledOnlyRow, CompileRow, EvaluationReport, ZTestRow,
                     render_report)
from .similarity import CodeBleuConfig, codebleu
from .similarity.syntax import ReferenceParseError
from .stats import aggregate_scores, two_proportion_z

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMATS = {"markdown": "report.md", "csv": "report.csv", "json": "report.json"}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Terminal failure, tagged with the stage and item it happened in."""

    def __init__(self, stage: str, item_id: str | None, cause: BaseException):
        where = f" (item {item_id})" if item_id else ""
        super().__init__(f"{stage}{where}: {cause}")
        self.stage = stage
        self.item_id = item_id
        self.cause = cause


@dataclass(frozen=True)
class ModelSpec:
    label: str
    endpoint: EndpointConfig | None = None
    hypotheses: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    corpus: Path
    output_dir: Path
    models: tuple[ModelSpec, ...]
    toolchain: ToolchainConfig = field(default_factory=ToolchainConfig)
    codebleu: CodeBleuConfig = field(default_factory=CodeBleuConfig)
    k: int = 5
    jobs: int = 1
    seed: int = 0
    criterion: str = "aot"
    codebleu_splits: tuple[str, ...] = ("test",)
    compile_splits: tuple[str, ...] = ("test-natural",)
    formats: tuple[str, ...] = ("markdown", "csv", "json")
    prompt_template: Path | None = None
    source_text: str = ""  # the config file as read, for the lock file

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown report formats {bad}")
        if not self.corpus.is_file():
            raise ConfigError(f"corpus not found: {self.corpus}")
        if self.prompt_template is not None and not self.prompt_template.is_file():
            raise ConfigError(f"prompt template not found: {self.prompt_template}")
        if not self.models:
            raise ConfigError("at least one [[models]] entry is required")
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ConfigError("model labels must be unique")
        for m in self.models:
            if m.hypotheses is not None and not m.hypotheses.is_file():
                raise ConfigError(f"{m.label}: hypotheses file not found: {m.hypotheses}")

    @classmethod
    def from_toml(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_mapping(data, base=path.parent, source_text=text, overrides=overrides)

    @classmethod
    def from_mapping(cls, data: dict, base: Path = Path("."), source_text: str = "",
                     overrides: dict | None = None) -> "RunConfig":
        run = dict(data.get("run", {}))
        run.update({k: v for k, v in (overrides or {}).items() if v is not None})

        def rel(p):
            return None if p is None else (base / p).resolve() if not Path(p).is_absolute() else Path(p)

        if "corpus" not in run:
            raise ConfigError("[run] corpus is required")
        models = []
        for i, m in enumerate(data.get("models", [])):
            if "label" not in m:
                raise ConfigError(f"models[{i}]: label is required")
            endpoint = None
            if "url" in m:
                endpoint = EndpointConfig(url=m["url"], model=m.get("model", m["label"]),
                                          api_key_env=m.get("api_key_env"),
                                          timeout=float(m.get("timeout", 120.0)),
                                          max_retries=int(m.get("max_retries", 3)),
                                          backoff=float(m.get("backoff", 1.0)),
                                          rate_per_sec=m.get("rate_per_sec"),
                                          markers=tuple(m.get("markers", DEFAULT_MARKERS)))
            hyps = rel(m.get("hypotheses"))
            if endpoint is None and hyps is None:
                raise ConfigError(f"models[{i}] ({m['label']}): give either url or hypotheses")
            models.append(ModelSpec(m["label"], endpoint, hyps))
        tc = dict(data.get("toolchain", {}))
        if "scratch_root" in tc:
            tc["scratch_root"] = str(rel(tc["scratch_root"]))
        cb = data.get("codebleu", {})
        try:
            toolchain = ToolchainConfig.from_mapping(tc)
            cb_cfg = CodeBleuConfig(weights=tuple(cb.get("weights", (0.25,) * 4)),
                                    max_n=int(cb.get("max_n", 4)),
                                    keyword_weight=float(cb.get("keyword_weight", 5.0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(
            corpus=rel(run["corpus"]),
            output_dir=rel(run.get("output_dir", "decompeval-out")),
            models=tuple(models),
            toolchain=toolchain,
            codebleu=cb_cfg,
            k=int(run.get("k", 5)),
            jobs=int(run.get("jobs", 1)),
            seed=int(run.get("seed", 0)),
            criterion=run.get("criterion", "aot"),
            codebleu_splits=tuple(run.get("codebleu_splits", ("test",))),
            compile_splits=tuple(run.get("compile_splits", ("test-natural",))),
            formats=tuple(run.get("formats", ("markdown", "csv", "json"))),
            prompt_template=rel(run.get("prompt_template")),
            source_text=source_text,
        )

    def lock(self) -> dict:
        """Resolved settings, written next to the report."""
        return {
            "version": __version__,
            "corpus": str(self.corpus),
            "corpus_sha256": hashlib.sha256(self.corpus.read_bytes()).hexdigest(),
            "k": self.k, "jobs": self.jobs, "seed": self.seed, "criterion": self.criterion,
            "codebleu_splits": list(self.codebleu_splits),
            "compile_splits": list(self.compile_splits),
            "codebleu": {"weights": list(self.codebleu.weights), "max_n": self.codebleu.max_n,
                         "keyword_weight": self.codebleu.keyword_weight},
            "toolchain": {"dart_compiler": self.toolchain.dart_compiler,
                          "swift_compiler": self.toolchain.swift_compiler,
                          "disassembler": self.toolchain.disassembler,
                          "timeout": self.toolchain.timeout},
            "models": [{"label": m.label,
                        "url": m.endpoint.url if m.endpoint else None,
                        "model": m.endpoint.model if m.endpoint else None,
                        "hypotheses": str(m.hypotheses) if m.hypotheses else None}
                       for m in self.models],
            "prompt_template": str(self.prompt_template) if self.prompt_template else None,
            "config_text": self.source_text,
        }


def plan_for_run(k: int, seed: int):
    """Attempt policies with per-attempt seeds ``seed + attempt_index``."""
    return [p.with_seed(seed + i) for i, p in enumerate(attempt_schedule(k, PARITY_POLICY))]


def _records_for(corpus: Corpus, splits) -> list:
    return sorted((r for r in corpus.records if r.split in splits), key=lambda r: r.id)


def _collect_hypotheses(cfg: RunConfig, model: ModelSpec, records: list) -> dict[str, list[Hypothesis]]:
    plan = plan_for_run(cfg.k, cfg.seed)
    if model.hypotheses is not None:
        by_item: dict[str, list[Hypothesis]] = {}
        for h in read_hypotheses(model.hypotheses):
            by_item.setdefault(h.item_id, []).append(h)
        return {r.id: sorted(by_item.get(r.id, []), key=lambda h: h.attempt_index)[:cfg.k]
                for r in records}
    template = cfg.prompt_template.read_text(encoding="utf-8") if cfg.prompt_template else None

    def one(record):
        try:
            return generate_for_record(record, plan, model.endpoint, template)
        except Exception as exc:
            raise StageError("generate", record.id, exc) from exc

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(one, records))
    return {r.id: hs for r, hs in zip(records, results)}


def _score(cand: str, record, cb: CodeBleuConfig) -> float:
    cfg = CodeBleuConfig(cb.weights, cb.max_n, cb.keyword_weight, record.language)
    return codebleu(cand, record.source, cfg).combined


def _outcome_lines(result: CompileAtKResult, hyps: dict[str, list[Hypothesis]]) -> list[str]:
    lines = []
    for it in result.per_item:
        for i, out in enumerate(it.outcomes):
            row = {"item_id": it.item_id, "attempt_index": i,
                   "evaluated": out is not None,
                   "success": None if out is None else out.success,
                   "diagnostics": None if out is None else out.diagnostics,
                   "wall_time": None if out is None else out.wall_time,
                   "first_success_attempt": it.first_success_attempt}
            lines.append(json.dumps(row, sort_keys=True))
    return lines


def run_evaluation(cfg: RunConfig) -> EvaluationReport:
    """Generate, score, and write every artifact under ``cfg.output_dir``."""
    try:
        corpus = load_corpus(cfg.corpus)
    except Exception as exc:
        raise StageError("corpus", None, exc) from exc
    cb_records = _records_for(corpus, cfg.codebleu_splits)
    cc_records = [r for r in _records_for(corpus, cfg.compile_splits) if r.language == "dart"]
    all_records = sorted({r.id: r for r in cb_records + cc_records}.values(), key=lambda r: r.id)
    if not cb_records and not cc_records:
        raise StageError("corpus", None, ValueError("no records in the selected splits"))

    out = cfg.output_dir
    (out / "hypotheses").mkdir(parents=True, exist_ok=True)
    (out / "outcomes").mkdir(parents=True, exist_ok=True)

    cb_rows, cc_rows, co_rows = [], [], []
    notes: dict[str, list[str]] = {}
    tallies: dict[str, dict[int, CompileAtKResult]] = {}
    for model in cfg.models:
        hyps = _collect_hypotheses(cfg, model, all_records)
        write_hypotheses([h for r in all_records for h in hyps[r.id]],
                         out / "hypotheses" / f"{model.label}.jsonl")
        model_notes = notes.setdefault(model.label, [])

        if cb_records:
            scores = []
            for r in cb_records:
                first = hyps[r.id][0].code if hyps[r.id] else ""
                try:
                    scores.append(_score(first, r, cfg.codebleu))
                except ReferenceParseError as exc:
                    model_notes.append(f"{r.id}: skipped in CodeBLEU, {exc}")
            if scores:
                cb_rows.append(CodeBleuRow(model.label, aggregate_scores(scores)))

        if cc_records:
            items = [(r.id, [h.code for h in hyps[r.id]]) for r in cc_records]
            try:
                res = compile_at_k(items, cfg.toolchain, cfg.k, criterion=cfg.criterion, jobs=cfg.jobs)
            except Exception as exc:
                raise StageError("compile", None, exc) from exc
            res1 = res.at(1)
            assert res.successes >= res1.successes, "compile@k fell below compile@1"
            (out / "outcomes" / f"{model.label}.jsonl").write_text(
                "\n".join(_outcome_lines(res, hyps)) + "\n", encoding="utf-8")
            tallies[model.label] = {cfg.k: res, 1: res1}
            for kk in sorted({cfg.k, 1}, reverse=True):
                t = tallies[model.label][kk]
                cc_rows.append(CompileRow(model.label, kk, t.successes, t.n, t.rate, t.interval))
            by_id = {r.id: r for r in cc_records}
            compiled = []
            for it in res.per_item:
                if it.first_success_attempt is not None:
                    code = hyps[it.item_id][it.first_success_attempt].code
                    try:
                        compiled.append(_score(code, by_id[it.item_id], cfg.codebleu))
                    except ReferenceParseError as exc:
                        model_notes.append(f"{it.item_id}: skipped in compiled-only, {exc}")
            co_rows.append(CompiledOnlyRow(model.label, aggregate_scores(compiled) if compiled else None))

    ztests = []
    for a, b in itertools.combinations([m.label for m in cfg.models if m.label in tallies], 2):
        for kk in sorted({cfg.k, 1}, reverse=True):
            ta, tb = tallies[a][kk], tallies[b][kk]
            ztests.append(ZTestRow(f"compile@k_{kk}", a, b,
                                   two_proportion_z(ta.successes, ta.n, tb.successes, tb.n)))

    plan = plan_for_run(cfg.k, cfg.seed)
    header = {
        "decompeval_version": __version__,
        "k": cfg.k,
        "criterion": cfg.criterion,
        "codebleu_hypothesis": "attempt 0 (first beam-1 attempt); declared choice",
        "codebleu_splits": list(cfg.codebleu_splits),
        "compile_splits": list(cfg.compile_splits),
        "attempt_policies": [p.to_dict() for p in plan],
        "seeds": [p.seed for p in plan],
        "notes": {k: v for k, v in notes.items() if v},
    }
    report = EvaluationReport(header, tuple(cb_rows), tuple(cc_rows), tuple(ztests), tuple(co_rows))
    for fmt in cfg.formats:
        (out / FORMATS[fmt]).write_text(render_report(report, fmt), encoding="utf-8")
    (out / "run-config.lock").write_text(json.dumps(cfg.lock(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return report
