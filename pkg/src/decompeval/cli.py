"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 external tool error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .binpipe import PipelineError, ToolchainConfig, ToolchainError, build_pair
from .compilecheck import CRITERIA, compile_at_k
from .corpus import Corpus, CorpusError, load_corpus, save_corpus, summarize_composition, validate_record
from .inference import (EndpointConfig, InferenceError, generate_for_record, read_hypotheses,
                        write_hypotheses)
from .pipeline import ConfigError, RunConfig, StageError, plan_for_run, run_evaluation
from .report import EvaluationReport, render_report
from .similarity import CodeBleuConfig, codebleu
from .stats import aggregate_scores, normal_mean_ci, two_proportion_z, wilson_interval

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TOOL = 0, 1, 2, 3

log = logging.getLogger("decompeval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _toolchain(args) -> ToolchainConfig:
    data = {}
    if getattr(args, "dart", None):
        data["dart"] = args.dart
    if getattr(args, "timeout_secs", None):
        data["timeout"] = args.timeout_secs
    if getattr(args, "scratch", None):
        data["scratch_root"] = args.scratch
    return ToolchainConfig.from_mapping(data)


# -- corpus -----------------------------------------------------------------

def cmd_corpus_build(args) -> int:
    """Build records from a JSONL list of {source|source_path, symbol, language, provenance, ...}."""
    specs = []
    with open(args.functions, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    specs.append((n, json.loads(line)))
                except ValueError as exc:
                    raise CorpusError(f"{args.functions}:{n}: {exc}") from None
    cfg = ToolchainConfig.from_mapping({"timeout": args.timeout_secs} if args.timeout_secs else {})
    base = Path(args.functions).parent

    def one(item):
        n, spec = item
        source = spec.get("source")
        if source is None:
            source = (base / spec["source_path"]).read_text(encoding="utf-8")
        try:
            return build_pair(source, spec["symbol"], spec["language"], spec["provenance"], cfg,
                              record_id_=spec.get("id"), origin=spec.get("origin", ""),
                              split=spec.get("split", "train"), reasoning=spec.get("reasoning"))
        except PipelineError as exc:
            return f"line {n} ({spec.get('symbol')}): {exc}"

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, specs))
    records = [r for r in results if not isinstance(r, str)]
    for failure in (r for r in results if isinstance(r, str)):
        print(f"failed: {failure}", file=sys.stderr)
    save_corpus(Corpus.from_records(records), args.out)
    print(f"wrote {len(records)} records to {args.out} ({len(results) - len(records)} failed)")
    return EXIT_OK if len(records) == len(results) else EXIT_TOOL


def cmd_corpus_validate(args) -> int:
    corpus = load_corpus(args.corpus)
    bad = 0
    for r in corpus.records:
        for problem in validate_record(r):
            print(f"{r.id}: {problem}")
            bad += 1
    print(f"{len(corpus)} records, {bad} problems")
    return EXIT_OK if bad == 0 else EXIT_DATA


def cmd_corpus_stats(args) -> int:
    summary = summarize_composition(load_corpus(args.corpus))
    for (lang, prov, split), n in sorted(summary.counts.items()):
        print(f"{lang}\t{prov}\t{split}\t{n}")
    for split, n in sorted(summary.split_totals.items()):
        print(f"total\t{split}\t{n}")
    print(f"total\t{summary.total}")
    return EXIT_OK


# -- generation and scoring -------------------------------------------------

def cmd_gen(args) -> int:
    corpus = load_corpus(args.corpus)
    records = sorted(corpus.by_split(*args.split), key=lambda r: r.id)
    endpoint = EndpointConfig(args.url, args.model, api_key_env=args.api_key_env)
    plan = plan_for_run(args.k, args.seed)
    template = Path(args.template).read_text(encoding="utf-8") if args.template else None
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(lambda r: generate_for_record(r, plan, endpoint, template), records))
    write_hypotheses([h for hs in results for h in hs], Path(args.out))
    print(f"wrote {sum(map(len, results))} hypotheses for {len(records)} items to {args.out}")
    return EXIT_OK


def _grouped(path) -> dict[str, list]:
    by_item: dict[str, list] = {}
    for h in read_hypotheses(Path(path)):
        by_item.setdefault(h.item_id, []).append(h)
    for hs in by_item.values():
        hs.sort(key=lambda h: h.attempt_index)
    return by_item


def cmd_eval_codebleu(args) -> int:
    corpus = load_corpus(args.corpus)
    hyps = _grouped(args.hypotheses)
    scores = []
    for r in sorted(corpus.by_split(*args.split), key=lambda r: r.id):
        code = hyps[r.id][args.attempt].code if len(hyps.get(r.id, [])) > args.attempt else ""
        rep = codebleu(code, r.source, CodeBleuConfig(language=r.language))
        scores.append(rep.combined)
        if args.per_item:
            print(f"{r.id}\t{rep.combined:.4f}\tngram={rep.ngram:.4f} weighted={rep.weighted_ngram:.4f} "
                  f"ast={rep.ast_match:.4f} dataflow={rep.dataflow_match}")
    if not scores:
        raise CorpusError("no records in the selected splits")
    s = aggregate_scores(scores)
    print(f"n={s.n} mean={100 * s.mean:.1f} sd={100 * s.sd:.1f} "
          f"ci={100 * s.interval.lower:.2f}-{100 * s.interval.upper:.2f}")
    return EXIT_OK


def cmd_eval_compile(args) -> int:
    corpus = load_corpus(args.corpus)
    hyps = _grouped(args.hypotheses)
    records = [r for r in sorted(corpus.by_split(*args.split), key=lambda r: r.id) if r.language == "dart"]
    items = [(r.id, [h.code for h in hyps.get(r.id, [])]) for r in records]
    if not items:
        raise CorpusError("no Dart records in the selected splits")
    res = compile_at_k(items, _toolchain(args), args.k, criterion=args.criterion, jobs=args.jobs)
    for t in ([res] if args.k == 1 else [res, res.at(1)]):
        print(f"compile@{t.k}: {t.successes}/{t.n} = {100 * t.rate:.1f}% "
              f"(95% CI {100 * t.interval.lower:.1f}-{100 * t.interval.upper:.1f})")
    return EXIT_OK


def cmd_report_render(args) -> int:
    report = EvaluationReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    sys.stdout.write(render_report(report, args.format))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.from_toml(args.config, overrides={"k": args.k, "jobs": args.jobs,
                                                      "output_dir": str(Path(args.output_dir).resolve())
                                                      if args.output_dir else None})
    started = time.monotonic()
    run_evaluation(cfg)
    log.info("run finished in %.1fs", time.monotonic() - started)
    print(f"report written to {cfg.output_dir}")
    return EXIT_OK


# -- stats ------------------------------------------------------------------

def cmd_stats_wilson(args) -> int:
    iv = wilson_interval(args.successes, args.n, args.confidence)
    print(f"point={iv.point!r}\nlower={iv.lower!r}\nupper={iv.upper!r}")
    return EXIT_OK


def cmd_stats_meanci(args) -> int:
    iv = normal_mean_ci(args.mean, args.sd, args.n, args.confidence)
    print(f"point={iv.point!r}\nlower={iv.lower!r}\nupper={iv.upper!r}")
    return EXIT_OK


def cmd_stats_zt(args) -> int:
    r = two_proportion_z(args.s1, args.n1, args.s2, args.n2, args.yates)
    print(f"z={r.z!r}\np={r.p_two_sided!r}\npooled={r.pooled_proportion!r}")
    return EXIT_OK


def cmd_stats_scores(args) -> int:
    s = aggregate_scores([float(x) for x in Path(args.file).read_text().split()])
    print(f"n={s.n}\nmean={s.mean!r}\nsd={s.sd!r}\nlower={s.interval.lower!r}\n"
          f"upper={s.interval.upper!r}\nmin={s.min!r}\nmax={s.max!r}")
    return EXIT_OK


def cmd_stub_server(args) -> int:
    from .stub_server import StubServer, StubState

    corpus = load_corpus(args.corpus) if args.corpus else None
    canned = Path(args.canned).read_text(encoding="utf-8") if args.canned else ""
    server = StubServer(StubState(args.mode, corpus, canned), port=args.port)
    print(f"stub endpoint at {server.url}", flush=True)
    server.start()
    try:
        server.thread.join()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="decompeval", description="Evaluation harness for neural decompilation to Dart.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    corpus = sub.add_parser("corpus", help="build, validate and summarize corpora")
    csub = corpus.add_subparsers(dest="action", required=True, parser_class=_Parser)
    b = csub.add_parser("build", help="compile and disassemble functions into a corpus")
    b.add_argument("functions", help="JSONL file of functions to pair")
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--timeout-secs", type=float)
    b.set_defaults(func=cmd_corpus_build)
    v = csub.add_parser("validate")
    v.add_argument("corpus")
    v.set_defaults(func=cmd_corpus_validate)
    s = csub.add_parser("stats")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_corpus_stats)

    g = sub.add_parser("gen", help="generate hypotheses from an endpoint")
    g.add_argument("--corpus", required=True)
    g.add_argument("--url", required=True)
    g.add_argument("--model", required=True)
    g.add_argument("--api-key-env")
    g.add_argument("--split", nargs="+", default=["test"])
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--template")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    ev = sub.add_parser("eval", help="score hypotheses")
    esub = ev.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    cb = esub.add_parser("codebleu")
    cb.add_argument("--corpus", required=True)
    cb.add_argument("--hypotheses", required=True)
    cb.add_argument("--split", nargs="+", default=["test"])
    cb.add_argument("--attempt", type=int, default=0)
    cb.add_argument("--per-item", action="store_true", help="print component scores per item")
    cb.set_defaults(func=cmd_eval_codebleu)
    ck = esub.add_parser("compile-at-k")
    ck.add_argument("--corpus", required=True)
    ck.add_argument("--hypotheses", required=True)
    ck.add_argument("--split", nargs="+", default=["test-natural"])
    ck.add_argument("--k", type=int, default=5)
    ck.add_argument("--jobs", type=int, default=1)
    ck.add_argument("--timeout-secs", type=float)
    ck.add_argument("--criterion", choices=CRITERIA, default="aot")
    ck.add_argument("--dart", help="Dart executable (default: dart on PATH)")
    ck.add_argument("--scratch")
    ck.set_defaults(func=cmd_eval_compile)

    rp = sub.add_parser("report", help="render a saved report")
    rsub = rp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    rr = rsub.add_parser("render")
    rr.add_argument("report", help="report.json from a run")
    rr.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    rr.set_defaults(func=cmd_report_render)

    st = sub.add_parser("stats", help="interval and test calculators")
    ssub = st.add_subparsers(dest="action", required=True, parser_class=_Parser)
    w = ssub.add_parser("wilson")
    w.add_argument("successes", type=int)
    w.add_argument("n", type=int)
    w.add_argument("--confidence", type=float, default=0.95)
    w.set_defaults(func=cmd_stats_wilson)
    m = ssub.add_parser("meanci")
    m.add_argument("mean", type=float)
    m.add_argument("sd", type=float)
    m.add_argument("n", type=int)
    m.add_argument("--confidence", type=float, default=0.95)
    m.set_defaults(func=cmd_stats_meanci)
    z = ssub.add_parser("zt")
    for name in ("s1", "n1", "s2", "n2"):
        z.add_argument(name, type=int)
    z.add_argument("--yates", action="store_true", help="apply a continuity correction")
    z.set_defaults(func=cmd_stats_zt)
    sc = ssub.add_parser("scores", help="summarize a whitespace-separated score file")
    sc.add_argument("file")
    sc.set_defaults(func=cmd_stats_scores)

    r = sub.add_parser("run", help="full evaluation from a TOML config")
    r.add_argument("config")
    r.add_argument("--k", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--output-dir")
    r.set_defaults(func=cmd_run)

    ss = sub.add_parser("stub-server", help="serve the deterministic offline endpoint")
    ss.add_argument("--corpus")
    ss.add_argument("--mode", choices=("echo", "canned", "invalid"), default="echo")
    ss.add_argument("--canned", help="file holding the canned reply")
    ss.add_argument("--port", type=int, default=8765)
    ss.set_defaults(func=cmd_stub_server)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ToolchainError, InferenceError) as exc:
        print(f"tool error: {exc}", file=sys.stderr)
        return EXIT_TOOL
    except StageError as exc:
        code = EXIT_TOOL if isinstance(exc.cause, (ToolchainError, InferenceError)) else EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (CorpusError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
