import json

import pytest

from decompeval.corpus import load_corpus
from decompeval.inference import PARITY_POLICY, Hypothesis, write_hypotheses
from decompeval.pipeline import ConfigError, RunConfig, StageError, plan_for_run, run_evaluation
from decompeval.report import EvaluationReport, parse_csv, render_report
from decompeval.stats import wilson_interval
from decompeval.stub_server import StubServer, StubState

from .conftest import FAKE_BIN, FIXTURES

E2E = FIXTURES / "e2e_corpus.jsonl"


def config(tmp_path, models, criterion="aot", jobs=1, k=5, out="out", **run):
    data = {
        "run": {"corpus": str(E2E), "output_dir": str(tmp_path / out), "k": k, "jobs": jobs,
                "criterion": criterion, "codebleu_splits": ["test"], "compile_splits": ["test"], **run},
        "toolchain": {"dart": str(FAKE_BIN / "dart"), "scratch_root": str(tmp_path / "scratch")},
        "models": models,
    }
    return RunConfig.from_mapping(data, base=tmp_path)


def endpoint_model(label, url):
    return {"label": label, "url": url, "model": "stub", "backoff": 0.01}


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(E2E)


def test_plan_seeds_and_beams():
    plan = plan_for_run(5, 10)
    assert [p.seed for p in plan] == [10, 11, 12, 13, 14]
    assert [p.beam for p in plan] == [1, 1, 1, 2, 2]


def test_echo_stub_is_perfect_and_jobs_independent(tmp_path, corpus):
    with StubServer(StubState("echo", corpus)) as server:
        one = run_evaluation(config(tmp_path, [endpoint_model("echo", server.url)], jobs=1, out="j1"))
        eight = run_evaluation(config(tmp_path, [endpoint_model("echo", server.url)], jobs=8, out="j8"))
    assert one.codebleu[0].summary.mean == pytest.approx(1.0)
    md = render_report(one)
    assert "| echo | 10 | 100.0 |" in md
    assert "100.0% (" in md
    for row in one.compile_at_k:
        assert (row.successes, row.n) == (10, 10)
    for fmt in ("markdown", "csv", "json"):
        assert render_report(one, fmt) == render_report(eight, fmt)
    assert (tmp_path / "j1" / "report.md").read_text() == (tmp_path / "j8" / "report.md").read_text()


def test_invalid_stub_gives_zero(tmp_path, corpus):
    with StubServer(StubState("invalid", corpus)) as server:
        rep = run_evaluation(config(tmp_path, [endpoint_model("broken", server.url)]))
    k5 = next(r for r in rep.compile_at_k if r.k == 5)
    assert (k5.successes, k5.rate) == (0, 0.0)
    assert rep.compiled_only[0].summary is None
    assert "no compiled outputs" in render_report(rep)


@pytest.mark.parametrize("criterion", ["aot", "syntax"])
def test_mixed_hypotheses_tally(tmp_path, criterion):
    cfg = config(tmp_path, [{"label": "mixed", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}],
                 criterion=criterion)
    rep = run_evaluation(cfg)
    k5 = next(r for r in rep.compile_at_k if r.k == 5)
    k1 = next(r for r in rep.compile_at_k if r.k == 1)
    assert (k5.successes, k5.n) == (6, 10)
    assert k5.interval == wilson_interval(6, 10)
    # items 0 and 5 compile on their first attempt (index % 5 == 0)
    assert (k1.successes, k1.interval) == (2, wilson_interval(2, 10))
    assert rep.compiled_only[0].summary.n == 6


def test_output_layout_and_regenerated_intervals(tmp_path):
    cfg = config(tmp_path, [{"label": "mixed", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}],
                 criterion="syntax")
    rep = run_evaluation(cfg)
    out = tmp_path / "out"
    for name in ("report.md", "report.csv", "report.json", "run-config.lock",
                 "hypotheses/mixed.jsonl", "outcomes/mixed.jsonl"):
        assert (out / name).is_file(), name
    assert EvaluationReport.from_json((out / "report.json").read_text()) == rep
    assert parse_csv((out / "report.csv").read_text()) == rep
    # recompute the tally from per-attempt outcomes alone
    rows = [json.loads(l) for l in (out / "outcomes" / "mixed.jsonl").read_text().splitlines()]
    per_item = {}
    for r in rows:
        per_item[r["item_id"]] = per_item.get(r["item_id"], False) or bool(r["success"])
    s, n = sum(per_item.values()), len(per_item)
    k5 = next(r for r in rep.compile_at_k if r.k == 5)
    assert (s, n) == (k5.successes, k5.n)
    assert wilson_interval(s, n) == k5.interval
    lock = json.loads((out / "run-config.lock").read_text())
    assert lock["k"] == 5 and lock["criterion"] == "syntax" and len(lock["corpus_sha256"]) == 64
    assert rep.header["seeds"] == [0, 1, 2, 3, 4]


def test_two_models_get_ztests(tmp_path, corpus):
    with StubServer(StubState("echo", corpus)) as server:
        cfg = config(tmp_path, [endpoint_model("echo", server.url),
                                {"label": "mixed", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}],
                     criterion="syntax")
        rep = run_evaluation(cfg)
    assert [(t.metric, t.label_a, t.label_b) for t in rep.ztests] == [
        ("compile@k_5", "echo", "mixed"), ("compile@k_1", "echo", "mixed")]


def test_missing_hypotheses_count_as_failures(tmp_path, corpus):
    path = tmp_path / "partial.jsonl"
    r = corpus.records[0]
    write_hypotheses([Hypothesis.from_raw(r.id, 0, r.source, PARITY_POLICY)], path)
    rep = run_evaluation(config(tmp_path, [{"label": "p", "hypotheses": str(path)}], criterion="syntax"))
    k5 = next(x for x in rep.compile_at_k if x.k == 5)
    assert (k5.successes, k5.n) == (1, 10)


def test_generation_failure_is_stage_error(tmp_path):
    cfg = config(tmp_path, [{"label": "dead", "url": "http://127.0.0.1:9/v1/chat/completions",
                             "max_retries": 0, "backoff": 0.01}])
    with pytest.raises(StageError) as info:
        run_evaluation(cfg)
    assert info.value.stage == "generate" and info.value.item_id


def test_missing_tool_is_stage_error(tmp_path):
    data = {"run": {"corpus": str(E2E), "output_dir": str(tmp_path / "o"), "compile_splits": ["test"]},
            "toolchain": {}, "models": [{"label": "m", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}]}
    cfg = RunConfig.from_mapping(data)
    cfg = RunConfig(**{**cfg.__dict__, "toolchain": type(cfg.toolchain)(dart_compiler=None)})
    with pytest.raises(StageError) as info:
        run_evaluation(cfg)
    assert info.value.stage == "compile"


@pytest.mark.parametrize("patch,match", [
    ({"k": 0}, "k must"),
    ({"criterion": "jit"}, "criterion"),
    ({"formats": ["pdf"]}, "formats"),
])
def test_config_validation(tmp_path, patch, match):
    with pytest.raises(ConfigError, match=match):
        config(tmp_path, [{"label": "m", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}], **patch)


def test_config_requires_models_and_sources(tmp_path):
    with pytest.raises(ConfigError, match="models"):
        config(tmp_path, [])
    with pytest.raises(ConfigError, match="url or hypotheses"):
        config(tmp_path, [{"label": "m"}])
    with pytest.raises(ConfigError, match="unique"):
        h = str(FIXTURES / "mixed_hypotheses.jsonl")
        config(tmp_path, [{"label": "m", "hypotheses": h}, {"label": "m", "hypotheses": h}])


def test_from_toml_relative_paths(tmp_path):
    (tmp_path / "c.jsonl").write_bytes(E2E.read_bytes())
    (tmp_path / "run.toml").write_text(
        '[run]\ncorpus = "c.jsonl"\noutput_dir = "o"\n\n[[models]]\nlabel = "x"\nurl = "http://h"\n')
    cfg = RunConfig.from_toml(tmp_path / "run.toml", overrides={"k": 3})
    assert cfg.corpus == (tmp_path / "c.jsonl").resolve()
    assert cfg.output_dir == (tmp_path / "o").resolve()
    assert cfg.k == 3 and "url" in cfg.source_text
    (tmp_path / "bad.toml").write_text("[run\n")
    with pytest.raises(ConfigError):
        RunConfig.from_toml(tmp_path / "bad.toml")


def test_unknown_toolchain_key_is_config_error(tmp_path):
    data = {"run": {"corpus": str(E2E)}, "toolchain": {"dart_compiler": "dart"},
            "models": [{"label": "m", "hypotheses": str(FIXTURES / "mixed_hypotheses.jsonl")}]}
    with pytest.raises(ConfigError, match="dart_compiler"):
        RunConfig.from_mapping(data)
