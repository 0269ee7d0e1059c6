"""compile@k: does at least one of the first k hypotheses compile?

Success is judged by one of three criteria:

``aot``     full ``dart compile aot-snapshot`` (default)
``analyze`` ``dart analyze`` reporting no errors
``syntax``  the bundled tree-sitter Dart grammar parses the unit cleanly;
            needs no SDK, and only catches syntax errors
"""

from __future__ import annotations

import hashlib
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import binpipe
from .binpipe import ToolchainConfig, ToolchainError, ToolTimeout, has_entry_function, run_tool
from .inference import DecodingPolicy, PARITY_POLICY
from .similarity.grammar import load_grammar
from .stats import IntervalEstimate, wilson_interval

CRITERIA = ("aot", "analyze", "syntax")
ENTRY_STUB = "void main() {}"


def attempt_schedule(k: int, base: DecodingPolicy = PARITY_POLICY) -> list[DecodingPolicy]:
    """Decoding policies for k attempts: first three greedy (beam 1), the rest beam 2.

    k=5 gives beams [1, 1, 1, 2, 2]; k=1 gives [1].
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    return [base.with_beam(1 if i < 3 else 2) for i in range(k)]


@dataclass(frozen=True)
class CompileOutcome:
    success: bool
    diagnostics: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"success": self.success, "diagnostics": self.diagnostics,
                "wall_time": self.wall_time}


def wrap_candidate(code: str) -> str:
    """Append an empty entry function when the candidate has none; never edit its lines."""
    if has_entry_function(code):
        return code
    sep = "" if code.endswith("\n") or not code else "\n"
    return f"{code}{sep}\n{ENTRY_STUB}\n"


def _syntax_check(unit: str) -> CompileOutcome:
    tree = load_grammar("dart").parse(unit)
    if not unit.strip() or tree.root_node.has_error:
        return CompileOutcome(False, binpipe._parse_diagnostics(tree, unit) or "syntax error")
    return CompileOutcome(True)


def compile_check(code: str, cfg: ToolchainConfig, criterion: str = "aot",
                  tag: str = "candidate") -> CompileOutcome:
    """Compile one candidate; timeouts and compiler errors are failures, not exceptions."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    unit = wrap_candidate(code)
    started = time.monotonic()
    if criterion == "syntax":
        out = _syntax_check(unit)
        return CompileOutcome(out.success, out.diagnostics, time.monotonic() - started)
    try:
        if criterion == "aot":
            artifact = binpipe.compile_source(unit, "dart", cfg, tag=tag)
            artifact.path.unlink(missing_ok=True)
            return CompileOutcome(True, artifact.compiler_diagnostics, time.monotonic() - started)
        workdir = binpipe._scratch_dir(cfg, tag)
        (workdir / "unit.dart").write_text(unit, encoding="utf-8")
        proc = run_tool([cfg.require("dart_compiler"), "analyze", "--no-fatal-warnings",
                         "unit.dart"], cfg.timeout, cwd=workdir)
        ok = proc.returncode == 0
        if ok:
            shutil.rmtree(workdir, ignore_errors=True)
        return CompileOutcome(ok, (proc.stdout + proc.stderr).strip(), time.monotonic() - started)
    except ToolTimeout as exc:
        return CompileOutcome(False, f"timeout: {exc}", time.monotonic() - started)
    except binpipe.ToolNotFound:
        raise
    except ToolchainError as exc:
        diag = exc.diagnostics or str(exc)
        return CompileOutcome(False, diag, time.monotonic() - started)


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    first_success_attempt: int | None
    outcomes: tuple[CompileOutcome | None, ...]  # None: skipped after an earlier success

    @property
    def success(self) -> bool:
        return self.first_success_attempt is not None


@dataclass(frozen=True)
class CompileAtKResult:
    k: int
    per_item: tuple[ItemResult, ...]
    successes: int
    n: int
    rate: float
    interval: IntervalEstimate
    criterion: str = "aot"

    def at(self, k: int) -> "CompileAtKResult":
        """Re-tally for a smaller k from the same outcomes (attempt order is fixed)."""
        if not 1 <= k <= self.k:
            raise ValueError(f"k must be within [1, {self.k}]")
        items = []
        for it in self.per_item:
            first = it.first_success_attempt
            keep = first if first is not None and first < k else None
            items.append(ItemResult(it.item_id, keep, it.outcomes[:k]))
        return _tally(k, items, self.criterion)


def _tally(k: int, items: list[ItemResult], criterion: str) -> CompileAtKResult:
    if not items:
        raise ValueError("compile@k needs at least one item")
    items = sorted(items, key=lambda it: it.item_id)
    successes = sum(it.success for it in items)
    n = len(items)
    return CompileAtKResult(k, tuple(items), successes, n, successes / n,
                            wilson_interval(successes, n), criterion)


@dataclass
class _Memo:
    outcomes: dict[str, CompileOutcome] = field(default_factory=dict)


def _evaluate_item(item_id: str, hypotheses: Sequence[str], k: int, cfg: ToolchainConfig,
                   criterion: str, short_circuit: bool) -> ItemResult:
    if not hypotheses:
        return ItemResult(item_id, None, (CompileOutcome(False, "no hypotheses supplied"),))
    memo = _Memo()
    outcomes: list[CompileOutcome | None] = []
    first = None
    for i, code in enumerate(list(hypotheses)[:k]):
        if first is not None and short_circuit:
            outcomes.append(None)
            continue
        key = hashlib.sha256(code.encode("utf-8")).hexdigest()
        if key not in memo.outcomes:
            memo.outcomes[key] = compile_check(code, cfg, criterion, tag=f"{item_id}-{i}")
        out = memo.outcomes[key]
        outcomes.append(out)
        if out.success and first is None:
            first = i
    return ItemResult(item_id, first, tuple(outcomes))


def compile_at_k(items: Sequence[tuple[str, Sequence[str]]], cfg: ToolchainConfig, k: int,
                 *, criterion: str = "aot", jobs: int = 1,
                 short_circuit: bool = True) -> CompileAtKResult:
    """Per item, success if any of its first k hypotheses compiles.

    Items run on a pool of ``jobs`` workers; per-item results are merged
    in item-id order whatever order they finish in.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    items = list(items)
    if jobs == 1:
        results = [_evaluate_item(i, h, k, cfg, criterion, short_circuit) for i, h in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_evaluate_item, i, h, k, cfg, criterion, short_circuit)
                       for i, h in items]
            results = [f.result() for f in futures]
    return _tally(k, results, criterion)
