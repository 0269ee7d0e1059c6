from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .bleu import ngram_bleu_detail, weighted_ngram_bleu_detail
from .lexer import tokenize
from .syntax import ast_match, dataflow_match

DEFAULT_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


@dataclass(frozen=True)
class CodeBleuConfig:
    """Component weights (ngram, weighted ngram, AST, data-flow) and n-gram settings.

    Weights are normalized to sum to 1 on construction.
    """

    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    max_n: int = 4
    keyword_weight: float = 5.0
    language: str = "dart"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 4 or any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError(f"weights must be four non-negative reals, got {self.weights}")
        total = math.fsum(w)
        object.__setattr__(self, "weights", tuple(x / total for x in w))
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.keyword_weight <= 0:
            raise ValueError("keyword_weight must be positive")
        if self.language not in ("dart", "swift"):
            raise ValueError(f"unsupported language {self.language!r}")


@dataclass(frozen=True)
class CodeBleuReport:
    ngram: float
    weighted_ngram: float
    ast_match: float
    dataflow_match: float | None  # None: reference has no def-use edges
    combined: float
    candidate_parsed: bool
    weights: tuple[float, float, float, float]  # effective, after renormalization
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        d["notes"] = list(self.notes)
        return d


def combine(components: tuple[float, float, float, float | None],
            weights: tuple[float, float, float, float]) -> tuple[float, tuple]:
    """Weighted sum; drops an absent data-flow component and rescales the rest."""
    a, b, g, d = weights
    if components[3] is None:
        rest = a + b + g
        eff = (a / rest, b / rest, g / rest, 0.0) if rest > 0 else (0.0, 0.0, 0.0, 0.0)
    else:
        eff = (a, b, g, d)
    total = sum(w * (c or 0.0) for w, c in zip(eff, components))
    return min(1.0, max(0.0, total)), eff


def codebleu(candidate: str, reference: str, cfg: CodeBleuConfig | None = None) -> CodeBleuReport:
    cfg = cfg or CodeBleuConfig()
    cand_tokens = tokenize(candidate, cfg.language)
    ref_tokens = tokenize(reference, cfg.language)
    plain = ngram_bleu_detail(cand_tokens, ref_tokens, cfg.max_n)
    weighted = weighted_ngram_bleu_detail(cand_tokens, ref_tokens, cfg.max_n, cfg.keyword_weight)
    ast_score, parsed = ast_match(candidate, reference, cfg.language)
    df_score, _ = dataflow_match(candidate, reference, cfg.language)
    notes = []
    if plain.empty_candidate:
        notes.append("empty candidate")
    if not parsed:
        notes.append("candidate does not parse")
    if df_score is None:
        notes.append("reference has no def-use edges; data-flow weight redistributed")
    comps = (plain.score, weighted.score, ast_score, df_score)
    combined, eff = combine(comps, cfg.weights)
    return CodeBleuReport(plain.score, weighted.score, ast_score, df_score, combined,
                          parsed, eff, tuple(notes))
