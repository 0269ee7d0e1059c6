"""CodeBLEU for Dart and Swift: n-gram, keyword-weighted n-gram, AST and data-flow match."""

from .bleu import ngram_bleu, weighted_ngram_bleu
from .codebleu import CodeBleuConfig, CodeBleuReport, codebleu
from .grammar import load_grammar, parses
from .lexer import Token, TokenSeq, tokenize
from .syntax import ReferenceParseError, ast_match, dataflow_match, extract_dataflow, extract_subtrees

__all__ = [
    "CodeBleuConfig", "CodeBleuReport", "ReferenceParseError", "Token", "TokenSeq",
    "ast_match", "codebleu", "dataflow_match", "extract_dataflow", "extract_subtrees",
    "load_grammar", "ngram_bleu", "parses", "tokenize", "weighted_ngram_bleu",
]
