"""Token-level lexing of Dart and Swift for the n-gram components.

The lexer is table-driven from the grammar files: comments are dropped,
string literals (including interpolations) stay single tokens and
anything unrecognized becomes an ``other`` token, so lexing never fails.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

from .grammar import Grammar, load_grammar

KINDS = ("keyword", "identifier", "literal", "operator", "punctuation", "other")


@dataclass(frozen=True)
class Token:
    text: str
    kind: str

    def __repr__(self):
        return f"{self.text}:{self.kind}"


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...] = ()

    def __len__(self):
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    @classmethod
    def of(cls, texts, keywords=()) -> "TokenSeq":
        """Quick constructor for tests and callers with pre-split text."""
        kw = set(keywords)
        return cls(tuple(Token(t, "keyword" if t in kw else "identifier") for t in texts))


class _Lexer:
    def __init__(self, grammar: Grammar):
        lx = grammar.lexer
        self.keywords = grammar.keywords
        self.line_comment = lx["line_comment"]
        self.block_open, self.block_close = lx["block_comment"]
        self.nested = lx.get("nested_block_comments", False)
        self.identifier = re.compile(lx["identifier"])
        self.number = re.compile(lx["number"])
        self.quotes = tuple(lx["quotes"])
        self.triple = lx.get("triple_quotes", False)
        self.raw_prefix = lx.get("raw_prefix", "")
        self.raw_hashes = lx.get("raw_hashes", False)
        self.interp_open, self.interp_close = lx["interpolation"]
        self.escape = lx.get("escape", "\\")
        self.operators = sorted(lx["operators"], key=len, reverse=True)
        self.punctuation = frozenset(lx["punctuation"])

    # -- scanning helpers; each returns the index just past what it consumed

    def _skip_block_comment(self, code: str, i: int) -> int:
        depth, i = 1, i + len(self.block_open)
        while i < len(code) and depth:
            if code.startswith(self.block_close, i):
                depth -= 1
                i += len(self.block_close)
            elif self.nested and code.startswith(self.block_open, i):
                depth += 1
                i += len(self.block_open)
            else:
                i += 1
        return i

    def _string_start(self, code: str, i: int):
        """Return (body_start, closing_delimiter, raw) if a string begins at i."""
        j, raw, hashes = i, False, ""
        if self.raw_prefix and code.startswith(self.raw_prefix, j):
            k = j + len(self.raw_prefix)
            if k < len(code) and code[k] in self.quotes:
                j, raw = k, True
        if self.raw_hashes and j < len(code) and code[j] == "#":
            k = j
            while k < len(code) and code[k] == "#":
                k += 1
            if k < len(code) and code[k] in self.quotes:
                hashes, j = code[j:k], k
        if j >= len(code) or code[j] not in self.quotes:
            return None
        q = code[j]
        if self.triple and code.startswith(q * 3, j):
            return j + 3, q * 3 + hashes, raw, hashes
        return j + 1, q + hashes, raw, hashes

    def _scan_string(self, code: str, i: int) -> int | None:
        start = self._string_start(code, i)
        if start is None:
            return None
        j, close, raw, hashes = start
        multiline = len(close) - len(hashes) == 3
        escape = self.escape + hashes
        interp = self.escape + hashes + self.interp_open[len(self.escape):] \
            if self.interp_open.startswith(self.escape) else self.interp_open
        while j < len(code):
            if code.startswith(close, j):
                return j + len(close)
            if not multiline and code[j] == "\n":
                return j  # unterminated single-line string ends at the newline
            if not raw and code.startswith(interp, j):
                j = self._skip_balanced(code, j + len(interp))
                continue
            if not raw and code.startswith(escape, j):
                j += len(escape) + 1
                continue
            j += 1
        return j

    def _skip_balanced(self, code: str, i: int) -> int:
        opener = self.interp_open[-1]
        closer = self.interp_close
        depth = 1
        while i < len(code):
            end = self._scan_string(code, i)
            if end is not None:
                i = end
                continue
            if code.startswith(self.block_open, i):
                i = self._skip_block_comment(code, i)
                continue
            c = code[i]
            if c == opener:
                depth += 1
            elif c == closer:
                depth -= 1
                if depth == 0:
                    return i + 1
            i += 1
        return i

    def tokenize(self, code: str) -> TokenSeq:
        out: list[Token] = []
        i, n = 0, len(code)
        while i < n:
            c = code[i]
            if c.isspace():
                i += 1
                continue
            if code.startswith(self.line_comment, i):
                nl = code.find("\n", i)
                i = n if nl < 0 else nl
                continue
            if code.startswith(self.block_open, i):
                i = self._skip_block_comment(code, i)
                continue
            end = self._scan_string(code, i)
            if end is not None:
                out.append(Token(code[i:end], "literal"))
                i = end
                continue
            m = self.number.match(code, i)
            if m and m.end() > i:
                out.append(Token(m.group(), "literal"))
                i = m.end()
                continue
            m = self.identifier.match(code, i)
            if m and m.end() > i:
                text = m.group()
                out.append(Token(text, "keyword" if text in self.keywords else "identifier"))
                i = m.end()
                continue
            for op in self.operators:
                if code.startswith(op, i):
                    out.append(Token(op, "operator"))
                    i += len(op)
                    break
            else:
                out.append(Token(c, "punctuation" if c in self.punctuation else "other"))
                i += 1
        return TokenSeq(tuple(out))


@lru_cache(maxsize=None)
def _lexer(language: str) -> _Lexer:
    return _Lexer(load_grammar(language))


def tokenize(code: str, language: str) -> TokenSeq:
    return _lexer(language).tokenize(code)
