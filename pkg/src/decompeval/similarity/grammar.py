"""Per-language grammar tables and tree-sitter parsers."""

from __future__ import annotations

import importlib
import re
import sys
import threading
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import tree_sitter

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

LANGUAGES = ("dart", "swift")


@dataclass(frozen=True)
class Binder:
    node: str
    path: tuple[str, ...] = ()
    select: str = ""  # "first" | "last" | "all" among direct identifier children


@dataclass(frozen=True)
class Assignment:
    node: str
    target: str
    target_wrapper: str
    operator: str
    value: str
    plain_operator: str


@dataclass(frozen=True)
class Update:
    node: str
    operand: str


@dataclass(frozen=True)
class Grammar:
    name: str
    language: tree_sitter.Language
    lexer: dict
    keywords: frozenset[str]
    comment_types: frozenset[str]
    keep_text_leaf: re.Pattern
    identifier_types: frozenset[str]
    member_parent_types: frozenset[str]
    scope_types: frozenset[str]
    header_types: frozenset[str]
    header_body_types: frozenset[str]
    binders: dict[str, Binder]
    assignments: dict[str, Assignment]
    updates: dict[str, Update]

    def parser(self) -> tree_sitter.Parser:
        """A parser private to the calling thread."""
        local = getattr(_parsers, self.name, None)
        if local is None:
            local = tree_sitter.Parser(self.language)
            setattr(_parsers, self.name, local)
        return local

    def parse(self, code: str) -> tree_sitter.Tree:
        return self.parser().parse(code.encode("utf-8"))


_parsers = threading.local()


@lru_cache(maxsize=None)
def load_grammar(name: str) -> Grammar:
    if name not in LANGUAGES:
        raise ValueError(f"unsupported language {name!r}; expected one of {LANGUAGES}")
    text = resources.files("decompeval.grammars").joinpath(f"{name}.toml").read_text("utf-8")
    data = tomllib.loads(text)
    module = importlib.import_module(data["tree_sitter_module"])
    lexer = data["lexer"]
    tree = data["tree"]
    flow = data["dataflow"]
    return Grammar(
        name=name,
        language=tree_sitter.Language(module.language()),
        lexer=lexer,
        keywords=frozenset(lexer["keywords"]),
        comment_types=frozenset(tree["comment_types"]),
        keep_text_leaf=re.compile(tree["keep_text_leaf_pattern"]),
        identifier_types=frozenset(flow["identifier_types"]),
        member_parent_types=frozenset(flow["member_parent_types"]),
        scope_types=frozenset(flow["scope_types"]),
        header_types=frozenset(flow["header_types"]),
        header_body_types=frozenset(flow["header_body_types"]),
        binders={b["node"]: Binder(b["node"], tuple(b.get("path", ())), b.get("select", ""))
                 for b in flow.get("binders", [])},
        assignments={a["node"]: Assignment(**a) for a in flow.get("assignments", [])},
        updates={u["node"]: Update(**u) for u in flow.get("updates", [])},
    )


def parses(code: str, language: str) -> bool:
    """True when ``code`` is non-blank and parses without error or missing nodes."""
    if not code.strip():
        return False
    return not load_grammar(language).parse(code).root_node.has_error
