"""Structural components of CodeBLEU: syntax-subtree match and def-use match."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import tree_sitter

from .grammar import Grammar, load_grammar


class ReferenceParseError(ValueError):
    """The reference text does not parse under its language grammar."""


def _parse_reference(code: str, grammar: Grammar) -> tree_sitter.Tree:
    tree = grammar.parse(code)
    if not code.strip() or tree.root_node.has_error:
        raise ReferenceParseError(f"reference does not parse as {grammar.name}")
    return tree


def _parse_candidate(code: str, grammar: Grammar) -> tree_sitter.Tree | None:
    if not code.strip():
        return None
    tree = grammar.parse(code)
    return None if tree.root_node.has_error else tree


# -- subtrees ---------------------------------------------------------------

def _subtree_signatures(tree: tree_sitter.Tree, grammar: Grammar) -> Counter:
    """Signatures of every subtree of height >= 2, leaves anonymized.

    Anonymous leaves (keywords, punctuation) keep their text, which is
    their node type. Named leaves reduce to their node type unless the
    grammar lists them as text-bearing (operators).
    """
    sigs: Counter = Counter()
    done: dict[int, str | None] = {}
    stack = [(tree.root_node, False)]
    while stack:
        node, expanded = stack.pop()
        if node.type in grammar.comment_types:
            done[node.id] = None
            continue
        if not expanded:
            stack.append((node, True))
            stack.extend((c, False) for c in reversed(node.children))
            continue
        parts = [done.pop(c.id) for c in node.children]
        parts = [p for p in parts if p is not None]
        if not parts:
            if node.is_named and grammar.keep_text_leaf.search(node.type):
                done[node.id] = f"{node.type}:{node.text.decode('utf-8', 'replace')}"
            else:
                done[node.id] = node.type
            continue
        sig = f"({node.type} {' '.join(parts)})"
        sigs[sig] += 1
        done[node.id] = sig
    return sigs


def extract_subtrees(code: str, language: str) -> Counter:
    grammar = load_grammar(language)
    tree = _parse_candidate(code, grammar)
    return Counter() if tree is None else _subtree_signatures(tree, grammar)


def ast_match(candidate: str, reference: str, language: str) -> tuple[float, bool]:
    """Fraction of the reference's subtree multiset found in the candidate.

    Returns ``(score, candidate_parsed)``; an unparseable candidate scores 0.
    """
    grammar = load_grammar(language)
    ref = _subtree_signatures(_parse_reference(reference, grammar), grammar)
    tree = _parse_candidate(candidate, grammar)
    if tree is None:
        return 0.0, False
    cand = _subtree_signatures(tree, grammar)
    total = sum(ref.values())
    if total == 0:
        return 0.0, True
    return sum((cand & ref).values()) / total, True


# -- def-use edges ----------------------------------------------------------

@dataclass
class _Var:
    index: int
    version: int = 0

    def label(self, version: int | None = None) -> str:
        return f"v{self.index}@{self.version if version is None else version}"


class _FlowWalker:
    """Collects (definition, use-site) edges in source order.

    Variables are numbered by declaration order and each (re)assignment
    bumps a per-variable version, so an edge reads ``v2@1 -> v4@0``:
    version 1 of the third declared variable flows into the first
    definition of the fifth. Uses outside any definition flow into ``-``.
    Resolution picks the nearest preceding definition visible from the
    enclosing lexical scopes.
    """

    def __init__(self, grammar: Grammar):
        self.g = grammar
        self.scopes: list[dict[str, _Var]] = [{}]
        self.targets: list[str] = []
        self.edges: list[tuple[str, str]] = []
        self.count = 0
        self.skip: set[int] = set()

    def _new_var(self) -> _Var:
        var = _Var(self.count)
        self.count += 1
        return var

    def _lookup(self, name: str) -> _Var | None:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def _use(self, var: _Var) -> None:
        self.edges.append((var.label(), self.targets[-1] if self.targets else "-"))

    def run(self, root: tree_sitter.Node) -> list[tuple[str, str]]:
        self._visit(root, None)
        return self.edges

    def _visit_children(self, node: tree_sitter.Node) -> None:
        children = node.children
        i = 0
        while i < len(children):
            child = children[i]
            if child.type in self.g.header_types:
                self.scopes.append({})
                self._visit(child, node)
                if i + 1 < len(children) and children[i + 1].type in self.g.header_body_types:
                    i += 1
                    self._visit(children[i], node)
                self.scopes.pop()
            else:
                self._visit(child, node)
            i += 1

    def _visit(self, node: tree_sitter.Node, parent: tree_sitter.Node | None) -> None:
        t = node.type
        if t in self.g.comment_types or node.id in self.skip:
            return
        opened = t in self.g.scope_types
        if opened:
            self.scopes.append({})
        if t in self.g.assignments:
            self._assignment(node)
        elif t in self.g.updates and self._update(node):
            pass
        elif t in self.g.binders:
            self._binder(node)
        elif t in self.g.identifier_types:
            if parent is None or parent.type not in self.g.member_parent_types:
                var = self._lookup(node.text.decode("utf-8", "replace"))
                if var is not None:
                    self._use(var)
        else:
            self._visit_children(node)
        if opened:
            self.scopes.pop()

    def _simple_target(self, node: tree_sitter.Node | None, wrapper: str):
        if node is None or node.type != wrapper or node.named_child_count != 1:
            return None
        inner = node.named_children[0]
        return inner if inner.type in self.g.identifier_types else None

    def _assignment(self, node: tree_sitter.Node) -> None:
        rule = self.g.assignments[node.type]
        target = self._simple_target(node.child_by_field_name(rule.target), rule.target_wrapper)
        if target is None:
            self._visit_children(node)
            return
        name = target.text.decode("utf-8", "replace")
        var = self._lookup(name)
        if var is None:
            # assignment to an undeclared name declares it here
            var = self._new_var()
            new_version = 0
            self.scopes[-1][name] = var
            old = None
        else:
            new_version = var.version + 1
            old = var.label()
        op = node.child_by_field_name(rule.operator)
        wrapper = node.child_by_field_name(rule.target)
        self.targets.append(var.label(new_version))
        for child in node.children:
            if child.id in (wrapper.id, op.id if op is not None else -1):
                continue
            self._visit(child, node)
        if op is not None and op.text.decode() != rule.plain_operator and old is not None:
            self.edges.append((old, self.targets[-1]))
        self.targets.pop()
        var.version = new_version

    def _update(self, node: tree_sitter.Node) -> bool:
        rule = self.g.updates[node.type]
        text = node.text.decode("utf-8", "replace")
        if not (text.startswith(("++", "--")) or text.endswith(("++", "--"))):
            return False
        operand = next((c for c in node.named_children if c.type == rule.operand), None)
        ident = operand.named_children[0] if operand is not None and operand.named_child_count == 1 else None
        if ident is None or ident.type not in self.g.identifier_types:
            return False
        var = self._lookup(ident.text.decode("utf-8", "replace"))
        if var is None:
            return True
        self.edges.append((var.label(), var.label(var.version + 1)))
        var.version += 1
        return True

    def _bound_nodes(self, node: tree_sitter.Node) -> list[tree_sitter.Node]:
        rule = self.g.binders[node.type]
        if rule.path:
            current = [node]
            for field in rule.path:
                current = [c for n in current for c in n.children_by_field_name(field)]
            return [c for c in current if c.type in self.g.identifier_types]
        idents = [c for c in node.children if c.type in self.g.identifier_types]
        if not idents:
            return []
        if rule.select == "first":
            return idents[:1]
        if rule.select == "last":
            return idents[-1:]
        return idents

    def _binder(self, node: tree_sitter.Node) -> None:
        bound = self._bound_nodes(node)
        if not bound:
            self._visit_children(node)
            return
        self.skip.update(b.id for b in bound)
        pending = [(b.text.decode("utf-8", "replace"), self._new_var()) for b in bound]
        self.targets.append(",".join(v.label() for _, v in pending))

        def flush():
            if pending:
                for name, var in pending:
                    self.scopes[-1][name] = var
                pending.clear()
                self.targets.pop()

        for child in node.children:
            if child.type in self.g.scope_types:
                flush()
            self._visit(child, node)
        flush()


def extract_dataflow(code: str, language: str) -> Counter:
    grammar = load_grammar(language)
    tree = _parse_candidate(code, grammar)
    return Counter() if tree is None else Counter(_FlowWalker(grammar).run(tree.root_node))


def dataflow_match(candidate: str, reference: str, language: str) -> tuple[float | None, bool]:
    """Fraction of the reference's def-use edges matched by the candidate.

    The score is ``None`` when the reference has no edges at all.
    """
    grammar = load_grammar(language)
    ref = Counter(_FlowWalker(grammar).run(_parse_reference(reference, grammar).root_node))
    tree = _parse_candidate(candidate, grammar)
    parsed = tree is not None
    if not ref:
        return None, parsed
    if not parsed:
        return 0.0, False
    cand = Counter(_FlowWalker(grammar).run(tree.root_node))
    return sum((cand & ref).values()) / sum(ref.values()), True
