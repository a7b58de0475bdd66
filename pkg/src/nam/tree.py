"""Abstract syntax trees and their depth-first token encoding.

A tree becomes a stream of ``Step(nonterminal, production)`` tokens in
preorder, with one ``POP`` emitted when the traversal leaves a node (leaves
included).  The stream has exactly two tokens per node.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import MalformedStream, MalformedTree, TooManyVariables
from .grammar import Grammar


class AstTree:
    __slots__ = ("nonterminal", "prod", "children")

    def __init__(self, nonterminal: str, prod: str, children: Sequence["AstTree"] = ()):
        self.nonterminal = nonterminal
        self.prod = prod
        self.children = tuple(children)

    def __eq__(self, other):
        if not isinstance(other, AstTree):
            return NotImplemented
        stack = [(self, other)]
        while stack:
            a, b = stack.pop()
            if a is b:
                continue
            if a.prod != b.prod or a.nonterminal != b.nonterminal or len(a.children) != len(b.children):
                return False
            stack.extend(zip(a.children, b.children))
        return True

    def __hash__(self):
        return hash(tuple(linearize(self)))

    def __repr__(self):
        return f"AstTree({to_term(self)})"

    def preorder(self) -> Iterator[tuple[tuple[int, ...], "AstTree"]]:
        """Yield ``(path, node)`` pairs; a path lists child indices from the root."""
        stack: list[tuple[tuple[int, ...], AstTree]] = [((), self)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((path + (i,), node.children[i]))

    def size(self) -> int:
        return sum(1 for _ in self.preorder())

    def at(self, path: Sequence[int]) -> "AstTree":
        node = self
        for i in path:
            node = node.children[i]
        return node

    def replace(self, path: Sequence[int], new: "AstTree") -> "AstTree":
        """Return a copy with the subtree at ``path`` replaced."""
        if not path:
            return new
        kids = list(self.children)
        kids[path[0]] = kids[path[0]].replace(path[1:], new)
        return AstTree(self.nonterminal, self.prod, kids)


class Step(NamedTuple):
    nonterminal: str
    prod: str


class _Pop:
    __slots__ = ()

    def __repr__(self):
        return "POP"

    def __reduce__(self):
        return "POP"


POP = _Pop()


def check_backbone(tree: AstTree, grammar: Grammar) -> None:
    """Raise :class:`MalformedTree` unless ``tree`` conforms to the grammar's backbone."""
    for path, node in tree.preorder():
        p = grammar.prod_by_id.get(node.prod)
        if p is None:
            raise MalformedTree(f"node {list(path)}: unknown production {node.prod!r}")
        if p.lhs != node.nonterminal:
            raise MalformedTree(f"node {list(path)}: production {p.id} has lhs {p.lhs}, "
                                f"node nonterminal is {node.nonterminal}")
        want = grammar.compiled[p.id].child_nonterminals
        got = tuple(c.nonterminal for c in node.children)
        if want != got:
            raise MalformedTree(f"node {list(path)}: {p.id} expects children {want}, got {got}")


def linearize(tree: AstTree) -> list:
    out: list = []
    stack: list = [tree]
    while stack:
        item = stack.pop()
        if item is POP:
            out.append(POP)
            continue
        out.append(Step(item.nonterminal, item.prod))
        stack.append(POP)
        stack.extend(reversed(item.children))
    return out


def delinearize(stream: Iterable, grammar: Grammar) -> AstTree:
    """Inverse of :func:`linearize`; validates balance and arities against the grammar."""
    root: AstTree | None = None
    # frames: [nonterminal, prod, expected child nonterminals, children so far]
    frames: list[list] = []
    for i, tok in enumerate(stream):
        if root is not None:
            raise MalformedStream(f"token {i}: stream continues after the tree is complete")
        if tok is POP:
            if not frames:
                raise MalformedStream(f"token {i}: pop with no open node")
            nt, prod, want, kids = frames.pop()
            if len(kids) != len(want):
                raise MalformedStream(f"token {i}: {prod} closed with {len(kids)} of {len(want)} children")
            node = AstTree(nt, prod, kids)
            if frames:
                frames[-1][3].append(node)
            else:
                root = node
            continue
        nt, prod = tok
        p = grammar.prod_by_id.get(prod)
        if p is None or p.lhs != nt:
            raise MalformedStream(f"token {i}: production {prod!r} is not in P_{nt}")
        if frames:
            parent = frames[-1]
            k = len(parent[3])
            if k >= len(parent[2]):
                raise MalformedStream(f"token {i}: {parent[1]} already has all its children")
            if parent[2][k] != nt:
                raise MalformedStream(f"token {i}: expected a {parent[2][k]}, got {nt}")
        elif nt != grammar.root:
            raise MalformedStream(f"token {i}: stream must start at the root {grammar.root}")
        frames.append([nt, prod, grammar.compiled[prod].child_nonterminals, []])
    if root is None:
        raise MalformedStream("stream ended with unclosed nodes" if frames else "empty stream")
    return root


def pop_balanced(stream: Sequence) -> bool:
    depth = 0
    for tok in stream:
        depth += -1 if tok is POP else 1
        if depth < 0:
            return False
    return depth == 0


def alias_variables(tree: AstTree, variables: str = "var", v_max: int = 16,
                    prefix: str = "Var") -> AstTree:
    """Rename the i-th distinct variable (preorder) to ``Var{i-1}``."""
    names: dict[str, str] = {}
    for _, node in tree.preorder():
        if node.nonterminal == variables and node.prod not in names:
            names[node.prod] = f"{prefix}{len(names)}"
    if len(names) > v_max:
        raise TooManyVariables(f"{len(names)} distinct variables, limit is {v_max}")
    return rename_productions(tree, names)


def rename_productions(tree: AstTree, mapping: dict[str, str]) -> AstTree:
    # rebuild bottom-up from the postorder of the stream
    stack: list[list] = []
    result = None
    for tok in linearize(tree):
        if tok is POP:
            nt, prod, kids = stack.pop()
            node = AstTree(nt, mapping.get(prod, prod), kids)
            if stack:
                stack[-1][2].append(node)
            else:
                result = node
        else:
            stack.append([tok.nonterminal, tok.prod, []])
    return result


# ---------------------------------------------------------------------------
# text forms

def to_term(tree: AstTree) -> str:
    """``Numeral(Pair(One,Zero))`` style rendering."""
    parts: list[str] = []
    for tok in _with_sep(tree):
        parts.append(tok)
    return "".join(parts)


def _with_sep(tree: AstTree) -> Iterator[str]:
    stack: list = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            yield item
            continue
        yield item.prod
        if item.children:
            yield "("
            stack.append(")")
            for i in range(len(item.children) - 1, -1, -1):
                stack.append(item.children[i])
                if i:
                    stack.append(",")


_TERM_TOKEN = re.compile(r"\s*([A-Za-z_]\w*|[(),])")


def parse_term(text: str, grammar: Grammar) -> AstTree:
    """Parse ``Numeral(Pair(One,Zero))`` using the grammar for nonterminals."""
    toks = _TERM_TOKEN.findall(text)
    pos = 0

    def node(nt_hint: str | None) -> AstTree:
        nonlocal pos
        name = toks[pos]
        pos += 1
        p = grammar.prod_by_id.get(name)
        if p is None:
            if nt_hint is None:
                raise MalformedTree(f"unknown production {name!r}")
            p_lhs = nt_hint  # raw variable names are allowed under the variables nonterminal
            want: tuple[str, ...] = ()
        else:
            p_lhs = p.lhs
            want = grammar.compiled[name].child_nonterminals
        kids = []
        if pos < len(toks) and toks[pos] == "(":
            pos += 1
            while toks[pos] != ")":
                kids.append(node(want[len(kids)] if len(kids) < len(want) else None))
                if toks[pos] == ",":
                    pos += 1
            pos += 1
        return AstTree(p_lhs, name, kids)

    return node(grammar.root)


def stream_to_line(stream: Sequence) -> str:
    return " ".join("POP" if t is POP else f"P:{t.prod}" for t in stream)


def line_to_stream(line: str, grammar: Grammar) -> list:
    out = []
    for word in line.split():
        if word == "POP":
            out.append(POP)
        elif word.startswith("P:"):
            p = grammar.prod_by_id.get(word[2:])
            if p is None:
                raise MalformedStream(f"unknown production {word[2:]!r}")
            out.append(Step(p.lhs, p.id))
        else:
            raise MalformedStream(f"bad token {word!r}")
    return out


def write_trees(path: "str | Path", trees: Iterable[AstTree]) -> None:
    with open(path, "w") as fh:
        for t in trees:
            fh.write(stream_to_line(linearize(t)) + "\n")


def read_trees(path: "str | Path", grammar: Grammar) -> list[AstTree]:
    trees = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                trees.append(delinearize(line_to_stream(line, grammar), grammar))
    return trees
