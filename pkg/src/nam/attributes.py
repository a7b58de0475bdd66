"""Single-pass attribute evaluation and constraint checking on complete trees."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import EvaluationError, MalformedTree
from .grammar import FUNCTIONS, Call, ConstraintId, Grammar, Lit, _arg_text
from .tree import AstTree


@dataclass
class AttributedNode:
    tree: AstTree
    inh: dict[str, Any] = field(default_factory=dict)
    syn: dict[str, Any] = field(default_factory=dict)
    children: list["AttributedNode"] = field(default_factory=list)

    def preorder(self):
        stack = [((), self)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for i in range(len(node.children) - 1, -1, -1):
                stack.append((path + (i,), node.children[i]))


AttributedTree = AttributedNode


def apply_function(fn: str, args: tuple, occ_values: list, what: str = "") -> Any:
    """Evaluate ``fn(args)`` where references read ``occ_values[occ][attr]``."""
    vals = []
    for a in args:
        if isinstance(a, Lit):
            vals.append(a.value)
        elif isinstance(a, Call):
            vals.append(apply_function(a.function, a.args, occ_values, what))
        else:
            try:
                vals.append(occ_values[a.occ][a.attr])
            except KeyError:
                raise EvaluationError(f"{what}: read of unset attribute {a.text}") from None
    return FUNCTIONS[fn][1](*vals)


def evaluate_attributes(grammar: Grammar, tree: AstTree,
                        on_visit: Callable[[str, tuple], None] | None = None) -> AttributedNode:
    """Give every attribute instance a value in one left-to-right depth-first pass.

    Inherited attributes of a node are computed when the walk enters it and its
    synthesized attributes when the walk leaves it.  ``on_visit`` receives
    ``("enter"|"exit", path)`` events.
    """
    root = AttributedNode(tree)
    # frame: (node, attributed, compiled prod, occurrence values, next child slot, path)
    stack: list[list] = []

    def enter(node: AstTree, anode: AttributedNode, inh: dict, path: tuple):
        prod = grammar.prod_by_id.get(node.prod)
        if prod is None:
            raise MalformedTree(f"node {list(path)}: unknown production {node.prod!r}")
        if prod.lhs != node.nonterminal:
            raise MalformedTree(f"node {list(path)}: production {prod.id} has lhs {prod.lhs}, "
                                f"node is a {node.nonterminal}")
        cp = grammar.compiled[prod.id]
        if len(node.children) != cp.arity:
            raise MalformedTree(f"node {list(path)}: {prod.id} needs {cp.arity} children, "
                                f"has {len(node.children)}")
        anode.inh = dict(inh)
        if on_visit:
            on_visit("enter", path)
        values: list[dict] = [dict(inh)] + [{} for _ in prod.rhs]
        stack.append([node, anode, cp, values, 0, path])

    enter(tree, root, {}, ())
    while stack:
        frame = stack[-1]
        node, anode, cp, values, slot, path = frame
        where = f"{cp.prod.id} at {list(path)}"
        if slot < cp.arity:
            occ = cp.children[slot]
            # terminals before this child, then the child itself
            lo = cp.children[slot - 1] + 1 if slot else 1
            for i in range(lo, occ + 1):
                for eq in cp.inh_eqs[i]:
                    values[i][eq.target.attr] = apply_function(eq.function, eq.args, values, where)
            frame[4] = slot + 1
            child = node.children[slot]
            if child.nonterminal != cp.child_nonterminals[slot]:
                raise MalformedTree(f"node {list(path + (slot,))}: expected a "
                                    f"{cp.child_nonterminals[slot]}, got {child.nonterminal}")
            achild = AttributedNode(child)
            anode.children.append(achild)
            enter(child, achild, values[occ], path + (slot,))
            continue
        lo = cp.children[-1] + 1 if cp.arity else 1
        for i in range(lo, len(values)):
            for eq in cp.inh_eqs[i]:
                values[i][eq.target.attr] = apply_function(eq.function, eq.args, values, where)
        for eq in cp.syn_eqs:
            values[0][eq.target.attr] = apply_function(eq.function, eq.args, values, where)
        anode.syn = {k: v for k, v in values[0].items() if k not in anode.inh}
        if on_visit:
            on_visit("exit", path)
        stack.pop()
        if stack:
            parent = stack[-1]
            pcp, pvalues = parent[2], parent[3]
            pvalues[pcp.children[parent[4] - 1]].update(anode.syn)
    return root


@dataclass(frozen=True)
class Violation:
    path: tuple[int, ...]
    constraint: ConstraintId
    message: str


def check_tree(grammar: Grammar, tree: AstTree, constraint) -> list[Violation]:
    """All violations of ``constraint`` in ``tree``; an empty list means a legal tree.

    A node whose production carries several checks for the constraint yields at
    most one violation.
    """
    cid = ConstraintId.parse(constraint)
    attributed = evaluate_attributes(grammar, tree)
    out: list[Violation] = []
    for path, anode in attributed.preorder():
        prod = grammar.prod_by_id[anode.tree.prod]
        checks = [c for c in prod.constraints if c.cid is cid]
        if not checks:
            continue
        values = _occurrence_values(grammar, prod, anode)
        failed = [c for c in checks if not apply_function(c.function, c.args, values, prod.id)]
        if failed:
            c = failed[0]
            args = ", ".join(_arg_text(a) for a in c.args)
            out.append(Violation(path, cid, f"{prod.id}: {c.function}({args}) is false"))
    return out


def _occurrence_values(grammar: Grammar, prod, anode: AttributedNode) -> list[dict]:
    cp = grammar.compiled[prod.id]
    values: list[dict] = [dict(anode.inh, **anode.syn)] + [{} for _ in prod.rhs]
    for slot, occ in enumerate(cp.children):
        ch = anode.children[slot]
        values[occ] = dict(ch.inh, **ch.syn)
    return values


def is_legal(grammar: Grammar, tree: AstTree, constraint) -> bool:
    return not check_tree(grammar, tree, constraint)
