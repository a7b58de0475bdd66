import numpy as np
import pytest
from hypothesis import strategies as st

from nam.corpus import CorpusSpec, generate_corpus
from nam.grammar import builtin_grammar
from nam.tree import AstTree


@pytest.fixture(scope="session")
def minic():
    return builtin_grammar("minic")


@pytest.fixture(scope="session")
def numeral():
    return builtin_grammar("numeral")


@pytest.fixture(scope="session")
def small_corpus(minic):
    return generate_corpus(CorpusSpec(programs=40, seed=11), minic)


# ---------------------------------------------------------------------------
# random trees

def numeral_bits(n_leaves: int, rng) -> AstTree:
    if n_leaves == 1:
        return AstTree("bits", "One" if rng.random() < 0.5 else "Zero")
    k = int(rng.integers(1, n_leaves))
    return AstTree("bits", "Pair", [numeral_bits(k, rng), numeral_bits(n_leaves - k, rng)])


def random_numeral(seed: int, max_leaves: int = 31) -> AstTree:
    rng = np.random.default_rng(seed)
    return AstTree("numeral", "Numeral", [numeral_bits(int(rng.integers(1, max_leaves + 1)), rng)])


numeral_trees = st.integers(0, 2**32 - 1).map(random_numeral)


def random_derivation(grammar, seed: int, max_nodes: int = 200) -> AstTree:
    """Context-free random tree; shallow productions are preferred as the budget shrinks."""
    rng = np.random.default_rng(seed)
    budget = [max_nodes]

    def grow(n: str, depth: int) -> AstTree:
        budget[0] -= 1
        prods = list(grammar.productions_of(n))
        tight = budget[0] < 20 or depth > 8
        if tight:
            smallest = min(grammar.compiled[p].arity for p in prods)
            prods = [p for p in prods if grammar.compiled[p].arity == smallest]
        p = prods[int(rng.integers(len(prods)))]
        cp = grammar.compiled[p]
        return AstTree(n, p, [grow(c, depth + 1) for c in cp.child_nonterminals])

    return grow(grammar.root, 0)


# ---------------------------------------------------------------------------
# independent mini-C scope/type checker (does not use the attribute evaluator)

def walker_violations(tree: AstTree, constraint: str) -> set:
    """Paths of nodes breaking the constraint, re-derived by a plain recursive walk."""
    cd = constraint in ("cd", "declared_variable")
    bad = set()

    def var_use(node, path, env, expect):
        if cd:
            ok = node.prod in env
        else:
            ok = expect is None or env.get(node.prod) == expect
        if not ok:
            bad.add(path)

    def guard(path, env, need_type=None, typed=False):
        if cd:
            if not env:
                bad.add(path)
        elif typed and need_type is not None and need_type not in env.values():
            bad.add(path)

    def decls(node, path, env):
        while node.prod == "DeclsCons":
            d = node.children[0]
            tag = d.children[0].prod[1:].lower()
            if d.prod == "DeclInit":
                expr(d.children[2], path + (0, 2), env, tag)
            env = {**env, d.children[1].prod: tag}
            node, path = node.children[1], path + (1,)
        return env

    def stmts(node, path, env, ret):
        while node.prod == "StmtsCons":
            stmt(node.children[0], path + (0,), env, ret)
            node, path = node.children[1], path + (1,)

    def stmt(node, path, env, ret):
        p = node.prod
        if p in ("Assign", "Incr"):
            guard(path, env)
            var_use(node.children[0], path + (0,), env, None)
            if p == "Assign":
                expr(node.children[1], path + (1,), env, env.get(node.children[0].prod))
        elif p in ("If", "IfElse", "While"):
            guard(path, env)
            cond(node.children[0], path + (0,), env)
            for i in range(1, len(node.children)):
                stmts(node.children[i], path + (i,), env, ret)
        elif p == "Return":
            expr(node.children[0], path + (0,), env, ret)
        elif p == "Print":
            expr(node.children[0], path + (0,), env, None)

    def cond(node, path, env):
        if node.prod == "Cmp":
            guard(path, env)
            var_use(node.children[0], path + (0,), env, None)
            expr(node.children[1], path + (1,), env, env.get(node.children[0].prod))
        else:
            guard(path, env, "bool", typed=True)
            var_use(node.children[0], path + (0,), env, "bool")

    def expr(node, path, env, expect):
        if node.prod in ("Add", "Sub", "Mul"):
            expr(node.children[0], path + (0,), env, expect)
            expr(node.children[1], path + (1,), env, expect)
        elif node.prod == "Use":
            guard(path, env, expect, typed=True)
            var_use(node.children[0], path + (0,), env, expect)

    genv = decls(tree.children[0], (0,), {})
    procs, path = tree.children[1], (1,)
    while procs.prod == "ProcsCons":
        proc = procs.children[0]
        ret = proc.children[0].prod[1:].lower()
        lenv = decls(proc.children[1], path + (0, 1), genv)
        stmts(proc.children[2], path + (0, 2), lenv, ret)
        procs, path = procs.children[1], path + (1,)
    return bad


minic_seeds = st.integers(0, 2**32 - 1)
