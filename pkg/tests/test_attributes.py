import pytest
from hypothesis import given, settings

from conftest import minic_seeds, numeral_trees, random_derivation, walker_violations
from nam.attributes import check_tree, evaluate_attributes, is_legal
from nam.errors import MalformedTree, UnknownConstraint
from nam.grammar import parse_grammar
from nam.tree import AstTree, parse_term

PROC = "ProcsCons(Proc(TInt,DeclsNil,StmtsCons({stmt},StmtsNil)),ProcsNil)"


def leaf_positions(attributed):
    return [n.syn["positionOut"] for _, n in attributed.preorder() if not n.children
            and n.tree.nonterminal == "bits"]


def test_numeral_threading(numeral):
    a = evaluate_attributes(numeral, parse_term("Numeral(Pair(Pair(One,Zero),One))", numeral))
    assert leaf_positions(a) == [1, 2, 3]
    assert a.children[0].syn["positionOut"] == 3


def test_single_leaf(numeral):
    a = evaluate_attributes(numeral, parse_term("Numeral(One)", numeral))
    assert leaf_positions(a) == [1]
    assert a.children[0].inh["positionIn"] == 0


@settings(max_examples=300)
@given(numeral_trees)
def test_leaf_k_gets_position_k(numeral, t):
    n_leaves = sum(1 for _, n in t.preorder() if not n.children)
    assert leaf_positions(evaluate_attributes(numeral, t)) == list(range(1, n_leaves + 1))


def test_each_node_entered_and_left_once_in_order(numeral):
    t = parse_term("Numeral(Pair(Pair(One,Zero),One))", numeral)
    events = []
    evaluate_attributes(numeral, t, on_visit=lambda kind, path: events.append((kind, path)))
    enters = [p for k, p in events if k == "enter"]
    assert enters == [p for p, _ in t.preorder()]
    assert sorted(p for k, p in events if k == "exit") == sorted(enters)
    assert len(events) == 2 * t.size()


@settings(max_examples=60, deadline=None)
@given(minic_seeds)
def test_single_pass_never_reads_unset_attribute(minic, seed):
    t = random_derivation(minic, seed)
    a1 = evaluate_attributes(minic, t)
    a2 = evaluate_attributes(minic, t)
    for (_, x), (_, y) in zip(a1.preorder(), a2.preorder()):
        assert x.inh == y.inh and x.syn == y.syn
    # every declared attribute got a value
    for _, node in a1.preorder():
        for d in minic.attrs(node.tree.nonterminal):
            assert d.name in (node.inh if d.direction == "inh" else node.syn)


def test_lhs_mismatch_is_malformed(numeral):
    bad = AstTree("numeral", "Numeral", [AstTree("numeral", "One")])
    with pytest.raises(MalformedTree):
        evaluate_attributes(numeral, bad)
    with pytest.raises(MalformedTree):
        evaluate_attributes(numeral, AstTree("numeral", "Pair", []))


def test_declared_then_used_is_legal(minic):
    t = parse_term("Program(DeclsCons(Decl(TInt,Var0),DeclsNil),"
                   + PROC.format(stmt="Assign(Var0,Use(Var0))") + ")", minic)
    assert check_tree(minic, t, "cd") == []
    assert check_tree(minic, t, "ct") == []


def test_undeclared_use_is_one_violation_at_the_use(minic):
    t = parse_term("Program(DeclsCons(Decl(TInt,Var0),DeclsNil),"
                   + PROC.format(stmt="Assign(Var0,Use(Var3))") + ")", minic)
    v = check_tree(minic, t, "cd")
    assert len(v) == 1
    assert t.at(v[0].path).prod == "Var3"
    assert "Var3" in v[0].message


def test_type_mismatch_is_a_typesafe_violation_only(minic):
    t = parse_term("Program(DeclsCons(Decl(TInt,Var0),DeclsCons(Decl(TChar,Var1),DeclsNil)),"
                   + PROC.format(stmt="Assign(Var0,Use(Var1))") + ")", minic)
    assert check_tree(minic, t, "cd") == []
    v = check_tree(minic, t, "ct")
    assert [t.at(x.path).prod for x in v] == ["Var1"]


def test_guard_failure_counts_once_per_node(minic):
    # nothing declared: the statement itself and its variable both fail c_d
    t = parse_term("Program(DeclsNil," + PROC.format(stmt="Incr(Var0)") + ")", minic)
    v = check_tree(minic, t, "cd")
    assert sorted(t.at(x.path).prod for x in v) == ["Incr", "Var0"]
    assert len({x.path for x in v}) == len(v)


def test_unknown_constraint(minic, small_corpus):
    with pytest.raises(UnknownConstraint):
        check_tree(minic, small_corpus.train[0], "no_such_constraint")


def test_two_failing_checks_give_one_violation():
    g = parse_grammar("""
root s
nonterm s
attr s syn ok boolean
prod S : s ->
eq S s.ok := const(false)
constraint S declared_variable eq(1, 2)
constraint S declared_variable eq(3, 4)
""")
    assert len(check_tree(g, AstTree("s", "S"), "cd")) == 1


def test_corpus_trees_agree_with_walker(minic, small_corpus):
    for t in small_corpus.trees:
        for c in ("cd", "ct"):
            assert {v.path for v in check_tree(minic, t, c)} == walker_violations(t, c) == set()


@settings(max_examples=150, deadline=None)
@given(minic_seeds)
def test_checker_matches_walker_on_random_trees(minic, seed):
    t = random_derivation(minic, seed, max_nodes=200)
    for c in ("cd", "ct"):
        assert {v.path for v in check_tree(minic, t, c)} == walker_violations(t, c)
        assert is_legal(minic, t, c) == (not walker_violations(t, c))
