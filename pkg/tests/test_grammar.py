import pytest

from nam.errors import GrammarSyntaxError
from nam.grammar import ConstraintId, builtin_grammar_path, parse_grammar, validate_grammar

NUMERAL = builtin_grammar_path("numeral").read_text()


def test_numeral_grammar_is_accepted(numeral):
    report = validate_grammar(numeral)
    assert report.ok, str(report)
    assert str(report) == "grammar OK: no issues"


def test_minic_grammar_is_accepted(minic):
    assert validate_grammar(minic).ok
    assert 38 <= len(minic.productions) <= 50
    assert len(minic.variable_productions) == 16


def test_right_to_left_dependency_is_one_violation():
    text = NUMERAL.replace("eq Pair bits$2.positionIn := copy(bits$1.positionIn)",
                           "eq Pair bits$2.positionIn := copy(bits$3.positionOut)")
    report = validate_grammar(parse_grammar(text))
    assert len(report.of_kind("l-attributed")) == 1
    assert len(report) == 1
    assert "Pair" in report.issues[0].where


def test_root_with_inherited_attribute():
    report = validate_grammar(parse_grammar(NUMERAL + "\nattr numeral inh seed integer\n"))
    assert len(report) == 1
    assert report.issues[0].kind == "structural"


def test_missing_and_duplicate_equations():
    missing = NUMERAL.replace("eq Zero bits.positionOut := inc(bits.positionIn)\n", "")
    assert len(validate_grammar(parse_grammar(missing)).of_kind("equation")) == 1
    dup = NUMERAL + "\neq One bits.positionOut := const(7)\n"
    assert len(validate_grammar(parse_grammar(dup)).of_kind("equation")) == 1


def test_equation_cannot_target_an_input():
    text = NUMERAL + "\neq Pair bits$1.positionIn := const(1)\n"
    assert not validate_grammar(parse_grammar(text)).ok


def test_unknown_function_and_bad_arity():
    bad_fn = NUMERAL.replace("inc(bits.positionIn)\n", "succ(bits.positionIn)\n", 1)
    assert not validate_grammar(parse_grammar(bad_fn)).ok
    bad_arity = NUMERAL.replace("copy(bits$1.positionIn)", "copy(bits$1.positionIn, bits$1.positionIn)")
    assert not validate_grammar(parse_grammar(bad_arity)).ok


def test_constraint_may_read_only_lhs_inherited(minic):
    text = minic.source + "\nconstraint Assign declared_variable member(var.env, Var0)\n"
    report = validate_grammar(parse_grammar(text))
    assert not report.ok


def test_syntax_errors_raise():
    with pytest.raises(GrammarSyntaxError):
        parse_grammar("prod Broken numeral bits\n")
    with pytest.raises(GrammarSyntaxError):
        parse_grammar("frobnicate x\n")


def test_unreachable_nonterminal_without_productions_is_fine_but_reachable_is_not():
    text = NUMERAL + "\nnonterm orphan\n"
    assert validate_grammar(parse_grammar(text)).ok
    text = NUMERAL + "\nnonterm extra\nprod Wrap : bits -> extra\n"
    report = validate_grammar(parse_grammar(text))
    assert any("extra" in i.where and i.kind == "structural" for i in report)


def test_constraint_id_aliases():
    for alias in ("cd", "c_d", "declared", "declared_variable"):
        assert ConstraintId.parse(alias) is ConstraintId.DECLARED
    assert ConstraintId.parse("ct").short == "ct"
    with pytest.raises(Exception) as info:
        ConstraintId.parse("nonsense")
    assert getattr(info.value, "code", "") == "unknown-constraint"


def test_digest_is_stable(minic):
    again = parse_grammar(minic.source)
    assert again.digest == minic.digest
