import pytest
from sympy import Rational

from conftest import R_OR_S
from src.services.errors import FragmentError, ProblemParseError, UnassignedAtomError
from src.services.fol import (
    Atom, CardinalityConstraint, CountingExists, Forall, GroundAtom, Literal, Or, TOP, apply_query, conj, consistent,
    disj, eval_ground, format_problem, parse_formula, parse_problem,
)


def test_parse_r_or_s():
    problem = parse_problem(R_OR_S.format(n=3))
    assert problem.domain.size == 3
    assert problem.vocabulary.arity("R") == 1
    assert problem.vocabulary.arity("S") == 2
    assert problem.weight("R") == (Rational(2), Rational(1))
    assert problem.weight("S") == (Rational(3), Rational(1))
    assert problem.sentence == Forall("x", Forall("y", Or((Atom("R", ("x",)), Atom("S", ("x", "y"))))))


def test_undeclared_weight_defaults_to_one():
    problem = parse_problem("domain 2\npredicate P/1\nsentence: forall x: P(x) | ~P(x)\n")
    assert problem.weight("P") == (Rational(1), Rational(1))


def test_named_domain_and_evidence():
    text = """
    domain {alice, bob, carol}
    predicate smokes/1
    predicate friends/2
    sentence: forall x forall y: friends(x,y) -> friends(y,x)
    evidence unary: smokes(alice), ~smokes(bob)
    evidence closed friends: friends(alice,bob), friends(bob,alice)
    evidence asym: smokes(carol) 3 1/2
    """
    problem = parse_problem(text)
    ev = problem.evidence
    assert Literal(GroundAtom("smokes", (0,)), True) in ev.unary
    assert Literal(GroundAtom("smokes", (1,)), False) in ev.unary
    assert ev.closed_preds == frozenset({"friends"})
    assert GroundAtom("friends", (1, 0)) in ev.closed_atoms
    assert ev.asym == ((GroundAtom("smokes", (2,)), Rational(3), Rational(1, 2)),)


def test_parse_error_reports_line():
    with pytest.raises(ProblemParseError) as info:
        parse_problem("domain 2\npredicate P/1\nsentence: forall x: P(x\n")
    assert info.value.line == 3


@pytest.mark.parametrize("text", [
    "domain 2\npredicate P/1\nsentence: forall x: Q(x)\n",
    "domain 2\npredicate P/1\nsentence: forall x forall y: P(x,y)\n",
    "predicate P/1\nsentence: forall x: P(x)\n",
    "domain 2\npredicate P/1\nsentence: P(x)\n",
    "domain 2\npredicate P/3\nsentence: true\n",
])
def test_malformed_problems(text):
    with pytest.raises(ProblemParseError):
        parse_problem(text)


def test_three_variables_are_rejected():
    with pytest.raises(FragmentError):
        parse_problem("domain 2\npredicate E/2\nsentence: forall x forall y forall z: E(x,y) | E(y,z)\n")


def test_nested_counting_is_rejected():
    with pytest.raises(FragmentError):
        parse_problem("domain 2\npredicate E/2\nsentence: exists x: forall y: exists[=1] x: E(x,y)\n")


def test_counting_quantifier_and_cardinality():
    text = """
    domain 4
    predicate R/2
    predicate P/1
    sentence: forall x: exists[<=2] y: R(x,y)
    cardinality: |P| + 2|R| >= 3
    """
    problem = parse_problem(text)
    assert problem.sentence == Forall("x", CountingExists("<=", 2, "y", Atom("R", ("x", "y"))))
    (constraint,) = problem.cardinality
    assert constraint == CardinalityConstraint((("P", 1), ("R", 2)), ">=", 3)
    assert constraint.holds({"P": 1, "R": 1})
    assert not constraint.holds({"P": 2})


def test_variables_are_canonical():
    problem = parse_problem("domain 2\npredicate E/2\nsentence: forall u forall v: E(u,v) -> E(v,u)\n")
    assert problem.sentence == parse_formula("forall x forall y: E(x,y) -> E(y,x)")


def test_format_problem_parses_back():
    text = """
    domain {a, b, c}
    predicate P/1 weight 2 -1
    predicate E/2
    sentence: forall x forall y: (E(x,y) & P(x)) -> ~P(y)
    sentence: forall x: exists y: E(x,y)
    cardinality: |P| = 1
    evidence unary: ~P(c)
    evidence closed E: E(a,b)
    mln: 3/2 : P(x) & E(x,y)
    query: P(a)
    bag 0: a b
    bag 1: c
    tree 0 1
    """
    problem = parse_problem(text)
    again = parse_problem(format_problem(problem))
    assert again == problem
    assert "decomposition:\nbag 0: a b\n" in format_problem(problem)


DECOMPOSED = "domain {a, b, c}\npredicate E/2\nsentence: true\n"


def test_decomposition_section_header():
    plain = parse_problem(DECOMPOSED + "bag 0: a b\nbag 1: b c\ntree 0 1\n")
    headed = parse_problem(DECOMPOSED + "decomposition:\nbag 0: a b\nbag 1: b c\ntree 0 1\n")
    assert headed.decomposition == plain.decomposition
    assert headed.decomposition.edges == ((0, 1),)


@pytest.mark.parametrize("lines, line", [
    ("bag x: a b\n", 4),
    ("bag 0: a b\ntree 0 one\n", 5),
    ("bag 0: a\nbag 0: b\n", 5),
    ("bag -1: a\n", 4),
])
def test_bad_decomposition_lines_report_position(lines, line):
    with pytest.raises(ProblemParseError) as exc:
        parse_problem(DECOMPOSED + lines)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_apply_query_literals_become_open_evidence():
    problem = parse_problem("domain {a, b}\npredicate P/1\nsentence: true\n")
    conditioned = apply_query(problem, "P(a), ~P(b)")
    assert conditioned.evidence.open == frozenset({
        Literal(GroundAtom("P", (0,)), True), Literal(GroundAtom("P", (1,)), False)})
    assert conditioned.sentence == TOP


def test_apply_query_formula_is_conjoined():
    problem = parse_problem("domain {a, b}\npredicate P/1\nsentence: true\n")
    conditioned = apply_query(problem, "exists x: P(x)")
    assert conditioned.sentence == parse_formula("exists x: P(x)")


def test_conj_disj_fold_constants():
    p = Atom("P", ("x",))
    assert conj() == TOP
    assert conj(p, TOP) == p
    assert disj(p, TOP) == TOP
    assert conj(p, parse_formula("false")).value is False


def test_eval_ground():
    f = Or((Atom("P", (0,)), Atom("E", (0, 1))))
    world = {GroundAtom("P", (0,)): False, GroundAtom("E", (0, 1)): True}
    assert eval_ground(f, world)
    with pytest.raises(UnassignedAtomError):
        eval_ground(Atom("P", (1,)), world)


def test_consistent_literal_sets():
    p0, q0 = GroundAtom("P", (0,)), GroundAtom("Q", (0,))
    assert consistent([Literal(p0), Literal(q0, False), Literal(p0)])
    assert not consistent([Literal(p0), Literal(q0), Literal(p0, False)])
    assert consistent([])
