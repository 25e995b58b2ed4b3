"""
Reduction pipeline from user problems to universally quantified UFO2
problems with closed-world binary evidence.

Every reduction here preserves the weighted model count on every domain.
Fresh predicates get names that do not clash with the user's vocabulary.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

from sympy import Rational

from src.services.errors import FragmentError
from src.services.fol import (
    TOP, And, Atom, CardinalityConstraint, Const, CountingExists, Domain, Evidence, Exists, Forall, Formula,
    GroundAtom, Iff, Implies, Literal, Not, Or, Problem, QUANTIFIERS, Vocabulary, children, conj, consistent,
    disj, free_vars, is_quantifier_free, neg, rename_variables,
)

logger = logging.getLogger(__name__)

ONE = Rational(1)
MINUS_ONE = Rational(-1)

UnaryKey = Tuple[str, bool]  # (predicate, positive); binary predicates here mean the reflexive atom


@dataclass(frozen=True)
class UfoProblem:
    """A problem of the form forall x forall y: matrix, ready for cell enumeration."""
    vocabulary: Vocabulary
    domain: Domain
    matrix: Formula
    weights: Mapping[str, Tuple[Rational, Rational]]
    cardinality: Tuple[CardinalityConstraint, ...]
    unary: Mapping[int, FrozenSet[UnaryKey]]
    closed_preds: FrozenSet[str]
    closed_atoms: FrozenSet[GroundAtom]
    asym: Mapping[GroundAtom, Tuple[Rational, Rational]] = field(default_factory=dict)
    user_predicates: FrozenSet[str] = frozenset()
    inconsistent: bool = False

    def weight(self, pred: str) -> Tuple[Rational, Rational]:
        return self.weights.get(pred, (ONE, ONE))

    @property
    def symmetric_matrix(self) -> Formula:
        return symmetric(self.matrix)


def swap_xy(f: Formula) -> Formula:
    return rename_variables(f, {"x": "y", "y": "x"})


def symmetric(matrix: Formula) -> Formula:
    """psi~(x,y) = psi(x,y) & psi(y,x)."""
    return conj(matrix, swap_xy(matrix))


def forall_closure(f: Formula) -> Formula:
    for var in sorted(free_vars(f), reverse=True):
        f = Forall(var, f)
    return f


def _other(var: str) -> str:
    return "y" if var == "x" else "x"


class _Fresh:
    """Tracks vocabulary and weight extensions while a reduction runs."""

    def __init__(self, problem: Problem):
        self.vocabulary = problem.vocabulary
        self.weights: Dict[str, Tuple[Rational, Rational]] = dict(problem.weights)

    def predicate(self, base: str, arity: int, w=ONE, wbar=ONE) -> str:
        name = self.vocabulary.fresh_name(base)
        self.vocabulary = self.vocabulary.extended(name, arity)
        if (w, wbar) != (ONE, ONE):
            self.weights[name] = (Rational(w), Rational(wbar))
        return name

    def apply(self, problem: Problem, **changes) -> Problem:
        return replace(problem, vocabulary=self.vocabulary, weights=self.weights, **changes)


# ---------------------------------------------------------------------------
# Evidence forms
# ---------------------------------------------------------------------------

def open_to_closed(evidence: Evidence, vocabulary: Vocabulary,
                   weights: Optional[Mapping[str, Tuple[Rational, Rational]]] = None
                   ) -> Tuple[Evidence, Formula, Vocabulary, Dict[str, Tuple[Rational, Rational]]]:
    """Replace open-world binary literals by closed-world atoms over fresh R_top / R_bot.

    Open literals on unary predicates and reflexive atoms move to unary
    evidence. Returns the new evidence, the extra conjunct, and the extended
    vocabulary and weights.
    """
    weights = dict(weights or {})
    unary = set(evidence.unary)
    by_pred: Dict[str, List[Literal]] = {}
    for lit in evidence.open:
        args = lit.atom.args
        if len(args) == 1 or args[0] == args[1]:
            unary.add(lit)
        else:
            by_pred.setdefault(lit.atom.pred, []).append(lit)

    closed_preds = set(evidence.closed_preds)
    closed_atoms = set(evidence.closed_atoms)
    conjuncts = []
    for pred in sorted(by_pred):
        top = vocabulary.fresh_name(f"{pred}_top")
        vocabulary = vocabulary.extended(top, 2)
        bot = vocabulary.fresh_name(f"{pred}_bot")
        vocabulary = vocabulary.extended(bot, 2)
        closed_preds |= {top, bot}
        for lit in by_pred[pred]:
            closed_atoms.add(GroundAtom(top if lit.positive else bot, lit.atom.args))
        r = Atom(pred, ("x", "y"))
        conjuncts.append(Forall("x", Forall("y", conj(
            Implies(Atom(top, ("x", "y")), r),
            Implies(Atom(bot, ("x", "y")), Not(r)),
        ))))
        logger.debug(f"Open evidence on {pred} closed over {top}/{bot} ({len(by_pred[pred])} literals)")

    closed = Evidence(
        unary=frozenset(unary),
        closed_preds=frozenset(closed_preds),
        closed_atoms=frozenset(closed_atoms),
        open=frozenset(),
        asym=evidence.asym,
    )
    return closed, conj(*conjuncts), vocabulary, weights


def closed_to_open(evidence: Evidence, domain: Domain, vocabulary: Vocabulary) -> Evidence:
    """Spell out closed-world evidence as explicit literals.

    Reflexive atoms land in unary evidence; atoms over distinct pairs land in
    open evidence.
    """
    unary = set(evidence.unary)
    open_lits = set(evidence.open)
    elements = range(domain.size)
    for pred in evidence.closed_preds:
        if vocabulary.arity(pred) == 1:
            for a in elements:
                atom = GroundAtom(pred, (a,))
                unary.add(Literal(atom, atom in evidence.closed_atoms))
            continue
        for a in elements:
            for b in elements:
                atom = GroundAtom(pred, (a, b))
                lit = Literal(atom, atom in evidence.closed_atoms)
                (unary if a == b else open_lits).add(lit)
    return Evidence(unary=frozenset(unary), open=frozenset(open_lits), asym=evidence.asym)


def close_problem_evidence(problem: Problem) -> Problem:
    """Apply :func:`open_to_closed` to a whole problem."""
    evidence, extra, vocabulary, weights = open_to_closed(problem.evidence, problem.vocabulary, problem.weights)
    if extra == TOP and evidence == problem.evidence:
        return problem
    return replace(problem, evidence=evidence, sentence=conj(problem.sentence, extra),
                   vocabulary=vocabulary, weights=weights)


# ---------------------------------------------------------------------------
# Markov logic networks
# ---------------------------------------------------------------------------

def mln_to_wfomc(problem: Problem) -> Problem:
    """Turn weighted formulas into a sentence plus weights.

    Soft weights are the exact values of exp(w_i) as written in the file.
    """
    fresh = _Fresh(problem)
    conjuncts = [problem.sentence]
    for i, item in enumerate(problem.mln):
        if item.hard:
            conjuncts.append(forall_closure(item.formula))
            continue
        free = sorted(free_vars(item.formula))
        if not free:
            raise FragmentError(f"soft formula {i} has no free variables; give it at least one")
        if len(free) > 2:
            raise FragmentError(f"soft formula {i} has more than two free variables")
        xi = fresh.predicate(f"xi{i}", len(free), item.weight, ONE)
        conjuncts.append(forall_closure(Iff(Atom(xi, tuple(free)), item.formula)))
    return fresh.apply(problem, sentence=conj(*conjuncts), mln=())


# ---------------------------------------------------------------------------
# Counting quantifiers
# ---------------------------------------------------------------------------

def _top_conjuncts(f: Formula) -> List[Formula]:
    if isinstance(f, And):
        return [c for a in f.args for c in _top_conjuncts(a)]
    return [f]


def _exactly_one(preds: List[str], var: str) -> Formula:
    atoms_ = [Atom(p, (var,)) for p in preds]
    clauses = [disj(*atoms_)]
    for i in range(len(atoms_)):
        for j in range(i + 1, len(atoms_)):
            clauses.append(Or((Not(atoms_[i]), Not(atoms_[j]))))
    return Forall(var, conj(*clauses))


def reduce_c2(problem: Problem) -> Problem:
    """Eliminate ``forall x exists[op k] y: phi`` conjuncts.

    Each x is put into a count class U_i (i = number of y with A, where
    A(x,y) <-> phi(x,y)). The K = max(i) witness relations f_1..f_K are shared
    by all classes: f_j lies inside A, is disjoint from the other witnesses
    and has a successor exactly on the rows of classes i >= j. A U_i row thus
    has at least i A-successors, and the single constraint
    |A| = sum_i i|U_i| makes that exact. Each witness then picks one
    successor, in i! orders per row, which the weight 1/i! on U_i cancels.
    For ``>=`` the classes below k carry weight -1 and an extra unconstrained
    class carries weight 1; A then only counts rows outside that class.
    """
    fresh = _Fresh(problem)
    kept: List[Formula] = []
    constraints = list(problem.cardinality)
    counter = 0
    for c in _top_conjuncts(problem.sentence):
        if not (isinstance(c, Forall) and isinstance(c.body, CountingExists)):
            if _has_counting(c):
                raise FragmentError("counting quantifiers are supported only as 'forall x exists[op k] y: phi(x,y)'")
            kept.append(c)
            continue
        q = c.body
        x, y = c.var, q.var
        if x == y or not is_quantifier_free(q.body):
            raise FragmentError("counting quantifier must bind the second variable over a quantifier-free formula")
        if q.op == ">=" and q.k == 0:
            continue
        counter += 1
        tag = f"c{counter}"
        phi = rename_variables(q.body, {x: "x", y: "y"}) if (x, y) != ("x", "y") else q.body

        if q.op == "=":
            classes, sign, catch_all = [q.k], ONE, False
        elif q.op == "<=":
            classes, sign, catch_all = list(range(q.k + 1)), ONE, False
        else:
            classes, sign, catch_all = list(range(q.k)), MINUS_ONE, True
        top = max(classes)

        units: Dict[int, Atom] = {}
        for i in classes:
            units[i] = Atom(fresh.predicate(f"cls_{tag}_{i}", 1, sign * Rational(1, math.factorial(i)), ONE), ("x",))
        class_preds = [u.pred for u in units.values()]
        if catch_all:
            rest = fresh.predicate(f"cls_{tag}_rest", 1)
            class_preds.append(rest)
            a_pred = fresh.predicate(f"cnt_{tag}", 2)
            kept.append(Forall("x", Forall("y", Iff(Atom(a_pred, ("x", "y")),
                                                    conj(Not(Atom(rest, ("x",))), phi)))))
        elif isinstance(phi, Atom) and phi.args == ("x", "y"):
            a_pred = phi.pred
        else:
            a_pred = fresh.predicate(f"cnt_{tag}", 2)
            kept.append(Forall("x", Forall("y", Iff(Atom(a_pred, ("x", "y")), phi))))
        a_xy = Atom(a_pred, ("x", "y"))

        if 0 in units:
            kept.append(Forall("x", Forall("y", Or((Not(units[0]), Not(a_xy))))))
        if top > 0:
            constraints.append(CardinalityConstraint(
                ((a_pred, 1),) + tuple((units[i].pred, -i) for i in classes if i > 0), "=", 0))
        # a single witness is A itself
        witnesses = [a_pred] if top == 1 else [fresh.predicate(f"wit_{tag}_{j}", 2) for j in range(1, top + 1)]
        for j, f_j in enumerate(witnesses, start=1):
            uses = [i for i in classes if i >= j]
            in_use = disj(*(units[i] for i in uses))
            f_xy = Atom(f_j, ("x", "y"))
            kept.append(Forall("x", Exists("y", Or((neg(in_use), f_xy)))))
            if f_j != a_pred:
                kept.append(Forall("x", Forall("y", Implies(f_xy, conj(a_xy, in_use)))))
        for j in range(len(witnesses)):
            for l in range(j + 1, len(witnesses)):
                kept.append(Forall("x", Forall("y", Or((
                    Not(Atom(witnesses[j], ("x", "y"))), Not(Atom(witnesses[l], ("x", "y"))))))))
        kept.append(_exactly_one(class_preds, "x"))
        logger.debug(f"Counting quantifier exists[{q.op}{q.k}] reduced with {len(class_preds)} count classes "
                     f"and {len(witnesses) if top else 0} witnesses")

    return fresh.apply(problem, sentence=conj(*kept), cardinality=tuple(constraints))


def _has_counting(f: Formula) -> bool:
    if isinstance(f, CountingExists):
        return True
    return any(_has_counting(c) for c in children(f))


# ---------------------------------------------------------------------------
# Skolemization
# ---------------------------------------------------------------------------

def skolemize_fo2(problem: Problem) -> Problem:
    """Remove existential quantifiers while preserving the weighted count.

    ``forall u exists v: phi`` becomes ``forall u forall v: Z(u) | ~phi`` with
    w(Z)=1, wbar(Z)=-1. Nested quantified subformulas are first named by
    fresh unary predicates defined in both directions.
    """
    if _has_counting(problem.sentence):
        raise FragmentError("counting quantifiers must be reduced before Skolemization")
    fresh = _Fresh(problem)
    universal: List[Formula] = []
    pending = list(_top_conjuncts(problem.sentence))
    while pending:
        c = pending.pop(0)
        body, bound = _strip_universal(c)
        if is_quantifier_free(body):
            universal.append(c)
            continue
        if isinstance(body, Exists) and is_quantifier_free(body.body):
            # forall u exists v: phi, possibly with u vacuous
            v = body.var
            u = _other(v)
            z = fresh.predicate("skolem", 1, ONE, MINUS_ONE)
            universal.append(Forall(u, Forall(v, Or((Atom(z, (u,)), neg(body.body))))))
            continue
        definitions: List[Formula] = []
        named = _name_quantified(body, fresh, definitions)
        universal.append(forall_closure(named))
        pending.extend(definitions)
    return fresh.apply(problem, sentence=conj(*universal))


def _strip_universal(f: Formula) -> Tuple[Formula, List[str]]:
    bound = []
    while isinstance(f, Forall):
        bound.append(f.var)
        f = f.body
    return f, bound


def _name_quantified(f: Formula, fresh: _Fresh, definitions: List[Formula]) -> Formula:
    """Replace every quantified subformula by a fresh unary atom, innermost first."""
    if isinstance(f, (Atom, Const)):
        return f
    if isinstance(f, QUANTIFIERS):
        body = _name_quantified(f.body, fresh, definitions)
        v = f.var
        u = _other(v)
        a = fresh.predicate("def", 1)
        au = Atom(a, (u,))
        if isinstance(f, Forall):
            definitions.append(Forall(u, Forall(v, Or((Not(au), body)))))
            definitions.append(Forall(u, Exists(v, Or((au, neg(body))))))
        else:
            definitions.append(Forall(u, Exists(v, Or((Not(au), body)))))
            definitions.append(Forall(u, Forall(v, Or((neg(body), au)))))
        return au
    if isinstance(f, Not):
        return Not(_name_quantified(f.arg, fresh, definitions))
    if isinstance(f, And):
        return And(tuple(_name_quantified(a, fresh, definitions) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(_name_quantified(a, fresh, definitions) for a in f.args))
    if isinstance(f, Implies):
        return Implies(_name_quantified(f.left, fresh, definitions), _name_quantified(f.right, fresh, definitions))
    return Iff(_name_quantified(f.left, fresh, definitions), _name_quantified(f.right, fresh, definitions))


def to_matrix(sentence: Formula) -> Formula:
    """Quantifier-free psi(x,y) of a universally quantified sentence."""
    bodies = []
    for c in _top_conjuncts(sentence):
        body, _ = _strip_universal(c)
        if not is_quantifier_free(body):
            raise FragmentError("to_matrix expects a universally quantified sentence")
        bodies.append(body)
    return conj(*bodies)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def route_evidence(problem: Problem) -> Tuple[Dict[int, FrozenSet[UnaryKey]], FrozenSet[str], FrozenSet[GroundAtom], bool]:
    """Per-element unary literals and closed binary atoms over distinct pairs.

    Closed-world predicates contribute their reflexive defaults to the unary
    side. The flag reports inconsistent unary evidence.
    """
    ev = problem.evidence
    unary: Dict[int, Set[UnaryKey]] = {}
    literals = set(ev.unary)
    closed_binary = set()
    for pred in ev.closed_preds:
        if problem.vocabulary.arity(pred) == 1:
            for a in range(problem.domain.size):
                atom = GroundAtom(pred, (a,))
                literals.add(Literal(atom, atom in ev.closed_atoms))
        else:
            closed_binary.add(pred)
            for a in range(problem.domain.size):
                atom = GroundAtom(pred, (a, a))
                literals.add(Literal(atom, atom in ev.closed_atoms))
    inconsistent = not consistent(literals)
    for lit in literals:
        args = lit.atom.args
        if len(args) == 2 and args[0] != args[1]:
            raise FragmentError(f"unary evidence literal {lit.atom.pred}{args} mentions two elements")
        unary.setdefault(args[0], set()).add((lit.atom.pred, lit.positive))
    pair_atoms = frozenset(a for a in ev.closed_atoms if len(a.args) == 2 and a.args[0] != a.args[1])
    return ({a: frozenset(s) for a, s in unary.items()}, frozenset(closed_binary), pair_atoms, inconsistent)


def prepare(problem: Problem) -> UfoProblem:
    """Run every reduction and return the universally quantified form."""
    t = time.time()
    user_preds = frozenset(problem.vocabulary)
    unknown = problem.evidence.predicates() - user_preds
    if unknown:
        raise FragmentError(f"evidence mentions undeclared predicates: {sorted(unknown)}")

    if problem.mln:
        problem = mln_to_wfomc(problem)
    problem = close_problem_evidence(problem)
    problem = reduce_c2(problem)
    problem = skolemize_fo2(problem)
    matrix = to_matrix(problem.sentence)

    unary, closed_preds, closed_atoms, inconsistent = route_evidence(problem)
    if inconsistent:
        logger.warning("Unary evidence is inconsistent; the weighted count is 0")
    asym: Dict[GroundAtom, Tuple[Rational, Rational]] = {}
    for atom, w, wb in problem.evidence.asym:
        asym[atom] = (Rational(w), Rational(wb))

    logger.info(f"Normalization completed in {time.time() - t:.2f} seconds: "
                f"{len(problem.vocabulary)} predicates, {len(problem.cardinality)} cardinality constraints")
    return UfoProblem(
        vocabulary=problem.vocabulary,
        domain=problem.domain,
        matrix=matrix,
        weights=dict(problem.weights),
        cardinality=problem.cardinality,
        unary=unary,
        closed_preds=closed_preds,
        closed_atoms=closed_atoms,
        asym=asym,
        user_predicates=user_preds,
        inconsistent=inconsistent,
    )
