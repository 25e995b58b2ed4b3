"""
First-order front end: vocabulary, formula AST, problem-file parser and
printer, evidence data model and ground evaluation.

Formulas are immutable trees. Inside a sentence every atom argument is a
variable name (a ``str``); after grounding arguments become dense element
indices (``int``).
"""
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Set, Tuple, Union

import pyparsing as pp
from sympy import Rational

from src.services.errors import FragmentError, ProblemParseError, UnassignedAtomError

logger = logging.getLogger(__name__)

pp.ParserElement.enable_packrat()

Term = Union[str, int]


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    pred: str
    args: Tuple[Term, ...]


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: Tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    args: Tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Forall:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class CountingExists:
    op: str  # one of "=", "<=", ">="
    k: int
    var: str
    body: "Formula"


Formula = Union[Atom, Const, Not, And, Or, Implies, Iff, Forall, Exists, CountingExists]

TOP = Const(True)
BOTTOM = Const(False)
QUANTIFIERS = (Forall, Exists, CountingExists)
COUNTING_OPS = ("=", "<=", ">=")


def conj(*formulas: Formula) -> Formula:
    """Flattening conjunction with constant folding."""
    args: List[Formula] = []
    for f in formulas:
        if isinstance(f, Const):
            if not f.value:
                return BOTTOM
            continue
        if isinstance(f, And):
            args.extend(f.args)
        else:
            args.append(f)
    if not args:
        return TOP
    if len(args) == 1:
        return args[0]
    return And(tuple(args))


def disj(*formulas: Formula) -> Formula:
    """Flattening disjunction with constant folding."""
    args: List[Formula] = []
    for f in formulas:
        if isinstance(f, Const):
            if f.value:
                return TOP
            continue
        if isinstance(f, Or):
            args.extend(f.args)
        else:
            args.append(f)
    if not args:
        return BOTTOM
    if len(args) == 1:
        return args[0]
    return Or(tuple(args))


def neg(f: Formula) -> Formula:
    if isinstance(f, Const):
        return Const(not f.value)
    if isinstance(f, Not):
        return f.arg
    return Not(f)


def children(f: Formula) -> Tuple[Formula, ...]:
    if isinstance(f, (Atom, Const)):
        return ()
    if isinstance(f, Not):
        return (f.arg,)
    if isinstance(f, (And, Or)):
        return f.args
    if isinstance(f, (Implies, Iff)):
        return (f.left, f.right)
    return (f.body,)


def atoms(f: Formula) -> Iterable[Atom]:
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Atom):
            yield node
        else:
            stack.extend(children(node))


def is_quantifier_free(f: Formula) -> bool:
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, QUANTIFIERS):
            return False
        stack.extend(children(node))
    return True


def free_vars(f: Formula) -> Set[str]:
    if isinstance(f, Atom):
        return {a for a in f.args if isinstance(a, str)}
    if isinstance(f, QUANTIFIERS):
        return free_vars(f.body) - {f.var}
    result: Set[str] = set()
    for c in children(f):
        result |= free_vars(c)
    return result


def variables(f: Formula) -> List[str]:
    """All variable names in order of first appearance (bound or free)."""
    seen: List[str] = []

    def visit(node: Formula) -> None:
        if isinstance(node, QUANTIFIERS) and node.var not in seen:
            seen.append(node.var)
        if isinstance(node, Atom):
            for a in node.args:
                if isinstance(a, str) and a not in seen:
                    seen.append(a)
        for c in children(node):
            visit(c)

    visit(f)
    return seen


def substitute(f: Formula, mapping: Mapping[str, Term]) -> Formula:
    """Replace free occurrences of variables by terms."""
    if isinstance(f, Atom):
        return Atom(f.pred, tuple(mapping.get(a, a) if isinstance(a, str) else a for a in f.args))
    if isinstance(f, Const):
        return f
    if isinstance(f, Not):
        return Not(substitute(f.arg, mapping))
    if isinstance(f, And):
        return And(tuple(substitute(a, mapping) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(substitute(a, mapping) for a in f.args))
    if isinstance(f, Implies):
        return Implies(substitute(f.left, mapping), substitute(f.right, mapping))
    if isinstance(f, Iff):
        return Iff(substitute(f.left, mapping), substitute(f.right, mapping))
    inner = {k: v for k, v in mapping.items() if k != f.var}
    return replace(f, body=substitute(f.body, inner))


def rename_variables(f: Formula, mapping: Mapping[str, str]) -> Formula:
    """Bijective renaming of both bound and free variable names."""
    if isinstance(f, QUANTIFIERS):
        return replace(f, var=mapping.get(f.var, f.var), body=rename_variables(f.body, mapping))
    if isinstance(f, Atom):
        return substitute(f, mapping)
    if isinstance(f, Const):
        return f
    if isinstance(f, Not):
        return Not(rename_variables(f.arg, mapping))
    if isinstance(f, And):
        return And(tuple(rename_variables(a, mapping) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(rename_variables(a, mapping) for a in f.args))
    if isinstance(f, Implies):
        return Implies(rename_variables(f.left, mapping), rename_variables(f.right, mapping))
    return Iff(rename_variables(f.left, mapping), rename_variables(f.right, mapping))


def canonical_variables(f: Formula) -> Formula:
    """Rename the (at most two) variables to x and y in order of appearance."""
    names = variables(f)
    if len(names) > 2:
        raise FragmentError(f"sentence uses more than two variables (>2 variables): {', '.join(names)}")
    mapping = dict(zip(names, ("x", "y")))
    if all(k == v for k, v in mapping.items()):
        return f
    return rename_variables(f, mapping)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _term_text(term: Term, names: Optional[Tuple[str, ...]]) -> str:
    if isinstance(term, int):
        return names[term] if names is not None else str(term)
    return term


def to_text(f: Formula, names: Optional[Tuple[str, ...]] = None) -> str:
    """Print a formula in the problem-file syntax.

    Compound operands are always parenthesized, so parsing the result gives
    back the same tree.
    """

    def wrap(node: Formula) -> str:
        text = to_text(node, names)
        if isinstance(node, (Atom, Const, Not)):
            return text
        return f"({text})"

    if isinstance(f, Atom):
        return f"{f.pred}({','.join(_term_text(a, names) for a in f.args)})"
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return f"~{wrap(f.arg)}"
    if isinstance(f, And):
        return " & ".join(wrap(a) for a in f.args)
    if isinstance(f, Or):
        return " | ".join(wrap(a) for a in f.args)
    if isinstance(f, Implies):
        return f"{wrap(f.left)} -> {wrap(f.right)}"
    if isinstance(f, Iff):
        return f"{wrap(f.left)} <-> {wrap(f.right)}"
    if isinstance(f, Forall):
        return f"forall {f.var}: {to_text(f.body, names)}"
    if isinstance(f, Exists):
        return f"exists {f.var}: {to_text(f.body, names)}"
    return f"exists[{f.op}{f.k}] {f.var}: {to_text(f.body, names)}"


# ---------------------------------------------------------------------------
# Vocabulary, domain, evidence
# ---------------------------------------------------------------------------

class Vocabulary:
    """Ordered predicate declarations (name -> arity)."""

    def __init__(self, predicates: Optional[Mapping[str, int]] = None):
        self.predicates: Dict[str, int] = dict(predicates or {})
        for name, arity in self.predicates.items():
            if arity not in (1, 2):
                raise FragmentError(f"predicate {name}/{arity}: arity must be 1 or 2")

    def __contains__(self, name: str) -> bool:
        return name in self.predicates

    def __iter__(self):
        return iter(self.predicates)

    def __len__(self) -> int:
        return len(self.predicates)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.predicates == other.predicates

    def __repr__(self) -> str:
        return f"Vocabulary({self.predicates})"

    def arity(self, name: str) -> int:
        if name not in self.predicates:
            raise FragmentError(f"unknown predicate: {name}")
        return self.predicates[name]

    @property
    def unary(self) -> List[str]:
        return [p for p, a in self.predicates.items() if a == 1]

    @property
    def binary(self) -> List[str]:
        return [p for p, a in self.predicates.items() if a == 2]

    def fresh_name(self, base: str) -> str:
        if base not in self.predicates:
            return base
        i = 1
        while f"{base}_{i}" in self.predicates:
            i += 1
        return f"{base}_{i}"

    def extended(self, name: str, arity: int) -> "Vocabulary":
        if name in self.predicates:
            raise FragmentError(f"predicate {name} already declared")
        merged = dict(self.predicates)
        merged[name] = arity
        return Vocabulary(merged)


@dataclass(frozen=True)
class Domain:
    names: Tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise FragmentError("domain must contain at least one element")
        if len(set(self.names)) != len(self.names):
            raise FragmentError("domain element names must be unique")

    @classmethod
    def of_size(cls, n: int) -> "Domain":
        return cls(tuple(str(i) for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise FragmentError(f"unknown domain element: {name}")

    @property
    def _lookup(self) -> Dict[str, int]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {n: i for i, n in enumerate(self.names)}
            object.__setattr__(self, "_cache", cache)
        return cache


class GroundAtom(NamedTuple):
    pred: str
    args: Tuple[int, ...]


class Literal(NamedTuple):
    atom: GroundAtom
    positive: bool = True

    def negated(self) -> "Literal":
        return Literal(self.atom, not self.positive)


def consistent(literals: Iterable[Literal]) -> bool:
    """True iff no atom occurs with both polarities."""
    seen: Dict[GroundAtom, bool] = {}
    for lit in literals:
        if seen.setdefault(lit.atom, lit.positive) != lit.positive:
            return False
    return True


@dataclass(frozen=True)
class Evidence:
    unary: FrozenSet[Literal] = frozenset()
    closed_preds: FrozenSet[str] = frozenset()
    closed_atoms: FrozenSet[GroundAtom] = frozenset()
    open: FrozenSet[Literal] = frozenset()
    asym: Tuple[Tuple[GroundAtom, Rational, Rational], ...] = ()

    def is_empty(self) -> bool:
        return not (self.unary or self.closed_preds or self.closed_atoms or self.open or self.asym)

    def predicates(self) -> Set[str]:
        preds = {l.atom.pred for l in self.unary} | set(self.closed_preds)
        preds |= {a.pred for a in self.closed_atoms} | {l.atom.pred for l in self.open}
        preds |= {a.pred for a, _, _ in self.asym}
        return preds


@dataclass(frozen=True)
class CardinalityConstraint:
    """Linear constraint sum(coef * |P|) <op> bound over predicate sizes."""
    terms: Tuple[Tuple[str, int], ...]
    op: str
    bound: int

    @classmethod
    def simple(cls, pred: str, op: str, bound: int) -> "CardinalityConstraint":
        return cls(((pred, 1),), op, bound)

    @property
    def predicates(self) -> List[str]:
        return [p for p, _ in self.terms]

    def value(self, counts: Mapping[str, int]) -> int:
        return sum(c * counts.get(p, 0) for p, c in self.terms)

    def holds(self, counts: Mapping[str, int]) -> bool:
        return compare(self.value(counts), self.op, self.bound)

    def upper_bound(self) -> Optional[Tuple[Tuple[Tuple[str, int], ...], int]]:
        """(terms, max) when the constraint caps a nonnegative combination."""
        if self.op in ("=", "<=", "<") and all(c >= 0 for _, c in self.terms):
            return self.terms, self.bound - (1 if self.op == "<" else 0)
        return None

    def to_text(self) -> str:
        parts = []
        for i, (pred, coef) in enumerate(self.terms):
            sign = "-" if coef < 0 else ("+" if i else "")
            mag = abs(coef)
            scale = "" if mag == 1 else str(mag)
            parts.append(f"{sign} {scale}|{pred}|".strip() if i else f"{sign}{scale}|{pred}|")
        return f"{' '.join(parts)} {self.op} {self.bound}"


def compare(value: int, op: str, bound: int) -> bool:
    if op == "=":
        return value == bound
    if op == "<=":
        return value <= bound
    if op == ">=":
        return value >= bound
    if op == "<":
        return value < bound
    if op == ">":
        return value > bound
    raise FragmentError(f"unknown comparator: {op}")


@dataclass(frozen=True)
class MlnFormula:
    weight: Optional[Rational]  # None marks a hard formula
    formula: Formula

    @property
    def hard(self) -> bool:
        return self.weight is None


@dataclass(frozen=True)
class Decomposition:
    bags: Tuple[Tuple[int, FrozenSet[int]], ...]
    edges: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Problem:
    vocabulary: Vocabulary
    domain: Domain
    sentence: Formula = TOP
    weights: Mapping[str, Tuple[Rational, Rational]] = field(default_factory=dict)
    cardinality: Tuple[CardinalityConstraint, ...] = ()
    evidence: Evidence = Evidence()
    mln: Tuple[MlnFormula, ...] = ()
    query: Optional[str] = None
    decomposition: Optional[Decomposition] = None

    def weight(self, pred: str) -> Tuple[Rational, Rational]:
        return self.weights.get(pred, (Rational(1), Rational(1)))


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------

def _fold_right(cls, operands):
    result = operands[-1]
    for o in reversed(operands[:-1]):
        result = cls(o, result)
    return result


def _fold_left(cls, operands):
    result = operands[0]
    for o in operands[1:]:
        result = cls(result, o)
    return result


def _not_action(tokens):
    group = tokens[0]
    result = group[-1]
    for _ in group[:-1]:
        result = Not(result)
    return result


def _quantified_action(tokens):
    prefix, body = tokens[0], tokens[1]
    for q in reversed(list(prefix)):
        if q[0] == "forall":
            body = Forall(q[1], body)
        elif len(q) == 2:
            body = Exists(q[1], body)
        else:
            body = CountingExists(q[1][0], int(q[1][1]), q[2], body)
    return body


def _build_grammar() -> Dict[str, pp.ParserElement]:
    LPAR, RPAR, COLON, COMMA = map(pp.Suppress, "():,")
    FORALL = pp.Keyword("forall")
    EXISTS = pp.Keyword("exists")
    TRUE = pp.Keyword("true")
    FALSE = pp.Keyword("false")
    keyword = FORALL | EXISTS | TRUE | FALSE

    ident = ~keyword + pp.Word(pp.alphas + "_", pp.alphanums + "_")
    term = pp.Word(pp.alphanums + "_")
    integer = pp.Word(pp.nums)

    atom = (ident + LPAR + pp.Group(term + pp.ZeroOrMore(COMMA + term)) + RPAR)
    atom.set_parse_action(lambda t: Atom(t[0], tuple(t[1])))
    constant = TRUE.copy().set_parse_action(lambda: TOP) | FALSE.copy().set_parse_action(lambda: BOTTOM)

    formula = pp.Forward()
    counting = pp.Group(pp.Suppress("[") + pp.one_of("<= >= =") + integer + pp.Suppress("]"))
    quantifier = pp.Group(FORALL + ident) | pp.Group(EXISTS + pp.Optional(counting) + ident)
    quantified = pp.Group(pp.OneOrMore(quantifier)) + pp.Optional(COLON) + formula
    quantified.set_parse_action(_quantified_action)

    operand = quantified | constant | atom
    formula <<= pp.infix_notation(operand, [
        (pp.Literal("~"), 1, pp.OpAssoc.RIGHT, _not_action),
        (pp.Literal("&"), 2, pp.OpAssoc.LEFT, lambda t: And(tuple(t[0][0::2]))),
        (pp.Literal("|"), 2, pp.OpAssoc.LEFT, lambda t: Or(tuple(t[0][0::2]))),
        (pp.Literal("->"), 2, pp.OpAssoc.RIGHT, lambda t: _fold_right(Implies, list(t[0][0::2]))),
        (pp.Literal("<->"), 2, pp.OpAssoc.LEFT, lambda t: _fold_left(Iff, list(t[0][0::2]))),
    ])

    literal = pp.Optional(pp.Literal("~")) + atom
    literal.set_parse_action(lambda t: Literal(t[-1], len(t) == 1))
    literal_list = literal + pp.ZeroOrMore(COMMA + literal)

    number = pp.Regex(r"[-+]?\d+(\.\d+)?(/\d+)?")
    card_term = pp.Group(pp.Optional(pp.one_of("+ -"), default="+") + pp.Optional(integer, default="1")
                         + pp.Suppress("|") + ident + pp.Suppress("|"))
    comparator = pp.one_of("<= >= == = < > ≤ ≥")
    cardinality = pp.Group(pp.OneOrMore(card_term)) + comparator + integer

    return {
        "formula": formula,
        "literal": literal,
        "literal_list": literal_list,
        "number": number,
        "cardinality": cardinality,
        "term": term,
    }


_GRAMMAR = _build_grammar()


def _parse(kind: str, text: str, line: int = 0):
    try:
        return _GRAMMAR[kind].parse_string(text, parse_all=True)
    except pp.ParseException as e:
        raise ProblemParseError(f"syntax error: {e.msg}", line, e.col)


def parse_formula(text: str, line: int = 0) -> Formula:
    return _parse("formula", text, line)[0]


def parse_rational(text: str, line: int = 0) -> Rational:
    _parse("number", text.strip(), line)
    return Rational(text.strip())


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------

_COMPARATOR_ALIASES = {"==": "=", "≤": "<=", "≥": ">="}


class ProblemParser:
    """Line-oriented reader for the problem-file format."""

    def __init__(self):
        self.vocabulary = Vocabulary()
        self.domain: Optional[Domain] = None
        self.weights: Dict[str, Tuple[Rational, Rational]] = {}

    def parse(self, text: str) -> Problem:
        lines = []
        for number, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.split("#", 1)[0].strip()
            if stripped:
                lines.append((number, stripped))

        # declarations first so later sections may reference them in any order
        rest = []
        for number, line in lines:
            if line.startswith("domain"):
                self._parse_domain(line, number)
            elif line.startswith("predicate"):
                self._parse_predicate(line, number)
            else:
                rest.append((number, line))
        if self.domain is None:
            raise ProblemParseError("no domain declared")

        sentences: List[Formula] = []
        cardinality: List[CardinalityConstraint] = []
        unary: Set[Literal] = set()
        open_lits: Set[Literal] = set()
        closed_preds: Set[str] = set()
        closed_atoms: Set[GroundAtom] = set()
        asym: List[Tuple[GroundAtom, Rational, Rational]] = []
        mln: List[MlnFormula] = []
        query = None
        bags: Dict[int, FrozenSet[int]] = {}
        tree_edges: List[Tuple[int, int]] = []

        for number, line in rest:
            if line.startswith("sentence:"):
                sentences.append(self._sentence(line[len("sentence:"):], number))
            elif line.startswith("cardinality:"):
                cardinality.append(self._cardinality(line[len("cardinality:"):], number))
            elif line.startswith("evidence unary:"):
                unary |= set(self._literals(line[len("evidence unary:"):], number))
            elif line.startswith("evidence open:"):
                open_lits |= set(self._literals(line[len("evidence open:"):], number))
            elif line.startswith("evidence closed"):
                head, _, body = line[len("evidence closed"):].partition(":")
                pred = head.strip()
                self._check_pred(pred, None, number)
                closed_preds.add(pred)
                for lit in self._literals(body, number):
                    if not lit.positive or lit.atom.pred != pred:
                        raise ProblemParseError(f"closed-world evidence for {pred} lists only positive {pred} atoms", number)
                    closed_atoms.add(lit.atom)
            elif line.startswith("evidence asym:"):
                asym.append(self._asym(line[len("evidence asym:"):], number))
            elif line.startswith("mln:"):
                mln.append(self._mln(line[len("mln:"):], number))
            elif line.startswith("query:"):
                query = line[len("query:"):].strip()
            elif line == "decomposition:":
                continue
            elif line.startswith("bag"):
                head, _, body = line[3:].partition(":")
                bag_id = self._node_id(head, number)
                if bag_id in bags:
                    raise ProblemParseError(f"bag {bag_id} declared twice", number)
                bags[bag_id] = frozenset(self.domain.index(t) for t in body.split())
            elif line.startswith("tree"):
                parts = line.split()
                if len(parts) != 3:
                    raise ProblemParseError("tree lines read 'tree <id> <id>'", number)
                tree_edges.append((self._node_id(parts[1], number), self._node_id(parts[2], number)))
            else:
                raise ProblemParseError(f"unrecognized line: {line}", number)

        if not sentences and not mln:
            raise ProblemParseError("no sentence")
        for lits in (unary, open_lits):
            if not consistent(lits):
                logger.warning("Evidence contains an atom together with its negation")

        decomposition = None
        if bags:
            decomposition = Decomposition(tuple(sorted(bags.items())), tuple(tree_edges))

        return Problem(
            vocabulary=self.vocabulary,
            domain=self.domain,
            sentence=conj(*sentences) if sentences else TOP,
            weights=dict(self.weights),
            cardinality=tuple(cardinality),
            evidence=Evidence(
                unary=frozenset(unary),
                closed_preds=frozenset(closed_preds),
                closed_atoms=frozenset(closed_atoms),
                open=frozenset(open_lits),
                asym=tuple(asym),
            ),
            mln=tuple(mln),
            query=query,
            decomposition=decomposition,
        )

    @staticmethod
    def _node_id(text: str, number: int) -> int:
        text = text.strip()
        if not text.isdigit():
            raise ProblemParseError(f"decomposition node ids are non-negative integers, got {text!r}", number)
        return int(text)

    def _parse_domain(self, line: str, number: int) -> None:
        body = line[len("domain"):].strip()
        if body.startswith("{"):
            if not body.endswith("}"):
                raise ProblemParseError("domain set must end with '}'", number, len(line))
            names = tuple(n.strip() for n in body[1:-1].split(",") if n.strip())
            for n in names:
                _parse("term", n, number)
            try:
                self.domain = Domain(names)
            except FragmentError as e:
                raise ProblemParseError(str(e), number)
        else:
            if not body.isdigit() or int(body) < 1:
                raise ProblemParseError("domain size must be a positive integer", number)
            self.domain = Domain.of_size(int(body))

    def _parse_predicate(self, line: str, number: int) -> None:
        match = re.fullmatch(r"predicate\s+([A-Za-z_]\w*)\s*/\s*(\d+)(?:\s+weight\s+(\S+)\s+(\S+))?", line)
        if not match:
            raise ProblemParseError("predicate lines read 'predicate <name>/<arity> [weight <w> <wbar>]'", number)
        name, arity = match.group(1), int(match.group(2))
        if arity not in (1, 2):
            raise ProblemParseError(f"predicate {name}: arity must be 1 or 2", number)
        if name in self.vocabulary:
            raise ProblemParseError(f"predicate {name} declared twice", number)
        self.vocabulary = self.vocabulary.extended(name, arity)
        if match.group(3) is not None:
            self.weights[name] = (parse_rational(match.group(3), number), parse_rational(match.group(4), number))

    def _check_pred(self, pred: str, arity: Optional[int], number: int) -> None:
        if pred not in self.vocabulary:
            raise ProblemParseError(f"unknown predicate: {pred}", number)
        if arity is not None and self.vocabulary.arity(pred) != arity:
            raise ProblemParseError(f"arity mismatch for {pred}: declared {self.vocabulary.arity(pred)}, used with {arity}", number)

    def _check_formula(self, f: Formula, number: int) -> None:
        for a in atoms(f):
            self._check_pred(a.pred, len(a.args), number)

    def _sentence(self, text: str, number: int) -> Formula:
        f = parse_formula(text, number)
        self._check_formula(f, number)
        unbound = free_vars(f)
        if unbound:
            raise ProblemParseError(f"sentence mentions unbound names {sorted(unbound)}; constants belong in evidence", number)
        try:
            f = canonical_variables(f)
            check_counting_pattern(f)
        except FragmentError as e:
            raise FragmentError(f"line {number}: {str(e)}")
        return f

    def _literals(self, text: str, number: int) -> List[Literal]:
        if not text.strip():
            return []
        result = []
        for lit in _parse("literal_list", text, number):
            result.append(self._ground(lit, number))
        return result

    def _ground(self, lit: Literal, number: int) -> Literal:
        atom = lit.atom
        self._check_pred(atom.pred, len(atom.args), number)
        try:
            args = tuple(self.domain.index(str(a)) for a in atom.args)
        except FragmentError as e:
            raise ProblemParseError(str(e), number)
        return Literal(GroundAtom(atom.pred, args), lit.positive)

    def _asym(self, text: str, number: int) -> Tuple[GroundAtom, Rational, Rational]:
        parts = text.rsplit(None, 2)
        if len(parts) != 3:
            raise ProblemParseError("asym lines read '<literal> <w> <wbar>'", number)
        lits = self._literals(parts[0], number)
        if len(lits) != 1:
            raise ProblemParseError("asym lines carry exactly one literal", number)
        return lits[0].atom, parse_rational(parts[1], number), parse_rational(parts[2], number)

    def _cardinality(self, text: str, number: int) -> CardinalityConstraint:
        terms_tokens, op, bound = _parse("cardinality", text, number)
        terms: Dict[str, int] = {}
        for sign, coef, pred in terms_tokens:
            self._check_pred(pred, None, number)
            terms[pred] = terms.get(pred, 0) + (int(coef) if sign == "+" else -int(coef))
        return CardinalityConstraint(tuple(terms.items()), _COMPARATOR_ALIASES.get(op, op), int(bound))

    def _mln(self, text: str, number: int) -> MlnFormula:
        weight_text, sep, formula_text = text.partition(":")
        if not sep:
            raise ProblemParseError("mln lines read 'mln: <weight|inf> : <formula>'", number)
        weight_text = weight_text.strip()
        weight = None if weight_text in ("inf", "∞") else parse_rational(weight_text, number)
        f = parse_formula(formula_text, number)
        self._check_formula(f, number)
        try:
            f = canonical_variables(f)
        except FragmentError as e:
            raise FragmentError(f"line {number}: {str(e)}")
        return MlnFormula(weight, f)


def parse_problem(text: str) -> Problem:
    """Parse a problem file into a fully resolved :class:`Problem`."""
    return ProblemParser().parse(text)


def _bound_parser(vocabulary: Vocabulary, domain: Domain) -> ProblemParser:
    parser = ProblemParser()
    parser.vocabulary = vocabulary
    parser.domain = domain
    return parser


def parse_literals(text: str, vocabulary: Vocabulary, domain: Domain, line: int = 0) -> List[Literal]:
    """Comma-separated ground literals over the domain's element names."""
    return _bound_parser(vocabulary, domain)._literals(text, line)


def apply_query(problem: Problem, text: str) -> Problem:
    """Condition on a query: ground literals become open evidence, a closed formula is conjoined."""
    text = text.strip()
    try:
        literals = parse_literals(text, problem.vocabulary, problem.domain)
    except ProblemParseError:
        literals = None
    if literals is not None:
        evidence = replace(problem.evidence, open=problem.evidence.open | frozenset(literals))
        return replace(problem, evidence=evidence, query=None)
    parser = _bound_parser(problem.vocabulary, problem.domain)
    return replace(problem, sentence=conj(problem.sentence, parser._sentence(text, 0)), query=None)


def check_counting_pattern(f: Formula) -> None:
    """Counting quantifiers may only appear as top-level ``forall x exists[op k] y: phi``."""

    def top_conjuncts(node: Formula) -> List[Formula]:
        return [c for a in node.args for c in top_conjuncts(a)] if isinstance(node, And) else [node]

    def has_counting(node: Formula) -> bool:
        if isinstance(node, CountingExists):
            return True
        return any(has_counting(c) for c in children(node))

    for c in top_conjuncts(f):
        if not has_counting(c):
            continue
        ok = (isinstance(c, Forall) and isinstance(c.body, CountingExists)
              and c.body.var != c.var and is_quantifier_free(c.body.body))
        if not ok:
            raise FragmentError("counting quantifiers are supported only as 'forall x exists[op k] y: phi(x,y)'")


def literal_text(lit: Literal, domain: Domain) -> str:
    atom = f"{lit.atom.pred}({','.join(domain.names[i] for i in lit.atom.args)})"
    return atom if lit.positive else f"~{atom}"


def _rational_text(value: Rational) -> str:
    return str(Rational(value))


def format_problem(problem: Problem) -> str:
    """Render a problem in the file format accepted by :func:`parse_problem`."""
    lines = []
    domain = problem.domain
    if domain.names == Domain.of_size(domain.size).names:
        lines.append(f"domain {domain.size}")
    else:
        lines.append("domain {" + ", ".join(domain.names) + "}")
    for pred, arity in problem.vocabulary.predicates.items():
        line = f"predicate {pred}/{arity}"
        if pred in problem.weights:
            w, wb = problem.weights[pred]
            line += f" weight {_rational_text(w)} {_rational_text(wb)}"
        lines.append(line)
    if problem.sentence != TOP or not problem.mln:
        lines.append(f"sentence: {to_text(problem.sentence)}")
    for c in problem.cardinality:
        lines.append(f"cardinality: {c.to_text()}")
    ev = problem.evidence
    if ev.unary:
        lines.append("evidence unary: " + ", ".join(literal_text(l, domain) for l in sorted(ev.unary)))
    for pred in sorted(ev.closed_preds):
        atoms_ = sorted(a for a in ev.closed_atoms if a.pred == pred)
        lines.append(f"evidence closed {pred}: " + ", ".join(literal_text(Literal(a), domain) for a in atoms_))
    if ev.open:
        lines.append("evidence open: " + ", ".join(literal_text(l, domain) for l in sorted(ev.open)))
    for atom, w, wb in ev.asym:
        lines.append(f"evidence asym: {literal_text(Literal(atom), domain)} {_rational_text(w)} {_rational_text(wb)}")
    for m in problem.mln:
        weight = "inf" if m.hard else _rational_text(m.weight)
        lines.append(f"mln: {weight} : {to_text(m.formula)}")
    if problem.query:
        lines.append(f"query: {problem.query}")
    if problem.decomposition is not None:
        lines.append("decomposition:")
        for bag_id, bag in problem.decomposition.bags:
            lines.append(f"bag {bag_id}: " + " ".join(domain.names[i] for i in sorted(bag)))
        for u, v in problem.decomposition.edges:
            lines.append(f"tree {u} {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Ground evaluation
# ---------------------------------------------------------------------------

def eval_ground(formula: Formula, world: Mapping[GroundAtom, bool]) -> bool:
    """Evaluate a quantifier-free formula whose arguments are element indices."""
    if isinstance(formula, Atom):
        key = GroundAtom(formula.pred, tuple(formula.args))
        if key not in world:
            raise UnassignedAtomError(f"no truth value for {formula.pred}{key.args}")
        return world[key]
    if isinstance(formula, Const):
        return formula.value
    if isinstance(formula, Not):
        return not eval_ground(formula.arg, world)
    if isinstance(formula, And):
        return all(eval_ground(a, world) for a in formula.args)
    if isinstance(formula, Or):
        return any(eval_ground(a, world) for a in formula.args)
    if isinstance(formula, Implies):
        return (not eval_ground(formula.left, world)) or eval_ground(formula.right, world)
    if isinstance(formula, Iff):
        return eval_ground(formula.left, world) == eval_ground(formula.right, world)
    raise FragmentError("eval_ground expects a quantifier-free formula")
