"""
Exact weight ring.

Without cardinality constraints ring elements are QQ rationals. With
constraints they are sparse polynomials over QQ with one indeterminate per
constrained predicate: every positive literal of a constrained predicate
contributes one factor of its indeterminate, and the answer is read off the
monomials whose exponents satisfy the constraints.
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from sympy import Rational
from sympy.polys.domains import QQ
from sympy.polys.orderings import lex
from sympy.polys.rings import PolyElement, ring

from src.services.errors import FragmentError
from src.services.fol import CardinalityConstraint, compare

logger = logging.getLogger(__name__)


class WeightRing:
    def __init__(self, constrained: Sequence[str] = (), constraints: Sequence[CardinalityConstraint] = ()):
        self.symbols: Tuple[str, ...] = tuple(dict.fromkeys(constrained))
        self.constraints = tuple(constraints)
        if self.symbols:
            generated = ring([f"c{i}" for i in range(len(self.symbols))], QQ, lex)
            self.poly_ring = generated[0]
            self._gens = dict(zip(self.symbols, generated[1:]))
            self.one = self.poly_ring.one
            self.zero = self.poly_ring.zero
        else:
            self.poly_ring = None
            self._gens = {}
            self.one = QQ.one
            self.zero = QQ.zero
        self._caps = self._upper_caps()

    @classmethod
    def for_constraints(cls, constraints: Sequence[CardinalityConstraint]) -> "WeightRing":
        preds: List[str] = []
        for c in constraints:
            preds.extend(c.predicates)
        return cls(preds, constraints)

    @property
    def symbolic(self) -> bool:
        return self.poly_ring is not None

    def coerce(self, value) -> object:
        """Lift an exact rational (sympy Rational, int or QQ element) into the ring."""
        if self.poly_ring is not None:
            if isinstance(value, PolyElement):
                return value
            return self.poly_ring.ground_new(QQ.convert(Rational(value)) if not _is_qq(value) else value)
        if _is_qq(value):
            return value
        return QQ.from_sympy(Rational(value))

    def indeterminate(self, pred: str):
        return self._gens.get(pred, self.one)

    def literal_weight(self, pred: str, positive: bool, w, wbar):
        if positive:
            return self.coerce(w) * self.indeterminate(pred)
        return self.coerce(wbar)

    def pow(self, base, exponent: int):
        if exponent == 0:
            return self.one
        if exponent == 1:
            return base
        return base ** exponent

    def is_zero(self, value) -> bool:
        return not value

    # -- constraint handling -------------------------------------------------

    def _upper_caps(self) -> List[Tuple[Tuple[Tuple[int, int], ...], int]]:
        caps = []
        index = {p: i for i, p in enumerate(self.symbols)}
        for c in self.constraints:
            bound = c.upper_bound()
            if bound is not None:
                terms, limit = bound
                caps.append((tuple((index[p], coef) for p, coef in terms if p in index), limit))
        return caps

    def truncate(self, value):
        """Drop monomials that already exceed a monotone upper bound."""
        if self.poly_ring is None or not self._caps or not value:
            return value
        kept = {m: c for m, c in value.items()
                if all(sum(m[i] * coef for i, coef in terms) <= limit for terms, limit in self._caps)}
        if len(kept) == len(value):
            return value
        return self.poly_ring.from_dict(kept)

    def monomials(self, value) -> Iterable[Tuple[Dict[str, int], object]]:
        if self.poly_ring is None:
            yield {}, value
            return
        for monom, coeff in value.items():
            yield dict(zip(self.symbols, monom)), coeff

    def evaluate_at_ones(self, value):
        """Substitute 1 for every indeterminate."""
        if self.poly_ring is None:
            return value
        return sum((c for _, c in value.items()), QQ.zero)

    def to_rational(self, value) -> Rational:
        if self.poly_ring is not None:
            if not value.is_ground:
                raise FragmentError("value still carries cardinality indeterminates")
            value = value.get(self.poly_ring.zero_monom, QQ.zero)
        return QQ.to_sympy(value)


def _is_qq(value) -> bool:
    try:
        return QQ.of_type(value)
    except Exception:
        return False


def extract_cardinality(value, weight_ring: WeightRing,
                        constraints: Optional[Sequence[CardinalityConstraint]] = None) -> Rational:
    """Sum the coefficients of monomials whose exponents satisfy every constraint."""
    constraints = weight_ring.constraints if constraints is None else tuple(constraints)
    for c in constraints:
        for pred in c.predicates:
            if pred not in weight_ring.symbols:
                raise FragmentError(f"cardinality constraint on {pred}, which carries no indeterminate")
    if weight_ring.poly_ring is None:
        return weight_ring.to_rational(value)
    total = QQ.zero
    for exponents, coeff in weight_ring.monomials(value):
        if all(compare(c.value(exponents), c.op, c.bound) for c in constraints):
            total += coeff
    return QQ.to_sympy(total)


def count_distribution(value, weight_ring: WeightRing) -> Dict[Tuple[int, ...], Rational]:
    """Exponent vector -> coefficient, for reporting predicate-size distributions."""
    return {tuple(e[p] for p in weight_ring.symbols): QQ.to_sympy(c) for e, c in weight_ring.monomials(value)}
