import pytest
from sympy import Rational
from sympy.polys.domains import QQ

from src.services.errors import FragmentError
from src.services.fol import CardinalityConstraint
from src.services.weights import WeightRing, count_distribution, extract_cardinality


def test_unconstrained_ring_is_rational():
    ring = WeightRing()
    assert not ring.symbolic
    value = ring.coerce(Rational(3, 4)) * ring.coerce(2)
    assert extract_cardinality(value, ring) == Rational(3, 2)


def binomial_sum(ring, pred, n, w=Rational(1)):
    """(w * c + 1)^n: n elements, each either in pred or not."""
    element = ring.literal_weight(pred, True, w, 1) + ring.literal_weight(pred, False, w, 1)
    return ring.pow(element, n)


def test_extract_exact_size():
    constraint = CardinalityConstraint.simple("P", "=", 2)
    ring = WeightRing.for_constraints([constraint])
    value = binomial_sum(ring, "P", 4)
    assert extract_cardinality(value, ring) == 6
    assert ring.to_rational(ring.coerce(ring.evaluate_at_ones(value))) == 16


def test_extract_linear_constraint():
    c = CardinalityConstraint((("P", 1), ("Q", -2)), "=", 0)
    ring = WeightRing.for_constraints([c])
    value = binomial_sum(ring, "P", 4) * binomial_sum(ring, "Q", 2)
    # |P| = 2|Q|: (0,0), (2,1), (4,2)
    assert extract_cardinality(value, ring) == 1 + 6 * 2 + 1


def test_truncate_drops_monomials_over_upper_bound():
    constraint = CardinalityConstraint.simple("P", "<=", 1)
    ring = WeightRing.for_constraints([constraint])
    value = ring.truncate(binomial_sum(ring, "P", 3, Rational(2)))
    assert count_distribution(value, ring) == {(0,): 1, (1,): 6}
    assert extract_cardinality(value, ring) == 7


def test_greater_equal_keeps_everything():
    constraint = CardinalityConstraint.simple("P", ">=", 2)
    ring = WeightRing.for_constraints([constraint])
    value = binomial_sum(ring, "P", 3)
    assert ring.truncate(value) == value
    assert extract_cardinality(value, ring) == 4


def test_zero_detection():
    ring = WeightRing.for_constraints([CardinalityConstraint.simple("P", "=", 1)])
    assert ring.is_zero(ring.zero)
    assert not ring.is_zero(ring.indeterminate("P"))
    assert ring.is_zero(WeightRing().coerce(QQ(0)))


def test_rational_conversion_goes_through_the_ring():
    ring = WeightRing.for_constraints([CardinalityConstraint.simple("P", "<=", 2)])
    value = binomial_sum(ring, "P", 2, Rational(1, 2))
    distribution = count_distribution(value, ring)
    assert distribution == {(0,): 1, (1,): 1, (2,): Rational(1, 4)}
    assert all(isinstance(c, Rational) for c in distribution.values())
    assert ring.to_rational(ring.coerce(Rational(5, 3))) == Rational(5, 3)
    with pytest.raises(FragmentError):
        ring.to_rational(value)
