"""
Counting stable and envy-free seating arrangements of agent classes.

``encode_seating`` turns an instance into a WFOMC problem whose count,
multiplied by the product of class-size factorials, is the number of
stable (or envy-free) arrangements. ``brute_force_seatings`` counts the
same thing by enumerating permutations.
"""
import itertools
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from sympy import Rational
from sympy.utilities.iterables import multiset_permutations

from src.services.fol import (
    BOTTOM, And, Atom, CardinalityConstraint, Domain, Evidence, Forall, Formula, GroundAtom, Iff, Implies, Literal,
    Not, Or, Problem, Vocabulary, conj, disj,
)

logger = logging.getLogger(__name__)

X, Y = "x", "y"
MODES = ("stable", "envy-free")
BRUTE_FORCE_CAP = 9


class SeatingInstance(BaseModel):
    """Seats 0..n-1 with an undirected seating graph; agents grouped into classes by size."""
    model_config = ConfigDict(extra="ignore")

    n: int
    edges: List[Tuple[int, int]]
    class_sizes: List[int]
    preferences: List[List[str]]
    mode: str = "stable"
    max_degree: Optional[int] = None

    @model_validator(mode="before")
    @classmethod
    def edges_from_adjacency(cls, data):
        if isinstance(data, dict) and "edges" not in data and "adjacency" in data:
            adjacency = data["adjacency"]
            items = adjacency.items() if isinstance(adjacency, dict) else enumerate(adjacency)
            data = {**data, "edges": [(int(a), int(b)) for a, nbrs in items for b in nbrs]}
            data.setdefault("n", len(adjacency))
        return data

    @field_validator("preferences", mode="before")
    @classmethod
    def validate_preferences(cls, v):
        rows = []
        for row in v:
            rows.append([str(Rational(str(p))) for p in row])
        return rows

    @field_validator("mode")
    @classmethod
    def validate_mode(cls, v):
        if v not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return v

    @model_validator(mode="after")
    def validate_instance(self):
        if self.n < 1:
            raise ValueError("a seating instance needs at least one seat")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"edge ({a}, {b}) names a seat outside 0..{self.n - 1}")
            if a == b:
                raise ValueError(f"seat {a} cannot neighbour itself")
            seen.add((min(a, b), max(a, b)))
        self.edges = sorted(seen)
        if any(s < 1 for s in self.class_sizes) or sum(self.class_sizes) != self.n:
            raise ValueError("classes must partition the agents: positive sizes summing to n")
        k = len(self.class_sizes)
        if len(self.preferences) != k:
            raise ValueError(f"expected {k} preference rows, got {len(self.preferences)}")
        for row in self.preferences:
            if len(row) == k + 1 and Rational(row[-1]) != 0:
                raise ValueError("preference for a missing neighbour must be 0")
            if len(row) not in (k, k + 1):
                raise ValueError(f"preference rows must have {k} or {k + 1} entries")
        actual = max(self.degrees(), default=0)
        if self.max_degree is not None and actual > self.max_degree:
            raise ValueError(f"seating graph has degree {actual}, above the declared maximum {self.max_degree}")
        return self

    @property
    def k(self) -> int:
        return len(self.class_sizes)

    @property
    def d(self) -> int:
        actual = max(self.degrees(), default=0)
        return actual if self.max_degree is None else self.max_degree

    def neighbours(self, v: int) -> List[int]:
        """Neighbours in ascending order; the i-th one is reached through label i+1."""
        return sorted({b for a, b in self.edges if a == v} | {a for a, b in self.edges if b == v})

    def degrees(self) -> List[int]:
        return [len(self.neighbours(v)) for v in range(self.n)]

    def pref(self, s: int, t: int) -> Rational:
        """p_s(t) for classes 0..k-1; t == k is the missing-neighbour class."""
        if t == self.k:
            return Rational(0)
        return Rational(self.preferences[s][t])

    def agent_classes(self) -> List[int]:
        return [s for s, size in enumerate(self.class_sizes) for _ in range(size)]


def _nb(i: int) -> str:
    return f"neighbor_{i + 1}"


def _cls(s: int) -> str:
    return f"class_{s + 1}"


def _marker(i: int, t: int, k: int) -> str:
    return f"neighbor_{i + 1}_is_{0 if t == k else t + 1}"


def _markers(tuple_: Sequence[int], var: str, k: int) -> Formula:
    return conj(*(Atom(_marker(i, t, k), (var,)) for i, t in enumerate(tuple_)))


def multiplier(instance: SeatingInstance) -> int:
    result = 1
    for size in instance.class_sizes:
        result *= math.factorial(size)
    return result


def encode_seating(instance: SeatingInstance, compact: bool = True) -> Tuple[Problem, int]:
    """Problem whose WFOMC times the returned multiplier counts the arrangements of ``instance.mode``."""
    k, d, n = instance.k, instance.d, instance.n
    star = range(k + 1)
    predicates: Dict[str, int] = {}
    for s in range(k):
        predicates[_cls(s)] = 1
    for i in range(d):
        for t in star:
            predicates[_marker(i, t, k)] = 1
    for i in range(d):
        predicates[_nb(i)] = 2
    predicates["envies"] = 2

    class_atoms = [Atom(_cls(s), (X,)) for s in range(k)]
    phi = [
        Forall(X, disj(*class_atoms)),
        Forall(X, conj(*(Or((Not(class_atoms[s]), Not(class_atoms[t])))
                         for s in range(k) for t in range(k) if s != t))),
        Forall(X, conj(*(disj(*(Atom(_marker(i, t, k), (X,)) for t in star)) for i in range(d)))),
        Forall(X, conj(*(Or((Not(Atom(_marker(i, s, k), (X,))), Not(Atom(_marker(i, t, k), (X,)))))
                         for i in range(d) for s in star for t in star if s != t))),
    ]
    for i in range(d):
        for s in range(k):
            phi.append(Forall(X, Forall(Y, Implies(
                And((Atom(_cls(s), (Y,)), Atom(_nb(i), (X, Y)))), Atom(_marker(i, s, k), (X,))))))

    if compact:
        envy, definitions = _compact_envy(instance, predicates)
    else:
        envy, definitions = _literal_envy(instance), []
    envies_xy = Atom("envies", (X, Y))
    gamma = [Forall(X, Forall(Y, Iff(envies_xy, envy)))]
    if instance.mode == "stable":
        gamma.append(Forall(X, Forall(Y, Or((Not(envies_xy), Not(Atom("envies", (Y, X))))))))
    else:
        gamma.append(Forall(X, Forall(Y, Not(envies_xy))))

    closed = set()
    unary = set()
    for a in range(n):
        nbrs = instance.neighbours(a)
        for i, b in enumerate(nbrs):
            closed.add(GroundAtom(_nb(i), (a, b)))
        for i in range(d):
            # a slot past the seat's degree is the missing neighbour; the others are real seats
            unary.add(Literal(GroundAtom(_marker(i, k, k), (a,)), i >= len(nbrs)))

    problem = Problem(
        vocabulary=Vocabulary(predicates),
        domain=Domain.of_size(n),
        sentence=conj(*phi, *definitions, *gamma),
        cardinality=tuple(CardinalityConstraint.simple(_cls(s), "=", size) for s, size in enumerate(instance.class_sizes)),
        evidence=Evidence(
            unary=frozenset(unary),
            closed_preds=frozenset(_nb(i) for i in range(d)),
            closed_atoms=frozenset(closed),
        ),
    )
    logger.info(f"Seating instance with n={n}, k={k}, d={d} encoded with {len(predicates)} predicates "
                f"({'compact' if compact else 'literal'} envy)")
    return problem, multiplier(instance)


def _adjacent(var_from: str, var_to: str, d: int) -> Formula:
    return disj(*(Atom(_nb(j), (var_from, var_to)) for j in range(d)))


def _literal_envy(instance: SeatingInstance) -> Formula:
    """Envy as a disjunction over class and neighbour-class tuples of both seats."""
    k, d = instance.k, instance.d
    tuples = list(itertools.product(range(k + 1), repeat=d))
    disjuncts: List[Formula] = []
    not_adjacent = Not(_adjacent(Y, X, d)) if d else conj()
    for s in range(k):
        cls_x = Atom(_cls(s), (X,))
        for t in tuples:
            current = sum((instance.pref(s, ti) for ti in t), Rational(0))
            t_x = _markers(t, X, k)
            for u in tuples:
                if current < sum((instance.pref(s, ui) for ui in u), Rational(0)):
                    disjuncts.append(conj(not_adjacent, cls_x, t_x, _markers(u, Y, k)))
                for j in range(d):
                    for c in range(k):
                        swapped = sum((instance.pref(s, ui) for i, ui in enumerate(u) if i != j), Rational(0))
                        if current < swapped + instance.pref(s, c):
                            disjuncts.append(conj(Atom(_nb(j), (Y, X)), cls_x, Atom(_cls(c), (Y,)),
                                                  t_x, _markers(u, Y, k)))
    return disj(*disjuncts) if disjuncts else BOTTOM


def _compact_envy(instance: SeatingInstance, predicates: Dict[str, int]) -> Tuple[Formula, List[Formula]]:
    """Envy through unary utility predicates, one per attainable utility value."""
    k, d = instance.k, instance.d
    tuples = list(itertools.product(range(k + 1), repeat=d))
    definitions: List[Formula] = []
    disjuncts: List[Formula] = []
    not_adjacent = Not(_adjacent(Y, X, d)) if d else conj()
    for s in range(k):
        current: Dict[Rational, List[Tuple[int, ...]]] = {}
        for t in tuples:
            current.setdefault(sum((instance.pref(s, ti) for ti in t), Rational(0)), []).append(t)
        swapped: Dict[Tuple[int, int, Rational], List[Tuple[int, ...]]] = {}
        for j in range(d):
            for c in range(k):
                for u in tuples:
                    value = sum((instance.pref(s, ui) for i, ui in enumerate(u) if i != j), Rational(0)) + instance.pref(s, c)
                    swapped.setdefault((j, c, value), []).append(u)
        values = sorted(set(current) | {v for _, _, v in swapped})
        index = {v: i for i, v in enumerate(values)}

        cur_atoms: Dict[Rational, Atom] = {}
        for v, group in sorted(current.items()):
            name = f"cur_{s + 1}_{index[v]}"
            predicates[name] = 1
            cur_atoms[v] = Atom(name, (X,))
            definitions.append(Forall(X, Iff(cur_atoms[v], disj(*(_markers(t, X, k) for t in group)))))
        swp_atoms: Dict[Tuple[int, int, Rational], Atom] = {}
        for (j, c, v), group in sorted(swapped.items()):
            name = f"swp_{s + 1}_{j + 1}_{c + 1}_{index[v]}"
            predicates[name] = 1
            swp_atoms[(j, c, v)] = Atom(name, (X,))
            definitions.append(Forall(X, Iff(swp_atoms[(j, c, v)], disj(*(_markers(u, X, k) for u in group)))))

        rename_y = lambda a: Atom(a.pred, (Y,))
        cls_x = Atom(_cls(s), (X,))
        far = [And((cur_atoms[v], rename_y(cur_atoms[w]))) for v in current for w in current if v < w]
        if far:
            disjuncts.append(conj(cls_x, not_adjacent, disj(*far)))
        for j in range(d):
            for c in range(k):
                near = [And((cur_atoms[v], rename_y(a))) for (jj, cc, w), a in swp_atoms.items()
                        if jj == j and cc == c for v in current if v < w]
                if near:
                    disjuncts.append(conj(cls_x, Atom(_nb(j), (Y, X)), Atom(_cls(c), (Y,)), disj(*near)))
    return (disj(*disjuncts) if disjuncts else BOTTOM), definitions


def brute_force_seatings(instance: SeatingInstance) -> int:
    """Count arrangements of agents to seats with no mutual envy (stable) or no envy at all.

    Envy only depends on the classes around each seat, so class layouts are
    enumerated and each valid one stands for prod |class|! agent arrangements.
    """
    n = instance.n
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force is capped at {BRUTE_FORCE_CAP} seats, got {n}")
    nbrs = [instance.neighbours(v) for v in range(n)]
    k = instance.k
    pref = [[instance.pref(s, t) for t in range(k)] for s in range(k)]

    def utility(cls: int, seat: int, layout: Sequence[int]) -> Rational:
        return sum((pref[cls][layout[w]] for w in nbrs[seat]), Rational(0))

    layouts = 0
    for layout in multiset_permutations(instance.agent_classes()):
        current = [utility(layout[v], v, layout) for v in range(n)]
        envy = [[False] * n for _ in range(n)]
        for x in range(n):
            for y in range(n):
                if x == y:
                    continue
                swapped = list(layout)
                swapped[x], swapped[y] = layout[y], layout[x]
                envy[x][y] = utility(layout[x], y, swapped) > current[x]
        if instance.mode == "stable":
            ok = not any(envy[x][y] and envy[y][x] for x in range(n) for y in range(x + 1, n))
        else:
            ok = not any(any(row) for row in envy)
        if ok:
            layouts += 1
    return layouts * multiplier(instance)
