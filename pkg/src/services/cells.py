"""
1-types, 2-tables, compatibility sets and the (refined) r-matrix.

A 1-type is a tuple of truth values over ``CellStructure.unary_atoms``
(unary predicates and reflexive binary atoms); a 2-table is a tuple over
``CellStructure.table_atoms`` (both directions of every binary predicate).
Enumeration simplifies the matrix as atoms get fixed, so branches that
falsify it are cut early.
"""
import logging
import time
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from sympy import Rational

from src.services.fol import (
    BOTTOM, TOP, And, Atom, Const, Formula, GroundAtom, Iff, Implies, Literal, Not, Or, atoms, conj, disj, neg,
    substitute,
)
from src.services.normalize import UfoProblem, swap_xy
from src.services.weights import WeightRing

logger = logging.getLogger(__name__)

OneType = Tuple[bool, ...]
TwoTable = Tuple[bool, ...]
UnaryAtom = Tuple[str, bool]  # (predicate, reflexive binary)
TableAtom = Tuple[str, bool]  # (predicate, forward): forward is R(x,y), otherwise R(y,x)


def simplify(f: Formula, values: Mapping[Atom, bool]) -> Formula:
    """Substitute known atom values and fold constants."""
    if isinstance(f, Atom):
        v = values.get(f)
        return f if v is None else Const(v)
    if isinstance(f, Const):
        return f
    if isinstance(f, Not):
        return neg(simplify(f.arg, values))
    if isinstance(f, And):
        return conj(*(simplify(a, values) for a in f.args))
    if isinstance(f, Or):
        return disj(*(simplify(a, values) for a in f.args))
    if isinstance(f, Implies):
        left = simplify(f.left, values)
        if left == BOTTOM:
            return TOP
        right = simplify(f.right, values)
        if left == TOP:
            return right
        if right == TOP:
            return TOP
        if right == BOTTOM:
            return neg(left)
        return Implies(left, right)
    if isinstance(f, Iff):
        left = simplify(f.left, values)
        right = simplify(f.right, values)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value == right.value)
        if isinstance(left, Const):
            return right if left.value else neg(right)
        if isinstance(right, Const):
            return left if right.value else neg(left)
        return Iff(left, right)
    raise ValueError(f"simplify expects a quantifier-free formula, got {type(f).__name__}")


def pair_part(f: Formula) -> Formula:
    """The conjuncts of f that mention both x and y.

    Conjuncts over a single variable hold for every valid 1-type, so they
    never constrain a 2-table.
    """
    kept = []
    for c in f.args if isinstance(f, And) else (f,):
        used = {v for a in atoms(c) for v in a.args}
        if len(used) > 1:
            kept.append(c)
    return conj(*kept)


def weight_of(literals: Iterable[Literal], weights: Mapping[str, Tuple[Rational, Rational]],
              asym: Optional[Mapping[GroundAtom, Tuple[Rational, Rational]]] = None,
              weight_ring: Optional[WeightRing] = None):
    """W(L): product of w over positive and wbar over negative literals."""
    weight_ring = weight_ring or WeightRing()
    asym = asym or {}
    total = weight_ring.one
    one = Rational(1)
    for lit in literals:
        w, wb = asym.get(lit.atom) or weights.get(lit.atom.pred, (one, one))
        total = total * weight_ring.literal_weight(lit.atom.pred, lit.positive, w, wb)
    return total


class CellStructure:
    """Cells of a :class:`UfoProblem` together with the quantities the DP consumes."""

    def __init__(self, ufo: UfoProblem, weight_ring: Optional[WeightRing] = None):
        t = time.time()
        self.ufo = ufo
        self.ring = weight_ring or WeightRing.for_constraints(ufo.cardinality)
        vocab = ufo.vocabulary
        self.unary_atoms: List[UnaryAtom] = [(p, False) for p in vocab.unary] + [(p, True) for p in vocab.binary]
        self.table_atoms: List[TableAtom] = [(p, fwd) for p in vocab.binary for fwd in (True, False)]
        self._unary_index = {key: i for i, key in enumerate(self.unary_atoms)}

        self.matrix = ufo.matrix
        self.matrix_xx = substitute(ufo.matrix, {"y": "x"})
        self.pair_matrix = pair_part(conj(ufo.matrix, swap_xy(ufo.matrix)))

        self._signatures: Dict[int, FrozenSet[Tuple[str, bool]]] = dict(ufo.unary)
        self.fixed = self._globally_fixed()
        self.one_types: List[OneType] = self._enumerate_one_types()
        self._admissible_cache: Dict[FrozenSet, List[int]] = {}
        self._drop_unused_types()

        self._table_index: Dict[Atom, int] = {self.table_atom(k): j for j, k in enumerate(self.table_atoms)}
        self._x_residuals: Dict[int, Formula] = {}
        self._residuals: Dict[Tuple[int, int], Formula] = {}
        self._count_cache: Dict[Tuple, object] = {}
        self.r = r_matrix(self, ufo.closed_preds)
        self.type_class, self.num_classes, self.class_rep = self._classes()
        self._one_weight_cache: Dict[Tuple, object] = {}
        self._pair_cache: Dict[Tuple, object] = {}
        self._compat_cache: Dict[Tuple[int, int], List[TwoTable]] = {}
        self._evidence_cache: Dict[Tuple[int, int], Tuple] = {}
        logger.info(f"Cell enumeration completed in {time.time() - t:.2f} seconds: "
                    f"p={self.p}, q={self.q}, classes={self.num_classes}")

    # -- sizes -----------------------------------------------------------------

    @property
    def p(self) -> int:
        return len(self.one_types)

    @property
    def q(self) -> int:
        return 2 ** len(self.table_atoms)

    # -- atoms -------------------------------------------------------------------

    @staticmethod
    def unary_atom(key: UnaryAtom, var: str) -> Atom:
        pred, reflexive = key
        return Atom(pred, (var, var) if reflexive else (var,))

    @staticmethod
    def table_atom(key: TableAtom) -> Atom:
        pred, forward = key
        return Atom(pred, ("x", "y") if forward else ("y", "x"))

    def type_values(self, tau: OneType, var: str) -> Dict[Atom, bool]:
        return {self.unary_atom(k, var): v for k, v in zip(self.unary_atoms, tau)}

    def type_literals(self, tau: OneType, element: int) -> List[Literal]:
        lits = []
        for (pred, reflexive), v in zip(self.unary_atoms, tau):
            args = (element, element) if reflexive else (element,)
            lits.append(Literal(GroundAtom(pred, args), v))
        return lits

    # -- 1-types -----------------------------------------------------------------

    def _globally_fixed(self) -> Dict[int, bool]:
        """Atoms that every element's unary evidence fixes to the same value."""
        n = self.ufo.domain.size
        if len(self._signatures) < n:
            return {}
        fixed: Optional[Dict[int, bool]] = None
        for sig in self._signatures.values():
            values = {self._unary_index[(p, self.ufo.vocabulary.arity(p) == 2)]: v for p, v in sig}
            fixed = values if fixed is None else {i: v for i, v in fixed.items() if values.get(i) == v}
            if not fixed:
                return {}
        return fixed or {}

    def _enumerate_one_types(self) -> List[OneType]:
        m = len(self.unary_atoms)
        start = simplify(self.matrix_xx, {self.unary_atom(self.unary_atoms[i], "x"): v for i, v in self.fixed.items()})
        found: List[OneType] = []
        values: List[Optional[bool]] = [self.fixed.get(i) for i in range(m)]

        def visit(i: int, residual: Formula) -> None:
            if residual == BOTTOM:
                return
            if i == m:
                if residual == TOP:
                    found.append(tuple(values))
                return
            if i in self.fixed:
                visit(i + 1, residual)
                return
            atom = self.unary_atom(self.unary_atoms[i], "x")
            for v in (True, False):
                values[i] = v
                visit(i + 1, simplify(residual, {atom: v}))
            values[i] = None

        visit(0, start)
        return found

    def _drop_unused_types(self) -> None:
        n = self.ufo.domain.size
        if len(self._signatures) < n:
            return
        used = set()
        for sig in set(self._signatures.values()):
            used.update(self._admissible_indices(sig))
        if len(used) < len(self.one_types):
            self.one_types = [tau for i, tau in enumerate(self.one_types) if i in used]
            self._admissible_cache.clear()

    def _admissible_indices(self, sig: FrozenSet[Tuple[str, bool]]) -> List[int]:
        cached = self._admissible_cache.get(sig)
        if cached is not None:
            return cached
        checks = [(self._unary_index[(p, self.ufo.vocabulary.arity(p) == 2)], v) for p, v in sig]
        result = [i for i, tau in enumerate(self.one_types) if all(tau[j] == v for j, v in checks)]
        self._admissible_cache[sig] = result
        return result

    def admissible(self, element: int) -> List[int]:
        """Indices of 1-types consistent with the element's unary evidence."""
        return self._admissible_indices(self._signatures.get(element, frozenset()))

    def one_type_weight(self, i: int, element: Optional[int] = None):
        """W(tau), with the element's asymmetric literal weights when it has any."""
        overrides = ()
        if element is not None and self.ufo.asym:
            overrides = tuple(sorted((k, v) for k, v in self.ufo.asym.items()
                                     if k.args == (element,) or k.args == (element, element)))
        key = (i, overrides)
        cached = self._one_weight_cache.get(key)
        if cached is not None:
            return cached
        asym = {}
        for atom, wv in overrides:
            reflexive = len(atom.args) == 2
            asym[(atom.pred, reflexive)] = wv
        total = self.ring.one
        for key_atom, v in zip(self.unary_atoms, self.one_types[i]):
            w, wb = asym.get(key_atom) or self.ufo.weight(key_atom[0])
            total = total * self.ring.literal_weight(key_atom[0], v, w, wb)
        self._one_weight_cache[key] = total
        return total

    # -- 2-tables ----------------------------------------------------------------

    def _x_residual(self, s: int) -> Formula:
        cached = self._x_residuals.get(s)
        if cached is None:
            cached = simplify(self.pair_matrix, self.type_values(self.one_types[s], "x"))
            self._x_residuals[s] = cached
        return cached

    def pair_residual(self, s: int, t: int) -> Formula:
        """psi~ with x of 1-type s and y of 1-type t: a formula over the table atoms."""
        cached = self._residuals.get((s, t))
        if cached is None:
            cached = simplify(self._x_residual(s), self.type_values(self.one_types[t], "y"))
            self._residuals[(s, t)] = cached
        return cached

    def _literal(self, j: int, v: bool, overrides: Mapping[int, Tuple[Rational, Rational]]):
        pred = self.table_atoms[j][0]
        w, wb = overrides.get(j) or self.ufo.weight(pred)
        return self.ring.literal_weight(pred, v, w, wb)

    def _free(self, j: int, overrides: Mapping[int, Tuple[Rational, Rational]]):
        return self._literal(j, True, overrides) + self._literal(j, False, overrides)

    def _split(self, f: Formula) -> List[Tuple[Formula, FrozenSet[int]]]:
        """Group the conjuncts of f into components that share no table atom."""
        parts: List[Tuple[List[Formula], set]] = []
        for c in f.args if isinstance(f, And) else (f,):
            conjuncts, idx = [c], {self._table_index[a] for a in atoms(c)}
            kept = []
            for part_conjuncts, part_idx in parts:
                if part_idx & idx:
                    conjuncts.extend(part_conjuncts)
                    idx |= part_idx
                else:
                    kept.append((part_conjuncts, part_idx))
            kept.append((conjuncts, idx))
            parts = kept
        return [(conj(*conjuncts), frozenset(idx)) for conjuncts, idx in parts]

    def _count(self, f: Formula, idx: FrozenSet[int], overrides: Mapping[int, Tuple[Rational, Rational]]):
        """Weighted count of the assignments to the atoms idx that satisfy f."""
        if f == BOTTOM:
            return self.ring.zero
        if f == TOP:
            total = self.ring.one
            for j in idx:
                total = total * self._free(j, overrides)
            return total
        key = (f, tuple(sorted((j, overrides[j]) for j in idx if j in overrides)) if overrides else ())
        cached = self._count_cache.get(key)
        if cached is not None:
            return cached
        components = self._split(f)
        if len(components) > 1:
            total = self.ring.one
            for part, part_idx in components:
                total = total * self._count(part, part_idx, overrides)
                if self.ring.is_zero(total):
                    break
        else:
            j = min(idx)
            atom = self.table_atom(self.table_atoms[j])
            total = self.ring.zero
            for v in (True, False):
                sub = simplify(f, {atom: v})
                if sub == BOTTOM:
                    continue
                left = frozenset(self._table_index[a] for a in atoms(sub))
                weight = self._literal(j, v, overrides)
                for dropped in idx - left - {j}:
                    weight = weight * self._free(dropped, overrides)
                total = total + weight * self._count(sub, left, overrides)
        self._count_cache[key] = total
        return total

    def table_sum(self, s: int, t: int, forced: Mapping[int, bool],
                  overrides: Optional[Mapping[int, Tuple[Rational, Rational]]] = None):
        """Sum of 2-table weights compatible with psi~ under s, t and the forced atoms.

        Forced atoms are folded into the residual first; what remains is
        counted component by component, with results shared across pairs.
        """
        overrides = overrides or {}
        residual = self.pair_residual(s, t)
        if forced and residual not in (TOP, BOTTOM):
            residual = simplify(residual, {self.table_atom(self.table_atoms[j]): v for j, v in forced.items()})
        if residual == BOTTOM:
            return self.ring.zero
        left = frozenset(self._table_index[a] for a in atoms(residual))
        total = self._count(residual, left, overrides)
        for j in range(len(self.table_atoms)):
            if j in forced:
                total = total * self._literal(j, forced[j], overrides)
            elif j not in left:
                total = total * self._free(j, overrides)
        return total

    def closed_forcing(self, closed_preds: Iterable[str]) -> Dict[int, bool]:
        closed = set(closed_preds)
        return {j: False for j, (pred, _) in enumerate(self.table_atoms) if pred in closed}

    def compat(self, s: int, t: int) -> List[TwoTable]:
        """D_{s,t}: every 2-table pi with s(a) & t(b) & pi(a,b) |= psi~(a,b)."""
        cached = self._compat_cache.get((s, t))
        if cached is not None:
            return cached
        m = len(self.table_atoms)
        result: List[TwoTable] = []
        values: List[bool] = [False] * m

        def visit(j: int, residual: Formula) -> None:
            if residual == BOTTOM:
                return
            if j == m:
                if residual == TOP:
                    result.append(tuple(values))
                return
            atom = self.table_atom(self.table_atoms[j])
            for v in (True, False):
                values[j] = v
                visit(j + 1, simplify(residual, {atom: v}))

        visit(0, self.pair_residual(s, t))
        self._compat_cache[(s, t)] = result
        return result

    def _pair_evidence(self, a: int, b: int) -> Tuple[Dict[int, bool], Dict[int, Tuple[Rational, Rational]]]:
        cached = self._evidence_cache.get((a, b))
        if cached is not None:
            return cached
        forced: Dict[int, bool] = {}
        overrides: Dict[int, Tuple[Rational, Rational]] = {}
        for j, (pred, forward) in enumerate(self.table_atoms):
            ground = GroundAtom(pred, (a, b) if forward else (b, a))
            if pred in self.ufo.closed_preds:
                forced[j] = ground in self.ufo.closed_atoms
            if ground in self.ufo.asym:
                overrides[j] = self.ufo.asym[ground]
        self._evidence_cache[(a, b)] = (forced, overrides)
        return forced, overrides

    def table_literals(self, table: TwoTable, a: int, b: int) -> List[Literal]:
        lits = []
        for (pred, forward), v in zip(self.table_atoms, table):
            lits.append(Literal(GroundAtom(pred, (a, b) if forward else (b, a)), v))
        return lits

    def filtered_tables(self, a: int, b: int, s: int, t: int) -> List[TwoTable]:
        """D_{a,b,s,t}: compatible 2-tables that agree with the closed evidence on (a,b)."""
        forced, _ = self._pair_evidence(a, b)
        return [table for table in self.compat(s, t) if all(table[j] == v for j, v in forced.items())]

    def pair_weight(self, a: int, b: int, s: int, t: int):
        """Sum of W(pi) over D_{a,b,s,t}, with element a in the x role."""
        forced, overrides = self._pair_evidence(a, b)
        key = (s, t, tuple(sorted(forced.items())), tuple(sorted(overrides.items())))
        cached = self._pair_cache.get(key)
        if cached is None:
            cached = self.table_sum(s, t, forced, overrides)
            self._pair_cache[key] = cached
        return cached

    # -- classes -----------------------------------------------------------------

    def _row_key(self, row: Sequence) -> Tuple:
        if self.ring.symbolic:
            return tuple(tuple(sorted(v.items())) for v in row)
        return tuple(row)

    def _classes(self) -> Tuple[List[int], int, List[int]]:
        """Group 1-types whose r-rows coincide; configuration vectors count classes."""
        key_to_class: Dict[Tuple, int] = {}
        type_class: List[int] = []
        rep: List[int] = []
        for i, row in enumerate(self.r):
            key = self._row_key(row)
            if key not in key_to_class:
                key_to_class[key] = len(rep)
                rep.append(i)
            type_class.append(key_to_class[key])
        return type_class, len(rep), rep

    def class_r(self, i: int, c: int):
        return self.r[i][self.class_rep[c]]


def r_matrix(cells: CellStructure, closed_preds: Iterable[str] = ()) -> List[List[object]]:
    """r_{s,t} over the valid 1-types; atoms of the closed predicates are forced false."""
    forced = cells.closed_forcing(closed_preds)
    p = cells.p
    r: List[List[object]] = [[cells.ring.zero] * p for _ in range(p)]
    for s in range(p):
        for t in range(s, p):
            value = cells.table_sum(s, t, forced)
            r[s][t] = value
            r[t][s] = value
    return r


def enumerate_cells(ufo: UfoProblem, weight_ring: Optional[WeightRing] = None) -> CellStructure:
    return CellStructure(ufo, weight_ring)
