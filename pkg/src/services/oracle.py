"""
Independent counting oracles.

``ground_count`` works on the user's problem directly: quantifiers,
counting quantifiers, MLN soft weights, cardinality constraints and all
evidence forms are evaluated by their ground semantics, without going
through any reduction. ``lifted_no_evidence`` is the classical
configuration sum for evidence-free problems.
"""
import itertools
import logging
import math
import os
import time
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from sympy import Rational

from src.services.cells import CellStructure
from src.services.errors import FragmentError, OracleCapError
from src.services.fol import (
    And, Atom, Const, Exists, Forall, Formula, GroundAtom, Iff, Implies, Literal, Not, Or, Problem,
    conj, free_vars,
)
from src.services.gaifman_td import NiceTreeDecomposition
from src.services.normalize import UfoProblem, forall_closure, prepare
from src.services.weights import extract_cardinality

logger = logging.getLogger(__name__)

World = Dict[GroundAtom, bool]


def oracle_cap_default() -> int:
    return int(os.getenv("LIFTWIDTH_ORACLE_CAP", "24"))


def eval3(f: Formula, env: Mapping[str, int], world: World, n: int) -> Optional[bool]:
    """Three-valued evaluation over a partial world; None means undetermined."""
    if isinstance(f, Atom):
        key = GroundAtom(f.pred, tuple(env[a] if isinstance(a, str) else a for a in f.args))
        return world.get(key)
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Not):
        v = eval3(f.arg, env, world, n)
        return None if v is None else not v
    if isinstance(f, And):
        unknown = False
        for a in f.args:
            v = eval3(a, env, world, n)
            if v is False:
                return False
            unknown = unknown or v is None
        return None if unknown else True
    if isinstance(f, Or):
        unknown = False
        for a in f.args:
            v = eval3(a, env, world, n)
            if v is True:
                return True
            unknown = unknown or v is None
        return None if unknown else False
    if isinstance(f, Implies):
        return eval3(Or((Not(f.left), f.right)), env, world, n)
    if isinstance(f, Iff):
        left = eval3(f.left, env, world, n)
        if left is None:
            return None
        right = eval3(f.right, env, world, n)
        return None if right is None else left == right
    true_count = unknown = 0
    for e in range(n):
        v = eval3(f.body, {**env, f.var: e}, world, n)
        if v is None:
            unknown += 1
        elif v:
            true_count += 1
    if isinstance(f, Forall):
        if true_count + unknown < n:
            return False
        return None if unknown else True
    if isinstance(f, Exists):
        if true_count:
            return True
        return None if unknown else False
    k = f.k
    if f.op == "=":
        if true_count > k or true_count + unknown < k:
            return False
        return None if unknown else true_count == k
    if f.op == "<=":
        if true_count > k:
            return False
        return True if true_count + unknown <= k else None
    if true_count >= k:
        return True
    return False if true_count + unknown < k else None


def _ground_atoms(problem: Problem) -> List[GroundAtom]:
    """All ground atoms, ordered so that atoms over smaller elements come first."""
    n = problem.domain.size
    result = []
    for pred, arity in problem.vocabulary.predicates.items():
        for args in itertools.product(range(n), repeat=arity):
            result.append(GroundAtom(pred, args))
    result.sort(key=lambda a: (max(a.args), a.args, a.pred))
    return result


def fixed_atoms(problem: Problem) -> Optional[World]:
    """Truth values fixed by evidence; None when the evidence is contradictory."""
    ev = problem.evidence
    fixed: World = {}
    literals = list(ev.unary) + list(ev.open)
    n = problem.domain.size
    for pred in ev.closed_preds:
        arity = problem.vocabulary.arity(pred)
        for args in itertools.product(range(n), repeat=arity):
            atom = GroundAtom(pred, args)
            literals.append(Literal(atom, atom in ev.closed_atoms))
    for lit in literals:
        if fixed.setdefault(lit.atom, lit.positive) != lit.positive:
            return None
    return fixed


def _sentence_with_hard(problem: Problem) -> Formula:
    hard = [forall_closure(m.formula) for m in problem.mln if m.hard]
    return conj(problem.sentence, *hard)


def _soft_factor(problem: Problem, world: World):
    n = problem.domain.size
    factor = Rational(1)
    for m in problem.mln:
        if m.hard:
            continue
        free = sorted(free_vars(m.formula))
        count = 0
        for values in itertools.product(range(n), repeat=len(free)):
            if eval3(m.formula, dict(zip(free, values)), world, n):
                count += 1
        factor *= Rational(m.weight) ** count
    return factor


def ground_count(problem: Problem, cap: Optional[int] = None, constrained: bool = True) -> Rational:
    """Weighted model count by enumerating every world consistent with the evidence."""
    t = time.time()
    cap = oracle_cap_default() if cap is None else cap
    n = problem.domain.size
    fixed = fixed_atoms(problem)
    if fixed is None:
        logger.warning("Evidence is contradictory; the weighted model count is 0")
        return Rational(0)
    free = [a for a in _ground_atoms(problem) if a not in fixed]
    if len(free) > cap:
        raise OracleCapError(f"{len(free)} free ground atoms exceed the oracle cap of {cap}")

    sentence = _sentence_with_hard(problem)
    asym = {atom: (Rational(w), Rational(wb)) for atom, w, wb in problem.evidence.asym}
    weights = {p: problem.weight(p) for p in problem.vocabulary}
    constraints = problem.cardinality if constrained else ()
    world: World = dict(fixed)
    total = Rational(0)

    def leaf_weight() -> Rational:
        weight = Rational(1)
        counts: Dict[str, int] = {}
        for atom, value in world.items():
            w, wb = asym.get(atom) or weights[atom.pred]
            weight *= w if value else wb
            if value:
                counts[atom.pred] = counts.get(atom.pred, 0) + 1
        if not all(c.holds(counts) for c in constraints):
            return Rational(0)
        return weight * _soft_factor(problem, world)

    def visit(i: int) -> None:
        nonlocal total
        verdict = eval3(sentence, {}, world, n)
        if verdict is False:
            return
        if i == len(free):
            if verdict:
                total += leaf_weight()
            return
        atom = free[i]
        for value in (True, False):
            world[atom] = value
            visit(i + 1)
        del world[atom]

    visit(0)
    logger.debug(f"Ground enumeration over {len(free)} free atoms completed in {time.time() - t:.2f} seconds")
    return total


def lifted_no_evidence(problem) -> Rational:
    """Configuration sum over 1-type counts with multinomial coefficients; evidence must be empty."""
    ufo = problem if isinstance(problem, UfoProblem) else prepare(problem)
    if ufo.unary or ufo.closed_preds or ufo.closed_atoms or ufo.asym:
        raise FragmentError("the evidence-free baseline does not accept evidence")
    cells = CellStructure(ufo)
    ring = cells.ring
    n = ufo.domain.size
    p = cells.p
    cell_weights = [cells.one_type_weight(i) for i in range(p)]
    total = ring.zero
    for config in _compositions(n, p):
        term = ring.coerce(Rational(_multinomial(n, config)))
        for i, n_i in enumerate(config):
            if not n_i:
                continue
            term = term * ring.pow(cell_weights[i], n_i)
            term = term * ring.pow(cells.r[i][i], n_i * (n_i - 1) // 2)
            for j in range(i + 1, p):
                if config[j]:
                    term = term * ring.pow(cells.r[i][j], n_i * config[j])
        total = total + term
    return extract_cardinality(total, ring)


def _compositions(n: int, parts: int):
    if parts == 0:
        if n == 0:
            yield ()
        return
    if parts == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


def _multinomial(n: int, config: Sequence[int]) -> int:
    result = math.factorial(n)
    for c in config:
        result //= math.factorial(c)
    return result


def enumerate_partial_models(cells: CellStructure, nice: NiceTreeDecomposition, u: int,
                             tau: Tuple[int, ...], z: Tuple[int, ...], cap: int = 8) -> List[frozenset]:
    """Every literal set over S_u and its links to the bag that is a partial model for (tau, z).

    A partial model fixes a 1-type per forgotten element and a 2-table for
    each pair with at least one forgotten element, all consistent with the
    matrix, the unary evidence and the closed binary evidence.
    """
    node = nice.nodes[u]
    bag = sorted(node.bag)
    forgotten = sorted(nice.forgotten(u))
    if len(bag) + len(forgotten) > cap:
        raise OracleCapError(f"node {u} spans {len(bag) + len(forgotten)} elements, above the cap of {cap}")
    bag_types = dict(zip(bag, tau))
    models: List[frozenset] = []
    for types in itertools.product(*(cells.admissible(a) for a in forgotten)):
        config = [0] * cells.num_classes
        for t in types:
            config[cells.type_class[t]] += 1
        if tuple(config) != tuple(z):
            continue
        assign = dict(bag_types)
        assign.update(zip(forgotten, types))
        base = set()
        for a, t in zip(forgotten, types):
            base.update(cells.type_literals(cells.one_types[t], a))
        pairs = [(a, b) for i, a in enumerate(forgotten) for b in forgotten[i + 1:]]
        pairs += [(a, b) for a in forgotten for b in bag]
        options = [cells.filtered_tables(a, b, assign[a], assign[b]) for a, b in pairs]
        for choice in itertools.product(*options):
            lits = set(base)
            for (a, b), table in zip(pairs, choice):
                lits.update(cells.table_literals(table, a, b))
            models.append(frozenset(lits))
    return models
