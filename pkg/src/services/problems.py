"""
Benchmark problem generators: independent sets, friends-and-smokers with
clique evidence, and Watts-Strogatz random graph MLNs.
"""
import logging
from typing import Dict, List, Mapping, Optional, Tuple

import networkx as nx
from sympy import Rational

from src.services.fol import (
    And, Atom, CardinalityConstraint, CountingExists, Domain, Evidence, Forall, GroundAtom, Iff, Implies, Literal,
    MlnFormula, Not, Or, Problem, Vocabulary, conj,
)

logger = logging.getLogger(__name__)

X, Y = "x", "y"


def _forall_xy(f):
    return Forall(X, Forall(Y, f))


def gen_independent_set(graph: nx.Graph) -> Problem:
    """WFOMC of the result is the number of independent sets of ``graph``."""
    nodes = sorted(graph.nodes)
    index = {v: i for i, v in enumerate(nodes)}
    e_xy = Atom("E", (X, Y))
    sentence = conj(
        _forall_xy(Implies(e_xy, Or((Not(Atom("I", (X,))), Not(Atom("I", (Y,))))))),
        Forall(X, Not(Atom("E", (X, X)))),
    )
    closed = set()
    for a, b in graph.edges:
        if a == b:
            raise ValueError(f"graph has a self-loop at {a}")
        closed.add(GroundAtom("E", (index[a], index[b])))
        closed.add(GroundAtom("E", (index[b], index[a])))
    return Problem(
        vocabulary=Vocabulary({"E": 2, "I": 1}),
        domain=Domain(tuple(str(v) for v in nodes)),
        sentence=sentence,
        evidence=Evidence(closed_preds=frozenset({"E"}), closed_atoms=frozenset(closed)),
    )


def clique_pairs(num_cliques: int, clique_size: int) -> List[Tuple[int, int]]:
    pairs = []
    for c in range(num_cliques):
        members = range(c * clique_size, (c + 1) * clique_size)
        pairs.extend((a, b) for a in members for b in members if a != b)
    return pairs


def gen_friends_smokers(num_cliques: int, clique_size: int = 3,
                        weights: Optional[Mapping[str, Tuple[Rational, Rational]]] = None,
                        with_evidence: bool = True) -> Problem:
    """Friends and smokers over ``num_cliques * clique_size`` people, friends within a clique given as open evidence."""
    if num_cliques < 1 or clique_size < 1:
        raise ValueError("num_cliques and clique_size must be positive")
    friends = lambda a, b: Atom("friends", (a, b))
    smokes = lambda a: Atom("smokes", (a,))
    sentence = conj(
        Forall(X, Not(friends(X, X))),
        _forall_xy(Implies(friends(X, Y), friends(Y, X))),
        _forall_xy(Implies(And((smokes(X), friends(X, Y))), smokes(Y))),
    )
    evidence = Evidence()
    if with_evidence:
        lits = frozenset(Literal(GroundAtom("friends", pair)) for pair in clique_pairs(num_cliques, clique_size))
        evidence = Evidence(open=lits)
    n = num_cliques * clique_size
    return Problem(
        vocabulary=Vocabulary({"friends": 2, "smokes": 1}),
        domain=Domain.of_size(n),
        sentence=sentence,
        weights=dict(weights or {}),
        evidence=evidence,
    )


def ring_lattice_edges(n: int, k: int) -> List[Tuple[int, int]]:
    """Directed edges from each vertex to its k/2 right neighbours, wrapping around."""
    edges = []
    for i in range(n):
        for j in range(1, k // 2 + 1):
            target = (i + j) % n
            if target != i:
                edges.append((i, target))
    return sorted(set(edges))


def clique_cycle_edges(n: int) -> List[Tuple[int, int]]:
    """Disjoint 3-cliques, each oriented as a directed triangle so every vertex has one outgoing edge."""
    if n % 3:
        raise ValueError("the cliques starting graph needs N divisible by 3")
    edges = []
    for c in range(0, n, 3):
        edges.extend([(c, c + 1), (c + 1, c + 2), (c + 2, c)])
    return edges


def simplified_wired_total(n: int, extra: Optional[int] = None) -> int:
    """|WiredEdge| for the shortcut variant: 2N + M, with M = floor((N+1)/2) unless given."""
    m = (n + 1) // 2 if extra is None else extra
    return 2 * n + m


def gen_watts_strogatz(n: int, k: int = 2, start: str = "ring", simplified: bool = False,
                       w1: Rational = Rational(1), w2: Rational = Rational(2), extra_edges: Optional[int] = None,
                       wired_total: Optional[int] = None, friends_weight: Optional[Rational] = None) -> Problem:
    """Watts-Strogatz random graph as an MLN problem over the starting graph's closed evidence."""
    if k <= 0 or k % 2:
        raise ValueError(f"K must be a positive even integer, got {k}")
    if start == "ring":
        edges = ring_lattice_edges(n, k)
    elif start == "cliques":
        if k != 2:
            raise ValueError("the cliques starting graph is defined for K=2")
        edges = clique_cycle_edges(n)
    else:
        raise ValueError(f"unsupported starting graph: {start}")

    wired = lambda a, b: Atom("WiredEdge", (a, b))
    ev_edge = lambda a, b: Atom("EvidenceEdge", (a, b))
    antisymmetric = _forall_xy(Or((Not(wired(X, Y)), Not(wired(Y, X)))))
    evidence = Evidence(
        closed_preds=frozenset({"EvidenceEdge"}),
        closed_atoms=frozenset(GroundAtom("EvidenceEdge", e) for e in edges),
    )
    predicates: Dict[str, int] = {"WiredEdge": 2, "EvidenceEdge": 2}

    if simplified:
        total = simplified_wired_total(n, extra_edges) if wired_total is None else wired_total
        mln = (
            MlnFormula(None, antisymmetric),
            MlnFormula(None, _forall_xy(Implies(ev_edge(X, Y), wired(X, Y)))),
        )
        return Problem(
            vocabulary=Vocabulary(predicates),
            domain=Domain.of_size(n),
            cardinality=(CardinalityConstraint.simple("WiredEdge", "=", total),),
            evidence=evidence,
            mln=mln,
        )

    predicates["Edge"] = 2
    mln: List[MlnFormula] = [
        MlnFormula(None, Forall(X, Not(wired(X, X)))),
        MlnFormula(None, antisymmetric),
        MlnFormula(None, Forall(X, CountingExists("=", k // 2, Y, wired(X, Y)))),
        MlnFormula(Rational(w1), And((wired(X, Y), Not(ev_edge(X, Y))))),
        MlnFormula(Rational(w2), And((wired(X, Y), ev_edge(X, Y)))),
        MlnFormula(None, _forall_xy(Iff(Atom("Edge", (X, Y)), Or((wired(X, Y), wired(Y, X)))))),
    ]
    if friends_weight is not None:
        predicates["friends"] = 2
        predicates["smokes"] = 1
        mln.append(MlnFormula(None, _forall_xy(Iff(Atom("friends", (X, Y)), Atom("Edge", (X, Y))))))
        mln.append(MlnFormula(Rational(friends_weight), Implies(
            And((Atom("smokes", (X,)), Atom("friends", (X, Y)))), Atom("smokes", (Y,)))))
    return Problem(
        vocabulary=Vocabulary(predicates),
        domain=Domain.of_size(n),
        evidence=evidence,
        mln=tuple(mln),
    )
