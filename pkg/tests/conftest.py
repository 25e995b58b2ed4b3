import itertools

import networkx as nx
import numpy as np
import pytest
from sympy import Rational

from src.services.fol import (
    Atom, Domain, Evidence, Forall, GroundAtom, Literal, Not, Or, Problem, Vocabulary, conj, parse_problem,
)

R_OR_S = """\
domain {n}
predicate R/1 weight 2 1
predicate S/2 weight 3 1
sentence: forall x forall y: R(x) | S(x,y)
"""


def r_or_s(n: int) -> Problem:
    return parse_problem(R_OR_S.format(n=n))


def r_or_s_count(n: int) -> int:
    return (2 ** (2 * n + 1) + 3 ** n) ** n


def count_independent_sets(graph: nx.Graph) -> int:
    nodes = list(graph.nodes)
    total = 0
    for r in range(len(nodes) + 1):
        for subset in itertools.combinations(nodes, r):
            chosen = set(subset)
            if not any(a in chosen and b in chosen for a, b in graph.edges):
                total += 1
    return total


def random_ufo_problem(rng: np.random.Generator, n: int, max_unary: int = 2, max_binary: int = 2) -> Problem:
    """Universally quantified problem with random clauses, closed path evidence and unary evidence."""
    unary = ["P", "Q"][: int(rng.integers(1, max_unary + 1))]
    binary = ["E", "F"][: int(rng.integers(1, max_binary + 1))]
    x, y = "x", "y"
    pool = [Atom(p, (x,)) for p in unary] + [Atom(p, (y,)) for p in unary]
    pool += [Atom(p, (x, y)) for p in binary] + [Atom(p, (y, x)) for p in binary]
    clauses = []
    for _ in range(int(rng.integers(1, 3))):
        picks = rng.choice(len(pool), size=2, replace=False)
        lits = [pool[i] if rng.random() < 0.5 else Not(pool[i]) for i in picks]
        clauses.append(Forall(x, Forall(y, Or(tuple(lits)))))

    weights = {}
    for p in unary + binary:
        w = Rational(int(rng.integers(-2, 4)), int(rng.integers(1, 3)))
        weights[p] = (w, Rational(int(rng.integers(1, 3))))

    closed_pred = binary[0]
    closed = set()
    for a in range(n - 1):
        if rng.random() < 0.7:
            closed.add(GroundAtom(closed_pred, (a, a + 1)))
    unary_ev = set()
    for a in range(n):
        if rng.random() < 0.3:
            unary_ev.add(Literal(GroundAtom(unary[0], (a,)), bool(rng.random() < 0.5)))

    predicates = {p: 1 for p in unary}
    predicates.update({p: 2 for p in binary})
    return Problem(
        vocabulary=Vocabulary(predicates),
        domain=Domain.of_size(n),
        sentence=conj(*clauses),
        weights=weights,
        evidence=Evidence(unary=frozenset(unary_ev), closed_preds=frozenset({closed_pred}),
                          closed_atoms=frozenset(closed)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def seven_vertex_graph():
    """Seven-vertex example graph a..g with treewidth 2; f is isolated."""
    graph = nx.Graph([("a", "b"), ("a", "c"), ("b", "c"), ("c", "d"), ("c", "e"), ("d", "g"), ("e", "g")])
    graph.add_node("f")
    return graph


@pytest.fixture
def indset_graph():
    return nx.Graph([("1", "2"), ("1", "3"), ("2", "3"), ("1", "4")])


FO2_SENTENCES = [
    "forall x: exists y: E(x,y) & P(y)",
    "exists x: forall y: E(x,y) | ~P(y)",
    "forall x: (P(x) -> exists y: E(y,x))",
    "forall x: exists y: E(x,y) | E(y,x)",
    "exists x: P(x) & ~E(x,x)",
    "forall x forall y: E(x,y) -> (P(x) | P(y))",
    "forall x: exists y: ~E(x,y) & (P(x) <-> P(y))",
]

COUNTING_BODIES = ["E(x,y)", "E(x,y) & P(y)", "E(y,x) | P(x)", "E(x,y) & ~E(y,x)"]


def random_fo2_problem(rng: np.random.Generator, n: int, counting: bool = False) -> Problem:
    """FO2 (or C2) sentence over P/1 and E/2, with open evidence keeping the oracle within its cap."""
    sentences = []
    if counting:
        op = ["=", "<=", ">="][int(rng.integers(3))]
        k = int(rng.integers(0, min(3, n) + 1))
        body = COUNTING_BODIES[int(rng.integers(len(COUNTING_BODIES)))]
        sentences.append(f"forall x: exists[{op}{k}] y: {body}")
        if rng.random() < 0.4:
            sentences.append(FO2_SENTENCES[5])
    else:
        for i in rng.choice(len(FO2_SENTENCES), size=int(rng.integers(1, 3)), replace=False):
            sentences.append(FO2_SENTENCES[int(i)])

    pairs = [(a, b) for a in range(n) for b in range(n)]
    fixed = 8 if n == 4 else int(rng.binomial(len(pairs), 0.3))
    chosen = rng.choice(len(pairs), size=fixed, replace=False) if fixed else []
    evidence = ", ".join(f"{'' if rng.random() < 0.5 else '~'}E({pairs[int(i)][0]},{pairs[int(i)][1]})"
                         for i in chosen)

    w = ["-1", "1", "2", "1/2"][int(rng.integers(4))]
    lines = [f"domain {n}", f"predicate P/1 weight {w} 1", f"predicate E/2 weight {int(rng.integers(1, 4))} 1"]
    lines += [f"sentence: {s}" for s in sentences]
    if evidence:
        lines.append(f"evidence open: {evidence}")
    return parse_problem("\n".join(lines) + "\n")
