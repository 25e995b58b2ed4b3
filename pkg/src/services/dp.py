"""
Dynamic program over a nice tree decomposition.

A table maps the bag's 1-type assignment tau (aligned with the sorted bag)
to a sparse map from configuration vectors z to ring values. Entries whose
value is zero are never stored. Configuration vectors count forgotten
elements per class of 1-types with identical r-rows.
"""
import bisect
import logging
import os
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import networkx as nx
from sympy import Rational

from src.services.cells import CellStructure
from src.services.fol import Problem
from src.services.gaifman_td import (
    FORGET, INTRODUCE, JOIN, LEAF, NiceTreeDecomposition, TreeDecomposition, decompose_for,
    from_problem_decomposition,
)
from src.services.normalize import UfoProblem, prepare
from src.services.weights import WeightRing, extract_cardinality

logger = logging.getLogger(__name__)

Config = Tuple[int, ...]
Table = Dict[Tuple[int, ...], Dict[Config, object]]


def default_threads() -> int:
    return max(1, int(os.getenv("LIFTWIDTH_THREADS", "1")))


def prune_default() -> bool:
    return os.getenv("LIFTWIDTH_PRUNE_BAG_PAIRS", "true").strip().lower() not in ("0", "false", "no", "off")


def _pair_factor(cells: CellStructure, graph: Optional[nx.Graph], a: int, b: int, ta: int, tb: int):
    """Weight of all 2-tables between a and b: evidence-filtered on a Gaifman edge, the refined r otherwise."""
    if graph is not None and graph.has_edge(a, b):
        return cells.pair_weight(a, b, ta, tb)
    return cells.r[ta][tb]


def dp_leaf(cells: CellStructure) -> Table:
    return {(): {(0,) * cells.num_classes: cells.ring.one}}


def dp_introduce(child: Table, child_bag: Tuple[int, ...], a: int, cells: CellStructure,
                 graph: Optional[nx.Graph] = None, prune: bool = False) -> Table:
    """Give a a 1-type and join it to the forgotten elements through the refined r."""
    ring = cells.ring
    pos = bisect.bisect_left(child_bag, a)
    multipliers: Dict[Tuple[int, Config], object] = {}
    result: Table = {}
    for tau, zs in child.items():
        for i in cells.admissible(a):
            if prune and any(ring.is_zero(_pair_factor(cells, graph, a, b, i, tb)) for b, tb in zip(child_bag, tau)):
                continue
            row: Dict[Config, object] = {}
            for z, value in zs.items():
                key = (i, z)
                mult = multipliers.get(key)
                if mult is None:
                    mult = ring.one
                    for c, count in enumerate(z):
                        if count:
                            mult = mult * ring.pow(cells.class_r(i, c), count)
                    multipliers[key] = mult
                v = ring.truncate(mult * value)
                if not ring.is_zero(v):
                    row[z] = v
            if row:
                result[tau[:pos] + (i,) + tau[pos:]] = row
    return result


def dp_forget(child: Table, child_bag: Tuple[int, ...], a: int, cells: CellStructure,
              graph: Optional[nx.Graph] = None) -> Table:
    """Weight a's 1-type and its 2-tables with the rest of the bag, then count a in z."""
    ring = cells.ring
    pos = child_bag.index(a)
    rest = child_bag[:pos] + child_bag[pos + 1:]
    result: Table = {}
    for tau, zs in child.items():
        i = tau[pos]
        new_tau = tau[:pos] + tau[pos + 1:]
        factor = cells.one_type_weight(i, a)
        for b, tb in zip(rest, new_tau):
            if ring.is_zero(factor):
                break
            factor = factor * _pair_factor(cells, graph, a, b, i, tb)
        if ring.is_zero(factor):
            continue
        c = cells.type_class[i]
        target = result.setdefault(new_tau, {})
        for z, value in zs.items():
            nz = z[:c] + (z[c] + 1,) + z[c + 1:]
            prev = target.get(nz)
            v = factor * value
            target[nz] = v if prev is None else prev + v
    return _clean(result, ring)


def dp_join(left: Table, right: Table, cells: CellStructure) -> Table:
    """Convolve configurations for each shared tau; cross pairs use the refined r."""
    ring = cells.ring
    row_cache: Dict[Tuple[int, Config], object] = {}

    def row_product(c: int, z2: Config):
        key = (c, z2)
        value = row_cache.get(key)
        if value is None:
            value = ring.one
            for d, count in enumerate(z2):
                if count:
                    value = value * ring.pow(cells.class_r(cells.class_rep[c], d), count)
            row_cache[key] = value
        return value

    result: Table = {}
    for tau, zs1 in left.items():
        zs2 = right.get(tau)
        if not zs2:
            continue
        target = result.setdefault(tau, {})
        for z1, v1 in zs1.items():
            for z2, v2 in zs2.items():
                cross = ring.one
                for c, count in enumerate(z1):
                    if count:
                        cross = cross * ring.pow(row_product(c, z2), count)
                z = tuple(x + y for x, y in zip(z1, z2))
                v = v1 * v2 * cross
                prev = target.get(z)
                target[z] = v if prev is None else prev + v
    return _clean(result, ring)


def _clean(table: Table, ring: WeightRing) -> Table:
    cleaned: Table = {}
    for tau, zs in table.items():
        row = {}
        for z, v in zs.items():
            v = ring.truncate(v)
            if not ring.is_zero(v):
                row[z] = v
        if row:
            cleaned[tau] = row
    return cleaned


def table_size(table: Table) -> int:
    return sum(len(zs) for zs in table.values())


@dataclass
class SolveResult:
    value: object
    ring: WeightRing
    nodes: int = 0
    width: int = -1
    max_table: int = 0
    tables: Optional[List[Table]] = None


class TreeDP:
    """Evaluates a nice decomposition bottom-up, optionally with a thread pool over ready nodes."""

    def __init__(self, cells: CellStructure, nice: NiceTreeDecomposition, graph: Optional[nx.Graph] = None,
                 prune: Optional[bool] = None):
        self.cells = cells
        self.nice = nice
        self.graph = graph
        self.prune = prune_default() if prune is None else prune
        self.bags = [tuple(sorted(node.bag)) for node in nice.nodes]
        self.tables: Dict[int, Table] = {}
        self.max_table = 0

    def compute(self, u: int) -> Table:
        node = self.nice.nodes[u]
        if node.kind == LEAF:
            table = dp_leaf(self.cells)
        elif node.kind == INTRODUCE:
            c = node.children[0]
            table = dp_introduce(self.tables[c], self.bags[c], node.element, self.cells, self.graph, self.prune)
        elif node.kind == FORGET:
            c = node.children[0]
            table = dp_forget(self.tables[c], self.bags[c], node.element, self.cells, self.graph)
        elif node.kind == JOIN:
            left, right = node.children
            table = dp_join(self.tables[left], self.tables[right], self.cells)
        else:
            raise ValueError(f"unknown node kind: {node.kind}")
        logger.debug(f"Node {u} ({node.kind}) has {table_size(table)} entries")
        return table

    def run(self, threads: int = 1, keep_tables: bool = False) -> List[Table]:
        nodes = self.nice.nodes
        parents = self.nice.parents()
        kept: List[Optional[Table]] = [None] * len(nodes)

        def finish(u: int, table: Table) -> None:
            self.tables[u] = table
            self.max_table = max(self.max_table, table_size(table))
            if keep_tables:
                kept[u] = table
            else:
                for c in nodes[u].children:
                    self.tables.pop(c, None)

        if threads <= 1:
            for u in range(len(nodes)):
                finish(u, self.compute(u))
        else:
            waiting = {u: len(node.children) for u, node in enumerate(nodes)}
            with ThreadPoolExecutor(max_workers=threads) as pool:
                running = {pool.submit(self.compute, u): u for u, n in waiting.items() if n == 0}
                while running:
                    done, _ = wait(running, return_when=FIRST_COMPLETED)
                    for future in done:
                        u = running.pop(future)
                        finish(u, future.result())
                        parent = parents.get(u)
                        if parent is not None:
                            waiting[parent] -= 1
                            if waiting[parent] == 0:
                                running[pool.submit(self.compute, parent)] = parent
        if keep_tables:
            return kept
        return [self.tables[len(nodes) - 1]]


def solve(ufo: UfoProblem, nice: Optional[NiceTreeDecomposition] = None, cells: Optional[CellStructure] = None,
          graph: Optional[nx.Graph] = None, threads: Optional[int] = None, prune: Optional[bool] = None,
          keep_tables: bool = False) -> SolveResult:
    """Sum over z of f(root, (), z)."""
    cells = cells or CellStructure(ufo)
    ring = cells.ring
    if ufo.inconsistent:
        logger.warning("Inconsistent evidence: the weighted model count is 0")
        return SolveResult(ring.zero, ring)
    if nice is None:
        graph, nice = decompose_for(ufo)
    threads = default_threads() if threads is None else threads

    t = time.time()
    dp = TreeDP(cells, nice, graph, prune)
    tables = dp.run(threads, keep_tables)
    root = tables[-1]
    total = ring.zero
    for zs in root.values():
        for v in zs.values():
            total = total + v
    logger.info(f"DP completed in {time.time() - t:.2f} seconds over {len(nice.nodes)} nodes "
                f"(width {nice.width}, largest table {dp.max_table})")
    return SolveResult(total, ring, len(nice.nodes), nice.width, dp.max_table, tables if keep_tables else None)


@dataclass
class WfomcResult:
    answer: Rational
    raw: object
    ring: WeightRing
    p: int
    q: int
    classes: int
    width: int
    nodes: int
    max_table: int
    exact_width: bool
    times: Dict[str, float] = field(default_factory=dict)


def wfomc(problem: Problem, decomposition: Optional[TreeDecomposition] = None,
          threads: Optional[int] = None, prune: Optional[bool] = None) -> WfomcResult:
    """Full pipeline: normalize, cells, decomposition, DP and cardinality extraction."""
    times: Dict[str, float] = {}
    t = time.time()
    ufo = prepare(problem)
    times["normalize"] = time.time() - t

    t = time.time()
    cells = CellStructure(ufo)
    times["cells"] = time.time() - t

    t = time.time()
    if decomposition is None and problem.decomposition is not None:
        decomposition = from_problem_decomposition(problem.decomposition)
    graph, nice = decompose_for(ufo, decomposition)
    times["decompose"] = time.time() - t

    t = time.time()
    result = solve(ufo, nice, cells, graph, threads, prune)
    answer = extract_cardinality(result.value, cells.ring)
    times["dp"] = time.time() - t

    return WfomcResult(
        answer=answer,
        raw=result.value,
        ring=cells.ring,
        p=cells.p,
        q=cells.q,
        classes=cells.num_classes,
        width=nice.width,
        nodes=len(nice.nodes),
        max_table=result.max_table,
        exact_width=nice.exact,
        times=times,
    )
