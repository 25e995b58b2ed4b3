"""
Gaifman graphs, tree decompositions and nice tree decompositions.

Decompositions are computed from elimination orders: an exact
branch-and-bound search for small graphs, min-fill beyond that. Tie-breaks
go by vertex index so the same graph always gets the same decomposition.
"""
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import networkx as nx

from src.services.errors import DecompositionError
from src.services.fol import Decomposition, GroundAtom

logger = logging.getLogger(__name__)

Adjacency = Dict[int, Set[int]]

LEAF, INTRODUCE, FORGET, JOIN = "leaf", "introduce", "forget", "join"


def exact_limit_default() -> int:
    return int(os.getenv("LIFTWIDTH_EXACT_TW_LIMIT", "16"))


# ---------------------------------------------------------------------------
# Gaifman graph
# ---------------------------------------------------------------------------

def build_gaifman(n: int, closed_atoms: Iterable[GroundAtom] = (),
                  asym_atoms: Iterable[GroundAtom] = ()) -> nx.Graph:
    """Vertices are elements 0..n-1; an edge joins every pair named by a binary evidence atom."""
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for atom in list(closed_atoms) + list(asym_atoms):
        if len(atom.args) == 2 and atom.args[0] != atom.args[1]:
            graph.add_edge(*atom.args)
    return graph


def gaifman_of(ufo) -> nx.Graph:
    return build_gaifman(ufo.domain.size, ufo.closed_atoms, ufo.asym.keys())


# ---------------------------------------------------------------------------
# Tree decompositions
# ---------------------------------------------------------------------------

@dataclass
class TreeDecomposition:
    bags: Dict[int, FrozenSet[int]]
    edges: List[Tuple[int, int]]
    root: Optional[int] = None
    exact: bool = False

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags.values()), default=0) - 1

    def tree(self) -> nx.Graph:
        t = nx.Graph()
        t.add_nodes_from(self.bags)
        t.add_edges_from(self.edges)
        return t


@dataclass(frozen=True)
class NiceNode:
    kind: str
    bag: FrozenSet[int]
    element: Optional[int] = None
    children: Tuple[int, ...] = ()


@dataclass
class NiceTreeDecomposition:
    """Nice decomposition stored so that every child precedes its parent; the root is last."""
    nodes: List[NiceNode] = field(default_factory=list)
    exact: bool = False

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    @property
    def width(self) -> int:
        return max((len(n.bag) for n in self.nodes), default=0) - 1

    def add(self, kind: str, bag: FrozenSet[int], element: Optional[int] = None, children: Tuple[int, ...] = ()) -> int:
        self.nodes.append(NiceNode(kind, frozenset(bag), element, tuple(children)))
        return len(self.nodes) - 1

    def parents(self) -> Dict[int, int]:
        return {c: i for i, node in enumerate(self.nodes) for c in node.children}

    def forgotten(self, u: int) -> FrozenSet[int]:
        """S_u: elements forgotten somewhere below u."""
        result: Set[int] = set()
        stack = [u]
        while stack:
            node = self.nodes[stack.pop()]
            if node.kind == FORGET:
                result.add(node.element)
            stack.extend(node.children)
        return frozenset(result)

    def as_tree(self) -> TreeDecomposition:
        bags = {i: n.bag for i, n in enumerate(self.nodes)}
        edges = [(c, i) for i, n in enumerate(self.nodes) for c in n.children]
        return TreeDecomposition(bags, edges, self.root, self.exact)

    def kind_counts(self) -> Dict[str, int]:
        counts = {LEAF: 0, INTRODUCE: 0, FORGET: 0, JOIN: 0}
        for n in self.nodes:
            counts[n.kind] += 1
        return counts


def _adjacency(graph: nx.Graph) -> Adjacency:
    return {v: set(graph.neighbors(v)) - {v} for v in graph.nodes}


def _eliminate(adj: Adjacency, v: int) -> Adjacency:
    nbrs = adj[v]
    new = {u: set(ns) for u, ns in adj.items() if u != v}
    for u in nbrs:
        new[u].discard(v)
        new[u] |= nbrs - {u}
    return new


def _fill_in(adj: Adjacency, v: int) -> int:
    nbrs = sorted(adj[v])
    return sum(1 for i, a in enumerate(nbrs) for b in nbrs[i + 1:] if b not in adj[a])


def min_fill_order(adj: Adjacency) -> List[int]:
    """Greedy elimination order: least fill-in, then least degree, then smallest index."""
    adj = {v: set(ns) for v, ns in adj.items()}
    order = []
    while adj:
        v = min(adj, key=lambda u: (_fill_in(adj, u), len(adj[u]), u))
        order.append(v)
        adj = _eliminate(adj, v)
    return order


def order_width(adj: Adjacency, order: Sequence[int]) -> int:
    width = 0
    for v in order:
        width = max(width, len(adj[v]))
        adj = _eliminate(adj, v)
    return width if order else -1


def _min_degree_bound(adj: Adjacency) -> int:
    """Largest minimum degree seen while deleting min-degree vertices (a treewidth lower bound)."""
    adj = {v: set(ns) for v, ns in adj.items()}
    bound = 0
    while adj:
        v = min(adj, key=lambda u: (len(adj[u]), u))
        bound = max(bound, len(adj[v]))
        for u in adj[v]:
            adj[u].discard(v)
        del adj[v]
    return bound


def _is_simplicial(adj: Adjacency, v: int) -> bool:
    nbrs = sorted(adj[v])
    return all(b in adj[a] for i, a in enumerate(nbrs) for b in nbrs[i + 1:])


def exact_elimination_order(adj: Adjacency) -> Tuple[List[int], int]:
    """Branch and bound over elimination orders, seeded with min-fill."""
    best_order = min_fill_order(adj)
    best = order_width(adj, best_order)
    if not adj or best <= _min_degree_bound(adj):
        return best_order, best
    seen: Dict[FrozenSet[int], int] = {}

    def search(g: Adjacency, order: List[int], width: int) -> None:
        nonlocal best, best_order
        if len(g) <= width + 1:
            if width < best:
                best, best_order = width, order + sorted(g)
            return
        if max(width, _min_degree_bound(g)) >= best:
            return
        key = frozenset(g)
        if seen.get(key, best + 1) <= width:
            return
        seen[key] = width
        for v in sorted(g):
            if _is_simplicial(g, v):
                search(_eliminate(g, v), order + [v], max(width, len(g[v])))
                return
        for v in sorted(g, key=lambda u: (len(g[u]), u)):
            w = max(width, len(g[v]))
            if w < best:
                search(_eliminate(g, v), order + [v], w)

    search(adj, [], 0)
    return best_order, best


def decomposition_from_order(adj: Adjacency, order: Sequence[int]) -> TreeDecomposition:
    """One bag per eliminated vertex, hung below the bag of its earliest later neighbour."""
    position = {v: i for i, v in enumerate(order)}
    work = {v: set(ns) for v, ns in adj.items()}
    bags: Dict[int, FrozenSet[int]] = {}
    edges: List[Tuple[int, int]] = []
    for i, v in enumerate(order):
        later = set(work[v])
        bags[i] = frozenset(later | {v})
        for a in later:
            work[a].discard(v)
            work[a] |= later - {a}
        del work[v]
        if later:
            edges.append((i, min(position[a] for a in later)))
        elif i + 1 < len(order):
            # separate components are chained into one tree
            edges.append((i, i + 1))
    return TreeDecomposition(bags, edges, root=len(order) - 1 if order else None)


def tree_decompose(graph: nx.Graph, exact_limit: Optional[int] = None) -> TreeDecomposition:
    """Exact treewidth up to ``exact_limit`` vertices, min-fill beyond."""
    exact_limit = exact_limit_default() if exact_limit is None else exact_limit
    adj = _adjacency(graph)
    if not adj:
        raise DecompositionError("cannot decompose an empty graph")
    if len(adj) <= exact_limit:
        order, width = exact_elimination_order(adj)
        exact = True
    else:
        order = min_fill_order(adj)
        width = order_width(adj, order)
        exact = False
        logger.warning(f"Graph has {len(adj)} vertices; using min-fill decomposition of width {width}, which may exceed the treewidth")
    td = decomposition_from_order(adj, order)
    td.exact = exact
    logger.debug(f"Tree decomposition of width {td.width} ({'exact' if exact else 'heuristic'})")
    return td


# ---------------------------------------------------------------------------
# Nice decompositions
# ---------------------------------------------------------------------------

def make_nice(td: TreeDecomposition, root: Optional[int] = None) -> NiceTreeDecomposition:
    """Leaf, introduce, forget and join nodes with empty leaf and root bags."""
    if not td.bags:
        raise DecompositionError("decomposition has no bags")
    root = td.root if root is None else root
    if root is None:
        root = min(td.bags)
    neighbours: Dict[int, List[int]] = {u: [] for u in td.bags}
    for u, v in td.edges:
        neighbours[u].append(v)
        neighbours[v].append(u)

    order: List[int] = []
    children: Dict[int, List[int]] = {u: [] for u in td.bags}
    visited = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in sorted(neighbours[u]):
            if v not in visited:
                visited.add(v)
                children[u].append(v)
                queue.append(v)
    if len(visited) != len(td.bags):
        raise DecompositionError("decomposition tree is not connected")

    nice = NiceTreeDecomposition(exact=td.exact)
    top: Dict[int, int] = {}
    for u in reversed(order):
        bag = td.bags[u]
        branches = []
        for c in children[u]:
            branches.append(_transition(nice, top[c], bag))
        if not branches:
            branches.append(_transition(nice, nice.add(LEAF, frozenset()), bag))
        while len(branches) > 1:
            right = branches.pop()
            left = branches.pop()
            branches.append(nice.add(JOIN, bag, None, (left, right)))
        top[u] = branches[0]
    _transition(nice, top[root], frozenset())
    return nice


def _transition(nice: NiceTreeDecomposition, node: int, target: FrozenSet[int]) -> int:
    """Forget, then introduce, until the bag of ``node`` becomes ``target``."""
    current = nice.nodes[node].bag
    for a in sorted(current - target):
        current = current - {a}
        node = nice.add(FORGET, current, a, (node,))
    for a in sorted(target - current):
        current = current | {a}
        node = nice.add(INTRODUCE, current, a, (node,))
    return node


def validate_decomposition(td, graph: nx.Graph) -> bool:
    """Check vertex coverage, edge coverage and connectedness; for nice input also the node kinds."""
    if isinstance(td, NiceTreeDecomposition):
        if not _nice_kinds_ok(td):
            return False
        td = td.as_tree()
    tree = td.tree()
    if tree.number_of_nodes() == 0 or not nx.is_tree(tree):
        return False
    covered = set().union(*td.bags.values())
    if not set(graph.nodes) <= covered:
        return False
    for a, b in graph.edges:
        if a != b and not any(a in bag and b in bag for bag in td.bags.values()):
            return False
    for v in graph.nodes:
        holding = [u for u, bag in td.bags.items() if v in bag]
        if not nx.is_connected(tree.subgraph(holding)):
            return False
    return True


def _nice_kinds_ok(nice: NiceTreeDecomposition) -> bool:
    if not nice.nodes or nice.nodes[nice.root].bag:
        return False
    for node in nice.nodes:
        kids = [nice.nodes[c] for c in node.children]
        if node.kind == LEAF:
            ok = not kids and not node.bag
        elif node.kind == INTRODUCE:
            ok = len(kids) == 1 and node.element in node.bag and kids[0].bag == node.bag - {node.element}
        elif node.kind == FORGET:
            ok = len(kids) == 1 and node.element not in node.bag and kids[0].bag == node.bag | {node.element}
        elif node.kind == JOIN:
            ok = len(kids) == 2 and all(k.bag == node.bag for k in kids)
        else:
            ok = False
        if not ok:
            return False
    return True


# ---------------------------------------------------------------------------
# Reading and writing decompositions
# ---------------------------------------------------------------------------

def from_problem_decomposition(decomposition: Decomposition) -> TreeDecomposition:
    bags = {bag_id: frozenset(bag) for bag_id, bag in decomposition.bags}
    for u, v in decomposition.edges:
        if u not in bags or v not in bags:
            raise DecompositionError(f"tree edge {u} {v} names an undeclared bag")
    return TreeDecomposition(bags, list(decomposition.edges), root=min(bags))


def parse_pace_td(text: str) -> TreeDecomposition:
    """PACE .td format: 's td <bags> <width+1> <vertices>', 'b <id> <v>...', then tree edges. Vertices are 1-based."""
    bags: Dict[int, FrozenSet[int]] = {}
    edges: List[Tuple[int, int]] = []
    declared = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        try:
            if parts[0] == "s":
                if len(parts) != 5 or parts[1] != "td":
                    raise DecompositionError(f"line {number}: solution line reads 's td <bags> <width+1> <vertices>'")
                declared = int(parts[2])
            elif parts[0] == "b":
                bags[int(parts[1])] = frozenset(int(v) - 1 for v in parts[2:])
            elif len(parts) == 2:
                edges.append((int(parts[0]), int(parts[1])))
            else:
                raise DecompositionError(f"line {number}: unrecognized line: {line}")
        except ValueError as e:
            if isinstance(e, DecompositionError):
                raise
            raise DecompositionError(f"line {number}: {str(e)}")
    if declared is None:
        raise DecompositionError("missing 's td' line")
    if declared != len(bags):
        raise DecompositionError(f"'s td' declares {declared} bags but {len(bags)} were given")
    for u, v in edges:
        if u not in bags or v not in bags:
            raise DecompositionError(f"tree edge {u} {v} names an undeclared bag")
    return TreeDecomposition(bags, edges, root=min(bags) if bags else None)


def format_nice(nice: NiceTreeDecomposition, names: Optional[Sequence[str]] = None) -> str:
    """In-file 'bag'/'tree' lines with each node's kind as a comment."""
    def name(a: int) -> str:
        return names[a] if names is not None else str(a)

    lines = [f"# nice tree decomposition: width {nice.width}, {len(nice.nodes)} nodes"]
    for i, node in enumerate(nice.nodes):
        kind = node.kind if node.element is None else f"{node.kind} {name(node.element)}"
        members = " ".join(name(a) for a in sorted(node.bag))
        lines.append(f"bag {i}: {members}".rstrip() + f"  # {kind}")
    for i, node in enumerate(nice.nodes):
        for c in node.children:
            lines.append(f"tree {c} {i}")
    return "\n".join(lines) + "\n"


def decompose_for(ufo, user: Optional[TreeDecomposition] = None,
                  exact_limit: Optional[int] = None) -> Tuple[nx.Graph, NiceTreeDecomposition]:
    """Gaifman graph and a validated nice decomposition for a prepared problem."""
    graph = gaifman_of(ufo)
    if user is not None:
        if not validate_decomposition(user, graph):
            raise DecompositionError("supplied decomposition is not valid for the evidence's Gaifman graph")
        td = user
    else:
        td = tree_decompose(graph, exact_limit)
    nice = make_nice(td)
    if not validate_decomposition(nice, graph):
        raise DecompositionError("nice decomposition failed validation")
    return graph, nice
