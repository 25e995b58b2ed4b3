import networkx as nx
import pytest

from src.services.errors import DecompositionError
from src.services.fol import GroundAtom, parse_problem
from src.services.gaifman_td import (
    FORGET, INTRODUCE, JOIN, LEAF, TreeDecomposition, build_gaifman, decompose_for, format_nice, make_nice,
    parse_pace_td, tree_decompose, validate_decomposition,
)
from src.services.normalize import prepare


def relabel(graph):
    return nx.convert_node_labels_to_integers(graph, ordering="sorted")


def test_gaifman_graph_from_evidence():
    graph = build_gaifman(4, [GroundAtom("E", (0, 1)), GroundAtom("E", (2, 2)), GroundAtom("F", (1, 3))])
    assert sorted(graph.nodes) == [0, 1, 2, 3]
    assert sorted(map(sorted, graph.edges)) == [[0, 1], [1, 3]]


def test_seven_vertex_graph_has_width_two(seven_vertex_graph):
    graph = relabel(seven_vertex_graph)
    td = tree_decompose(graph)
    assert td.exact
    assert td.width == 2
    assert validate_decomposition(td, graph)


@pytest.mark.parametrize("graph, width", [
    (nx.path_graph(7), 1),
    (nx.balanced_tree(2, 3), 1),
    (nx.cycle_graph(9), 2),
    (nx.complete_graph(5), 4),
    (nx.grid_2d_graph(3, 3), 3),
    (nx.empty_graph(4), 0),
])
def test_exact_widths(graph, width):
    graph = relabel(graph)
    assert tree_decompose(graph).width == width


def k_tree(k, n, rng):
    graph = nx.complete_graph(k + 1)
    cliques = [tuple(range(k + 1))]
    for v in range(k + 1, n):
        base = cliques[int(rng.integers(len(cliques)))]
        members = list(rng.choice(base, size=k, replace=False))
        graph.add_edges_from((v, int(u)) for u in members)
        cliques.append(tuple(int(u) for u in members) + (v,))
    return graph


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_k_trees(k, rng):
    graph = k_tree(k, 12, rng)
    assert tree_decompose(graph).width == k


def test_heuristic_beyond_exact_limit():
    graph = nx.cycle_graph(30)
    td = tree_decompose(graph, exact_limit=10)
    assert not td.exact
    assert td.width == 2
    assert validate_decomposition(td, graph)


def test_nice_decompositions_of_random_graphs(rng):
    for _ in range(100):
        n = int(rng.integers(1, 31))
        graph = nx.gnp_random_graph(n, 2.0 / max(n, 2), seed=int(rng.integers(1 << 30)))
        td = tree_decompose(graph, exact_limit=12)
        nice = make_nice(td)
        assert validate_decomposition(nice, graph)
        assert nice.width == td.width
        assert len(nice.nodes) <= 6 * (td.width + 1) * n
        assert nice.nodes[nice.root].bag == frozenset()
        assert all(nice.nodes[u].kind != LEAF or not nice.nodes[u].bag for u in range(len(nice.nodes)))


def test_nice_node_kinds(seven_vertex_graph):
    graph = relabel(seven_vertex_graph)
    nice = make_nice(tree_decompose(graph))
    counts = nice.kind_counts()
    assert counts[INTRODUCE] >= graph.number_of_nodes()
    assert counts[FORGET] == graph.number_of_nodes()
    for i, node in enumerate(nice.nodes):
        assert all(c < i for c in node.children)
        if node.kind == JOIN:
            assert len(node.children) == 2


def test_invalid_decomposition_is_rejected():
    graph = nx.cycle_graph(4)
    td = TreeDecomposition({0: frozenset({0, 1}), 1: frozenset({2, 3})}, [(0, 1)], root=0)
    assert not validate_decomposition(td, graph)


def test_parse_pace_td():
    text = "c path of three\ns td 2 2 3\nb 1 1 2\nb 2 2 3\n1 2\n"
    td = parse_pace_td(text)
    assert td.bags == {1: frozenset({0, 1}), 2: frozenset({1, 2})}
    assert td.edges == [(1, 2)]
    assert validate_decomposition(td, nx.path_graph(3))


def test_parse_pace_td_bag_count_mismatch():
    with pytest.raises(DecompositionError):
        parse_pace_td("s td 3 2 3\nb 1 1 2\n")


def test_user_decomposition_must_cover_evidence():
    problem = parse_problem("domain 3\npredicate E/2\nsentence: true\nevidence closed E: E(0,1), E(1,2), E(2,0)\n")
    path = TreeDecomposition({0: frozenset({0, 1}), 1: frozenset({1, 2})}, [(0, 1)], root=0)
    with pytest.raises(DecompositionError):
        decompose_for(prepare(problem), path)


def test_format_nice_lists_bags_and_tree():
    problem = parse_problem("domain {a, b}\npredicate E/2\nsentence: true\nevidence closed E: E(a,b)\n")
    _, nice = decompose_for(prepare(problem))
    text = format_nice(nice, problem.domain.names)
    assert "# leaf" in text
    assert "introduce a" in text and "forget b" in text
    assert sum(1 for line in text.splitlines() if line.startswith("tree ")) == len(nice.nodes) - 1
