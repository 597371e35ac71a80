import networkx as nx
import numpy as np
import pytest

from etdopt.errors import IncompatibleGraphError
from etdopt.graph import (DEDP_CHORDS, Graph, build_augmented, check_compatibility, complete_graph,
                          flood_bounds, path_graph, read_edge_list, ring_with_chords,
                          write_edge_list)
from etdopt.problem import ConstraintSystem
from etdopt.scenarios import build_case1


def to_nx(g):
    h = nx.Graph()
    h.add_nodes_from(range(g.n_vertices))
    h.add_edges_from(g.edges)
    return h


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        Graph(3, [(1, 1)])
    with pytest.raises(ValueError):
        Graph(3, [(0, 3)])


def test_case1_augmented_topology():
    sc = build_case1()
    net = build_augmented(sc.graph, sc.problem.constraints)
    assert net.n == 4 and net.n_virtual == 4
    assert net.neighbors[4] == (0, 1)
    assert [len(net.neighbors[4 + l]) for l in range(4)] == [2, 2, 2, 2]
    assert net.is_connected()
    assert check_compatibility(sc.graph, sc.problem.constraints)


def test_identity_constraints_one_host_each():
    net = build_augmented(complete_graph(3), ConstraintSystem(np.eye(3), np.ones(3)))
    assert [net.neighbors[3 + l] for l in range(3)] == [(0,), (1,), (2,)]
    assert net.host_of_virtual == (0, 1, 2)


def test_incompatible_graph_names_pair():
    cs = ConstraintSystem([[1.0, 0.0, 1.0]], [1.0])
    with pytest.raises(IncompatibleGraphError, match="agents 1 and 3"):
        build_augmented(path_graph(3), cs)
    assert build_augmented(path_graph(3), cs, strict=False).n_virtual == 1


def test_compatibility_cases():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(2, 5))
    assert check_compatibility(complete_graph(5), ConstraintSystem(C, np.zeros(2)))
    ring = ring_with_chords(4)
    assert not check_compatibility(ring, ConstraintSystem([[1.0, 0, 1.0, 0]], [1.0]))


def test_disconnected_graph_rejected():
    with pytest.raises(IncompatibleGraphError):
        build_augmented(Graph(3, [(0, 1)]), ConstraintSystem([[1.0, 1.0, 0.0]], [1.0]))


def test_flood_bounds():
    lo, hi, rounds = flood_bounds(path_graph(5), [3, 1, 4, 1, 5], [3, 1, 4, 1, 5])
    assert (lo, hi) == (1.0, 5.0) and rounds <= 4
    assert flood_bounds(complete_graph(6), np.arange(6), np.arange(6))[2] == 1


def test_dedp_graph_matches_networkx():
    g = ring_with_chords(59, DEDP_CHORDS)
    h = to_nx(g)
    assert g.diameter() == nx.diameter(h)
    assert len(g.edges) == 64
    assert flood_bounds(g, np.arange(59.0), np.arange(59.0))[2] == nx.diameter(h)


def test_induced_and_connectivity_against_networkx():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = 8
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
        g = Graph(n, edges)
        assert g.is_connected() == nx.is_connected(to_nx(g))
        keep = [0, 2, 3, 5, 7]
        assert g.induced(keep).is_connected() == nx.is_connected(to_nx(g).subgraph(keep))


def test_edge_list_round_trip(tmp_path):
    g = ring_with_chords(10, [(1, 5)])
    path = tmp_path / "g.txt"
    write_edge_list(g, path)
    assert read_edge_list(path) == g
    path.write_text("# comment\n1 2\n\n2 3  # trailing\n")
    assert read_edge_list(path, 4).edges == frozenset({(0, 1), (1, 2)})
