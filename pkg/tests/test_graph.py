import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from d2color import graph as gr
from oracles import bfs_square_adjacency


def test_square_path_is_triangle():
    g = gr.generate("path", n=3)
    sq = gr.square(g)
    assert sq.adjacency == ((1, 2), (0, 2), (0, 1))


def test_square_star_is_complete():
    g = gr.generate("star", n=4)
    sq = gr.square(g)
    for v in range(4):
        assert sq.adjacency[v] == tuple(sorted(set(range(4)) - {v}))


def test_square_5cycle_is_k5():
    g = gr.generate("cycle", n=5)
    sq = gr.square(g)
    expect = bfs_square_adjacency(g.adjacency)
    assert sq.adjacency == expect
    for v in range(5):
        assert len(sq.adjacency[v]) == 4


@settings(max_examples=120, deadline=None)
@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=2**30))
def test_square_matches_bfs_oracle(n, seed):
    rng = random.Random(seed)
    p = rng.random() * 0.2
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    g = gr.from_edges(n, edges)
    assert gr.square(g).adjacency == bfs_square_adjacency(g.adjacency)


def test_common_d2_neighbors_examples():
    # endpoints of a 4-edge path share exactly the midpoint
    g = gr.generate("path", n=5)
    assert gr.common_d2_neighbors(g, 0, 4) == 1
    # disjoint components share nothing
    g2 = gr.from_edges(4, [(0, 1), (2, 3)])
    assert gr.common_d2_neighbors(g2, 0, 2) == 0
    # inside a clique of the square: all other members
    pet = gr.generate("petersen", copies=1)
    d = pet.delta
    assert d == 3
    assert gr.common_d2_neighbors(pet, 0, 1) == d * d - 1


def test_common_d2_neighbors_symmetric():
    g = gr.generate("gnp", n=40, p=0.1, seed=7)
    for u, v in [(0, 1), (3, 17), (20, 39)]:
        assert gr.common_d2_neighbors(g, u, v) == gr.common_d2_neighbors(g, v, u)


def test_common_d2_requires_distinct():
    g = gr.generate("path", n=3)
    with pytest.raises(gr.GraphError):
        gr.common_d2_neighbors(g, 1, 1)


def test_sparsity_clique_square_is_zero():
    # Petersen: every d2-neighborhood is the full K9, exactly delta^2 strong
    g = gr.generate("petersen", copies=1)
    for v in range(10):
        assert gr.sparsity(g, v) == 0


def test_sparsity_isolated_node_max():
    g = gr.from_edges(3, [(0, 1)])
    d = g.delta * g.delta
    assert gr.sparsity(g, 2) == Fraction(d - 1, 2)


def test_sparsity_star_center_by_explicit_count():
    # star K_{1,d}: G^2 restricted to the center's neighborhood is a clique on
    # d nodes, so the edge count is C(d,2) against the C(d^2,2) reference
    d = 4
    g = gr.generate("star", n=d + 1)
    dd = g.delta * g.delta
    expected = Fraction(dd * (dd - 1) // 2 - d * (d - 1) // 2, dd)
    assert gr.sparsity(g, 0) == expected


def test_sparsity_range_invariant():
    for seed in range(10):
        g = gr.generate("gnp", n=30, p=0.15, seed=seed)
        hi = Fraction(g.delta * g.delta - 1, 2) if g.delta else Fraction(0)
        for v in range(g.n):
            assert 0 <= gr.sparsity(g, v) <= hi


def test_generate_path():
    g = gr.generate("path", n=3)
    assert list(g.edges()) == [(0, 1), (1, 2)]


def test_generate_gnp_p0_edgeless():
    g = gr.generate("gnp", n=100, p=0.0, seed=3)
    assert g.m == 0 and g.n == 100


def test_generate_regular_deterministic():
    g1 = gr.generate("random_regular", n=50, d=6, seed=1)
    g2 = gr.generate("random_regular", n=50, d=6, seed=1)
    assert g1.adjacency == g2.adjacency
    assert all(g1.degree(v) == 6 for v in range(50))


def test_generate_regular_infeasible():
    with pytest.raises(gr.GraphError):
        gr.generate("random_regular", n=5, d=3, seed=0)  # odd degree sum


def test_generate_petersen_structure():
    g = gr.generate("petersen", copies=2)
    assert g.n == 20
    assert all(g.degree(v) == 3 for v in range(20))
    sq = gr.square(g)
    for v in range(10):
        assert len(sq.adjacency[v]) == 9  # square of each copy is K10


def test_generate_clique_chain():
    g = gr.generate("clique_chain", n=12, k=4)
    assert g.n == 12
    assert g.has_edge(3, 4) and g.has_edge(7, 8)
    assert g.degree(0) == 3 and g.degree(3) == 4


def test_edge_list_round_trip(tmp_path):
    g = gr.generate("gnp", n=100, p=0.05, seed=11)
    path = str(tmp_path / "g.edges")
    gr.save_edge_list(g, path)
    g2 = gr.load_edge_list(path)
    assert g2.adjacency == g.adjacency


def test_edge_list_small_parse(tmp_path):
    path = tmp_path / "p.edges"
    path.write_text("0 1\n1 2\n")
    g = gr.load_edge_list(str(path))
    assert g.adjacency == ((1,), (0, 2), (1,))


def test_edge_list_self_loop_rejected(tmp_path):
    path = tmp_path / "bad.edges"
    path.write_text("0 0\n")
    with pytest.raises(gr.GraphError, match=":1:"):
        gr.load_edge_list(str(path))


def test_edge_list_duplicate_rejected(tmp_path):
    path = tmp_path / "dup.edges"
    path.write_text("0 1\n1 0\n")
    with pytest.raises(gr.GraphError, match=":2:"):
        gr.load_edge_list(str(path))


def test_edge_list_garbage_has_line_number(tmp_path):
    path = tmp_path / "junk.edges"
    path.write_text("0 1\nnot an edge\n")
    with pytest.raises(gr.GraphError, match=":2:"):
        gr.load_edge_list(str(path))


def test_from_edges_validation():
    with pytest.raises(gr.GraphError):
        gr.from_edges(3, [(0, 3)])
    with pytest.raises(gr.GraphError):
        gr.from_edges(3, [(1, 1)])
    with pytest.raises(gr.GraphError):
        gr.from_edges(3, [(0, 1), (1, 0)])


def test_graph_invariants_on_generators():
    for kind, params in [
        ("path", {"n": 17}),
        ("cycle", {"n": 9}),
        ("star", {"n": 12}),
        ("gnp", {"n": 40, "p": 0.2}),
        ("random_regular", {"n": 30, "d": 4}),
        ("clique_chain", {"n": 16, "k": 4}),
        ("petersen", {"copies": 3}),
    ]:
        g = gr.generate(kind, seed=5, **params)
        for v in range(g.n):
            nbrs = g.adjacency[v]
            assert list(nbrs) == sorted(set(nbrs))
            assert v not in nbrs
            for u in nbrs:
                assert v in g.adjacency[u]
        assert g.delta == max((g.degree(v) for v in range(g.n)), default=0)
