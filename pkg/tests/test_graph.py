import itertools
import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsq.errors import CapExceededError, DegreeBoundError, DisconnectedError, ParseError, VertexRangeError
from gsq.graph import (INF, GraphSequence, LabeledMultigraph, ball, cheeger, cycle_space_dim, edge_count,
                       edge_number_table, format_graph, girth, metric_view, parse_graph, read_manifest,
                       write_sequence)
from gsq.groups import build_family, cyclic_action, schreier_graph


def cycle(n):
    return LabeledMultigraph(n, [(i, (i + 1) % n, "t") for i in range(n)], labels=("t",), degree_bound=2)


def complete(n):
    return LabeledMultigraph(n, [(i, j, "k") for i, j in itertools.combinations(range(n), 2)],
                             labels=("k",), degree_bound=n - 1)


def torus(n):
    return build_family("torus", [n]).graphs[0]


def to_nx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.vertex_count))
    G.add_edges_from(g.simple_edges())
    return G


def brute_cheeger(g):
    n = g.vertex_count
    best = None
    edges = g.simple_edges()
    for k in range(1, n // 2 + 1):
        for A in itertools.combinations(range(n), k):
            a = set(A)
            r = Fraction(sum((u in a) != (v in a) for u, v in edges), k)
            best = r if best is None or r < best else best
    return best


@st.composite
def small_graphs(draw, max_n=9):
    n = draw(st.integers(1, max_n))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))
    return LabeledMultigraph(n, [(u, v, "x") for u, v in pairs], labels=("x",), degree_bound=max(1, 6 * n))


# ---------------------------------------------------------------- parsing

def test_parse_cycle_document():
    text = "graph c8 vertices=8 degree_bound=2 labels=t connected=1\n" + "".join(
        f"e {i} {(i + 1) % 8} t\n" for i in range(8))
    g = parse_graph(text)
    assert g.vertex_count == 8 and g.connected and g.max_degree == 2
    assert parse_graph(format_graph(g)).edges == g.edges


def test_parse_rejects_out_of_range_vertex():
    with pytest.raises(VertexRangeError):
        parse_graph("graph bad vertices=8 degree_bound=2 labels=t\ne 0 9 t\n")


def test_parse_reports_line_number():
    with pytest.raises(ParseError) as info:
        parse_graph("graph bad vertices=3 degree_bound=2 labels=t\ne 0 1 t\nx 1 2\n")
    assert info.value.line == 3


def test_parse_rejects_undeclared_label():
    with pytest.raises(ParseError):
        parse_graph("graph bad vertices=3 degree_bound=2 labels=t\ne 0 1 s\n")


def test_degree_bound_and_connectivity_enforced():
    with pytest.raises(DegreeBoundError):
        LabeledMultigraph(4, [(0, 1, "k"), (0, 2, "k"), (0, 3, "k")], labels=("k",), degree_bound=2)
    with pytest.raises(DisconnectedError):
        parse_graph("graph two vertices=2 degree_bound=1 labels=t connected=1\n")


def test_torus_document_counts():
    g = torus(4)
    assert g.vertex_count == 16 and len(g.edges) == 32 and g.max_degree == 4


# ---------------------------------------------------------------- metric

def test_metric_view_examples():
    assert metric_view(cycle(8)).distance(0, 5) == 3
    g = LabeledMultigraph(2, [(0, 0, "x"), (0, 1, "x"), (0, 1, "x")], labels=("x",), degree_bound=4)
    assert g.simple_edges() == [(0, 1)]
    assert metric_view(g).distance(0, 1) == 1
    h = LabeledMultigraph(3, [(0, 1, "x")], labels=("x",), degree_bound=1)
    assert metric_view(h).distance(0, 2) == INF


def test_ball_examples():
    b = ball(cycle(8), 0, 1)
    assert b.graph.vertex_count == 3 and len(b.graph.edges) == 2 and b.vertices[0] == 0
    tri = ball(cycle(3), 0, 1)
    assert tri.graph.vertex_count == 3 and len(tri.graph.edges) == 3
    assert ball(torus(4), 5, 0).graph.vertex_count == 1


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.integers(0, 4))
def test_ball_matches_networkx_ego_graph(g, r):
    G = to_nx(g)
    for x in range(g.vertex_count):
        b = ball(g, x, r)
        assert set(b.vertices) == set(nx.ego_graph(G, x, radius=r).nodes)
        inside = set(b.vertices)
        assert len(b.graph.edges) == sum(1 for u, v, _ in g.edges if u in inside and v in inside)


@settings(max_examples=60, deadline=None)
@given(small_graphs())
def test_distances_match_networkx(g):
    G = to_nx(g)
    mv = metric_view(g)
    expected = dict(nx.all_pairs_shortest_path_length(G))
    for x in range(g.vertex_count):
        for y in range(g.vertex_count):
            assert mv.distance(x, y) == expected[x].get(y, INF)


# ---------------------------------------------------------------- invariants

def test_girth_examples():
    assert girth(cycle(8)) == 8
    assert girth(torus(4)) == 4
    assert girth(LabeledMultigraph(3, [(0, 1, "x"), (1, 2, "x")], labels=("x",), degree_bound=2)) == INF


def test_girth_multi_mode_counts_loops_and_parallels():
    par = LabeledMultigraph(3, [(0, 1, "x"), (1, 0, "y"), (1, 2, "x")], labels=("x", "y"), degree_bound=3)
    assert girth(par, "multi") == 2 and girth(par) == INF
    loop = LabeledMultigraph(2, [(0, 0, "x"), (0, 1, "x")], labels=("x",), degree_bound=3)
    assert girth(loop, "multi") == 1


@pytest.mark.parametrize("p, expected", [(3, 3), (5, 5), (7, 6), (11, 9), (13, 10)])
def test_sl2p_girth_matches_networkx_oracle(p, expected):
    g = build_family("sl2p", [p]).graphs[0]
    assert nx.girth(to_nx(g)) == expected
    assert girth(g) == expected


@settings(max_examples=80, deadline=None)
@given(small_graphs())
def test_girth_and_cycle_space_agree_with_networkx(g):
    G = to_nx(g)
    expected = nx.girth(G)
    assert girth(g) == (INF if math.isinf(expected) else expected)
    dim = cycle_space_dim(g)
    assert dim == G.number_of_edges() - G.number_of_nodes() + nx.number_connected_components(G)
    assert (dim == 0) == (girth(g) == INF)
    if girth(g) != INF:
        assert girth(g) >= 3


def test_cycle_space_examples():
    assert cycle_space_dim(cycle(8)) == 1
    assert cycle_space_dim(torus(4)) == 17
    tree = LabeledMultigraph(5, [(0, i, "x") for i in range(1, 5)], labels=("x",), degree_bound=4)
    assert cycle_space_dim(tree) == 0


@settings(max_examples=60, deadline=None)
@given(small_graphs())
def test_edge_identity_on_connected_views(g):
    if not g.connected:
        return
    e = edge_count(g, "simple")
    n = g.vertex_count
    assert e >= n - 1
    assert e == n + cycle_space_dim(g) - 1


def test_edge_modes():
    g = LabeledMultigraph(3, [(0, 0, "x"), (0, 1, "x"), (1, 0, "y"), (1, 2, "x")], labels=("x", "y"),
                          degree_bound=4)
    assert (edge_count(g, "simple"), edge_count(g, "multi"), edge_count(g, "multi_no_loops")) == (2, 4, 3)


# ---------------------------------------------------------------- tables

def test_edge_number_tables():
    cyc = build_family("cycle", [8, 16, 32])
    assert [r.ratio for r in edge_number_table(cyc).rows] == [1, 1, 1]
    tor = build_family("torus", [4, 8, 16])
    assert [r.ratio for r in edge_number_table(tor).rows] == [2, 2, 2]
    t = edge_number_table(tor)
    assert all(Fraction(r.edges, r.vertices) == r.ratio for r in t.rows)
    assert t.liminf_proxy == 2


def test_random_schreier_fixture():
    g = build_family("random_schreier", [1000], seed=1).graphs[0]
    loops = sum(1 for u, v, _ in g.edges if u == v)
    assert len(g.edges) == 2000 and loops == 2
    assert edge_count(g, "simple") == 1996 and edge_count(g, "multi_no_loops") == 1998


def test_random_schreier_without_loops_has_ratio_two():
    for seed in range(20):
        g = build_family("random_schreier", [50], seed=seed).graphs[0]
        if any(u == v for u, v, _ in g.edges):
            continue
        assert Fraction(edge_count(g, "multi_no_loops"), g.vertex_count) == 2


def test_sequence_rejects_shrinking_sizes():
    with pytest.raises(Exception):
        GraphSequence([cycle(8), cycle(4)])


def test_manifest_round_trip(tmp_path):
    seq = build_family("cycle", [4, 8])
    manifest = write_sequence(seq, tmp_path)
    back = read_manifest(manifest)
    assert [g.edges for g in back.graphs] == [g.edges for g in seq.graphs]
    assert back.graphs[0].meta["family"] == "cycle"


# ---------------------------------------------------------------- Cheeger

def test_cheeger_examples():
    assert cheeger(cycle(8)) == Fraction(1, 2)
    assert cheeger(complete(4)) == 2
    lower = cheeger(cycle(8), "spectral_lower")
    assert lower == pytest.approx((1 - math.cos(math.pi / 4)) / 2, abs=1e-8)


def test_cheeger_cap():
    with pytest.raises(CapExceededError):
        cheeger(cycle(30))


def test_cheeger_matches_brute_force_and_spectral_bound():
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(40):
        n = int(rng.integers(3, 10))
        edges = [(i, (i + 1) % n, "x") for i in range(n)]
        edges += [(int(a), int(b), "x") for a, b in rng.integers(0, n, size=(n // 2, 2)) if a != b]
        g = LabeledMultigraph(n, edges, labels=("x",), degree_bound=4 * n)
        exact = cheeger(g)
        assert exact == brute_cheeger(g)
        assert float(exact) >= cheeger(g, "spectral_lower") - 1e-9
        checked += 1
    assert checked == 40


def test_schreier_cycle_is_c8():
    g = schreier_graph(cyclic_action(8))
    assert nx.is_isomorphic(to_nx(g), nx.cycle_graph(8))
