import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

from gsq.amenability import (almost_a_certify, ball_witness, block_partition, box_folner, exact_partition,
                             expander_side, folner_from_function, folner_set, glue_bound, glue_expander,
                             hyperfinite_partition, lift_partition_to_folner, localized_folner,
                             peel_partition, push_witness_to_schreier, reroute_witness)
from gsq.bs import match_mask, oracle_code
from gsq.certificates import (PartitionCertificate, WitnessCertificate, boundary_size, parse_certificate,
                              partition_from_fields, witness_from_fields)
from gsq.errors import CapExceededError, InfeasibleError, PreconditionError
from gsq.graph import GraphSequence, LabeledMultigraph, cheeger
from gsq.groups import GroupOracle, PermAction, build_family, cyclic_action, schreier_graph, torus_action

Z1 = GroupOracle.free_abelian(1)
Z2 = GroupOracle.free_abelian(2)


def cycle(n):
    return build_family("cycle", [n]).graphs[0]


def torus(n):
    return build_family("torus", [n]).graphs[0]


def path(n):
    return LabeledMultigraph(n, [(i, i + 1, "t") for i in range(n - 1)], labels=("t",), degree_bound=2)


def brute_min_K(g, eps):
    """Least largest-component size over every cut set with |cut| < eps |V| (networkx components)."""
    edges = g.simple_edges()
    n = g.vertex_count
    best = n + 1
    for size in range(len(edges) + 1):
        if not Fraction(size, n) < eps:
            break
        for cut in itertools.combinations(range(len(edges)), size):
            G = nx.Graph()
            G.add_nodes_from(range(n))
            G.add_edges_from(e for i, e in enumerate(edges) if i not in cut)
            best = min(best, max(len(c) for c in nx.connected_components(G)))
    return best


def level_set_oracle(g, phi, eps):
    """Try every threshold t in decreasing order; first F_t = {phi >= t} with |dF| < eps |F|."""
    for t in sorted({p for p in phi.values() if p > 0}, reverse=True):
        F = {x for x, p in phi.items() if p >= t}
        if boundary_size(g, F) < eps * len(F):
            return sorted(F)
    return None


# ---------------------------------------------------------------- Folner sets

def test_group_folner_sets():
    assert (folner_set(Z2, Fraction(1, 2)).size, folner_set(Z2, Fraction(1, 2)).ratio) == (81, Fraction(4, 9))
    assert (folner_set(Z1, Fraction(1, 10)).size, folner_set(Z1, Fraction(1, 10)).ratio) == (21, Fraction(2, 21))
    assert (folner_set(Z2, Fraction(2, 5)).size, folner_set(Z2, Fraction(2, 5)).ratio) == (121, Fraction(4, 11))
    with pytest.raises(PreconditionError):
        folner_set(GroupOracle.free(2), Fraction(1, 2))


def test_tent_function():
    g = path(9)
    phi = {x: Fraction(min(x + 1, 9 - x), 25) for x in range(9)}
    F = folner_from_function(g, phi, Fraction(8, 25))
    assert F.elements == tuple(range(1, 8)) and F.boundary == 2
    assert F.boundary < Fraction(8, 25) * 7


def test_uniform_function_on_cycle():
    F = folner_from_function(cycle(8), {x: Fraction(1, 8) for x in range(8)}, Fraction(1, 1000))
    assert F.size == 8 and F.boundary == 0


def test_function_precondition():
    with pytest.raises(PreconditionError):
        folner_from_function(path(3), {0: Fraction(1)}, Fraction(1, 2))


@pytest.mark.parametrize("seed", range(20))
def test_folner_from_function_matches_level_set_oracle(seed):
    rng = np.random.default_rng(seed)
    g = build_family("random_schreier", [40], seed=seed).graphs[0]
    center = int(rng.integers(0, 40))
    dist = nx.single_source_shortest_path_length(nx.Graph(g.simple_edges()), center)
    radius = int(rng.integers(2, 5))
    raw = {x: radius + 1 - d for x, d in dist.items() if d <= radius}
    total = sum(raw.values())
    phi = {x: Fraction(v, total) for x, v in raw.items()}
    var = sum(abs(phi.get(u, 0) - phi.get(v, 0)) for u, v in g.simple_edges())
    eps = var + Fraction(1, 100)
    F = folner_from_function(g, phi, eps)
    assert F.boundary < eps * F.size
    assert list(F.elements) == level_set_oracle(g, phi, eps)


# ---------------------------------------------------------------- witnesses

def test_pushed_witness_on_cycle():
    w = push_witness_to_schreier(Z1, cyclic_action(8), folner_set(Z1, Fraction(1, 10)))
    g = cycle(8)
    assert w.norms_exact() and w.measured_eps(g) == Fraction(2, 21)


def test_pushed_witness_on_torus():
    w = push_witness_to_schreier(Z2, torus_action(50), box_folner(Z2, 10))
    g = torus(50)
    assert w.norms_exact() and w.measured_eps(g) == Fraction(1, 5)


def test_point_mass_witness_has_variation_two():
    w = push_witness_to_schreier(Z1, cyclic_action(8), box_folner(Z1, 1))
    assert set(w.variations(cycle(8)).values()) == {2}


def test_pushed_witness_independent_of_representative():
    # translating by a relator word a^n leaves every vector unchanged
    act = torus_action(6)
    F = box_folner(Z2, 3)
    w = push_witness_to_schreier(Z2, act, F)
    shifted = [(("a", 1),) * 6 + tuple(word) for word in F.words]
    for x in range(act.degree):
        counts = {}
        for word in shifted:
            y = act.act(x, word)
            counts[y] = counts.get(y, 0) + 1
        assert counts == w.rows[x]


def test_witness_text_round_trip():
    g = cycle(8)
    w = ball_witness(g, 2)
    back = witness_from_fields(parse_certificate(w.to_text(g)))
    assert back.rows == w.rows and back.denominator == w.denominator


def test_reroute_single_vertex():
    g = cycle(8)
    w = ball_witness(g, 1)
    out = reroute_witness(g, w, {3})
    assert out.norms_exact() and 3 not in out.rows
    for u, v in g.simple_edges():
        if 3 not in (u, v):
            assert out.edge_variation(u, v) <= w.edge_variation(u, v)


def test_reroute_disjoint_removal_is_identity():
    g = LabeledMultigraph(6, [(0, 1, "t"), (1, 2, "t"), (2, 3, "t"), (3, 4, "t"), (4, 5, "t")],
                          labels=("t",), degree_bound=2)
    w = WitnessCertificate(2, {x: {x: 2} for x in range(5)} | {5: {4: 1, 5: 1}})
    out = reroute_witness(g, w, {5})
    assert {x: out.rows[x] for x in range(4)} == {x: w.rows[x] for x in range(4)}


def test_reroute_vacuous_column_is_dropped():
    g = cycle(6)
    w = WitnessCertificate(1, {x: {x: 1} for x in range(6)})
    out = reroute_witness(g, w, {2})
    assert out.rows == {x: {x: 1} for x in range(6) if x != 2}


@pytest.mark.parametrize("seed", range(100))
def test_reroute_trials(seed):
    rng = np.random.default_rng(seed)
    g = torus(8)
    w = ball_witness(g, 2)
    removed = set(rng.choice(64, size=int(rng.integers(1, 12)), replace=False).tolist())
    out = reroute_witness(g, w, removed)
    assert out.norms_exact()
    for u, v in g.simple_edges():
        if u not in removed and v not in removed:
            assert out.edge_variation(u, v) <= w.edge_variation(u, v)


# ---------------------------------------------------------------- localization and peeling

def test_localized_folner_on_cycle():
    g = build_family("cycle", [16]).graphs[0]
    w = ball_witness(g, 2)
    assert w.measured_eps(g) == Fraction(2, 5)
    lf = localized_folner(g, w)
    assert lf.folner.elements == (0, 1, 2, 14, 15) and lf.folner.ratio == Fraction(2, 5)
    assert lf.eps == Fraction(4, 5) and lf.radius <= 2


def test_localized_folner_on_torus_box_witness():
    g = torus(8)
    w = push_witness_to_schreier(Z2, torus_action(8), box_folner(Z2, 4))
    lf = localized_folner(g, w)
    assert lf.folner.boundary < lf.eps * lf.folner.size
    assert lf.radius <= w.support_radius(g)


def test_zero_variation_witness_needs_target():
    g = cycle(8)
    w = WitnessCertificate(8, {x: {y: 1 for y in range(8)} for x in range(8)})
    with pytest.raises(PreconditionError):
        localized_folner(g, w)


def test_peel_cycle_interval_witness():
    g = build_family("cycle", [100]).graphs[0]
    w = push_witness_to_schreier(Z1, cyclic_action(100), box_folner(Z1, 20))
    assert w.measured_eps(g) == Fraction(1, 10) and w.support_radius(g) == 19
    p = peel_partition(g, w, Fraction(1, 5))
    assert p.eps < Fraction(1, 5) and p.K <= int(p.meta["ball_max"]) == 39
    p.verify(g)


def test_peel_torus_box_witness():
    g = torus(20)
    w = push_witness_to_schreier(Z2, torus_action(20), box_folner(Z2, 10))
    p = peel_partition(g, w)
    assert p.eps < Fraction(4, 5) and p.K <= int(p.meta["ball_max"])


def test_peel_single_vertex():
    g = LabeledMultigraph(1, [], labels=("t",), degree_bound=1)
    p = peel_partition(g, WitnessCertificate(1, {0: {0: 1}}))
    assert p.blocks == [[0]] and p.cut == []


# ---------------------------------------------------------------- partitions

def test_exact_partition_c6():
    p = exact_partition(cycle(6), Fraction(2, 5))
    assert (len(p.cut), p.K) == (2, 3)


def test_exact_partition_cap():
    with pytest.raises(CapExceededError):
        exact_partition(cycle(13), Fraction(1, 2))


@pytest.mark.parametrize("seed", range(50))
def test_exact_partition_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    edges = [(int(rng.integers(0, i)), i, "x") for i in range(1, n)]
    edges += [(int(a), int(b), "x") for a, b in rng.integers(0, n, size=(int(rng.integers(0, n)), 2)) if a != b]
    g = LabeledMultigraph(n, edges, labels=("x",), degree_bound=4 * n)
    for eps in (Fraction(1, 5), Fraction(2, 5)):
        assert exact_partition(g, eps).K == brute_min_K(g, eps)


def test_blocks_on_cycle_and_torus():
    p = block_partition(build_family("cycle", [100]).graphs[0], 6)
    assert (len(p.cut), p.eps, p.K) == (17, Fraction(17, 100), 6)
    q = block_partition(torus(64), 11)
    assert (q.eps, q.K) == (Fraction(3, 16), 121) and q.eps < Fraction(1, 5)
    r = block_partition(torus(66), 11)
    assert (r.eps, r.K) == (Fraction(2, 11), 121)


def test_partition_certificate_round_trip():
    g = cycle(8)
    p = block_partition(g, 4)
    back = partition_from_fields(parse_certificate(p.to_text()))
    back.verify(g)
    assert back.blocks == p.blocks and back.eps == p.eps


def test_carve_partition():
    g = build_family("cycle", [60]).graphs[0]
    p = hyperfinite_partition(g, Fraction(1, 5), "carve")
    assert p.eps < Fraction(1, 5)
    p.verify(g)


def test_expander_is_infeasible():
    petersen = nx.petersen_graph()
    g = LabeledMultigraph(10, [(u, v, "x") for u, v in petersen.edges], labels=("x",), degree_bound=3)
    with pytest.raises(InfeasibleError):
        hyperfinite_partition(g, Fraction(1, 5), "exact", k_cap=5)


# ---------------------------------------------------------------- lifting

def test_lift_torus_block():
    g = torus(50)
    res = lift_partition_to_folner(g, block_partition(g, 10), Z2, eps=Fraction(2, 5) + Fraction(1, 100))
    assert res.folner.size == 100 and res.folner.ratio == Fraction(2, 5) == res.graph_ratio
    assert res.bad_fraction == 0
    xs = sorted({e[0] for e in res.folner.elements})
    ys = sorted({e[1] for e in res.folner.elements})
    assert len(xs) == len(ys) == 10 and xs == list(range(xs[0], xs[0] + 10))


def test_lift_cycle_block():
    g = build_family("cycle", [64]).graphs[0]
    res = lift_partition_to_folner(g, block_partition(g, 8), Z1)
    assert res.folner.size == 8 and res.folner.ratio == Fraction(1, 4)


def test_lift_fails_when_balls_wrap():
    g = torus(16)
    with pytest.raises(InfeasibleError):
        lift_partition_to_folner(g, block_partition(g, 4), Z2)


# ---------------------------------------------------------------- almost-A and gluing

def test_almost_a_pure_torus_family():
    F = box_folner(Z2, 4)
    seq = build_family("torus", [16, 24, 32])
    rep = almost_a_certify(seq, Z2, F)
    for (k, g), row, w in zip(seq, rep.rows, rep.witnesses):
        assert row.removed == 0 and row.branch == "folner"
        pushed = push_witness_to_schreier(Z2, torus_action(int(g.meta["side"])), F)
        assert w.rows == pushed.rows


def test_almost_a_corrupted_patch():
    F = box_folner(Z2, 4)
    graphs = []
    for g in build_family("torus", [16, 24, 32, 48]).graphs:
        graphs.append(g.with_edges([e for e in g.edges if not (e[0] == 0 and e[2] == "a")]))
    rep = almost_a_certify(GraphSequence(graphs, [0, 1, 2, 3], "torus"), Z2, F)
    fractions = [r.fraction for r in rep.rows]
    assert all(b < a for a, b in zip(fractions, fractions[1:]))
    assert [r.eps for r in rep.rows[1:]] == [Fraction(1, 2)] * 3
    assert all(w.norms_exact() for w in rep.witnesses)


def test_glue_ratios():
    res = glue_expander(build_family("torus", [8, 32, 64]),
                        build_family("random_schreier", [10, 10, 10], seed=11))
    assert [r.ratio for r in res.rows] == [Fraction(5, 32), Fraction(5, 512), Fraction(5, 2048)]
    assert all(r.ratio < Fraction(1, r.position) for r in res.rows)


def test_glue_infeasible_raises():
    with pytest.raises(InfeasibleError):
        glue_expander(build_family("torus", [4]), build_family("random_schreier", [10, 10], seed=11))


def test_glue_single_vertex_expander():
    box = build_family("torus", [8])
    single = GraphSequence([LabeledMultigraph(1, [], labels=("c",), degree_bound=1)])
    res = glue_expander(box, single)
    assert res.sequence.graphs[0].vertex_count == 64
    assert res.sequence.graphs[0].edges == box.graphs[0].edges


SPECTRAL_FIXTURE_SEED_11 = [0.1567, 0.1753, 0.1454]


def test_glued_sequence_statistics_and_spectral_fixture():
    box = build_family("torus", [8, 32, 64])
    exp = build_family("random_schreier", [10, 10, 10], seed=11)
    res = glue_expander(box, exp)
    code = oracle_code(Z2, 2)
    for g, h, row, fixture in zip(res.sequence.graphs, exp.graphs, res.rows, SPECTRAL_FIXTURE_SEED_11):
        p2 = Fraction(int(match_mask(g, code, 2).sum()), g.vertex_count)
        assert p2 >= glue_bound(g, h.vertex_count, box.graphs[row.box_index], 2)
        assert cheeger(expander_side(g), "spectral_lower") >= fixture
