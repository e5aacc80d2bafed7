"""Folner sets, property-A witnesses, and hyperfinite partitions.

Witness vectors are integer rows over a common denominator so every norm
and variation is an exact rational.  Boundaries are edge boundaries of the
simple view.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bs import ball_code, deterministic_traversal, match_mask, oracle_code
from .certificates import (PartitionCertificate, WitnessCertificate, boundary_size,
                           simple_edges_among)
from .errors import (CapExceededError, InfeasibleError, PreconditionError, ViolationError)
from .graph import GraphSequence, LabeledMultigraph, ball, bfs_distances, components
from .groups import GroupOracle, PermAction, schreier_graph

EXACT_PARTITION_CAP = 12


def cap_override(default: int) -> int:
    raw = os.environ.get("GSQ_CAP_OVERRIDE")
    return int(raw) if raw else default


# ---------------------------------------------------------------- Folner sets

@dataclass
class FolnerSet:
    elements: tuple
    boundary: int
    side: str  # "group" or "graph"
    words: tuple = ()
    center: int | None = None

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.boundary, self.size)

    @property
    def word_radius(self) -> int:
        return max((len(w) for w in self.words), default=0)


def group_boundary(oracle: GroupOracle, elements) -> int:
    """Edge boundary of a finite set in the Cayley graph."""
    elems = set(elements)
    count = 0
    for g in elems:
        for s in oracle.generators:
            for e in (1, -1):
                if oracle.multiply(g, s, e) not in elems:
                    count += 1
    return count


def folner_set(oracle: GroupOracle, eps) -> FolnerSet:
    """Box ``[0, m)^d`` in Z^d with the least m such that 2d/m < eps."""
    if oracle.kind != "free_abelian":
        raise PreconditionError(f"no built-in Folner sets for {oracle.kind}")
    eps = Fraction(eps)
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    d = oracle.rank
    m = math.floor(Fraction(2 * d) / eps) + 1
    elements = tuple(itertools.product(range(m), repeat=d))
    words = tuple(oracle.word_of(e) for e in elements)
    fs = FolnerSet(elements, group_boundary(oracle, elements), "group", words)
    if fs.ratio != Fraction(2 * d, m) or not fs.ratio < eps:
        raise AssertionError("box boundary differs from 2d/m")
    return fs


def box_folner(oracle: GroupOracle, m: int) -> FolnerSet:
    elements = tuple(itertools.product(range(m), repeat=oracle.rank))
    return FolnerSet(elements, group_boundary(oracle, elements), "group",
                     tuple(oracle.word_of(e) for e in elements))


def function_variation(g: LabeledMultigraph, phi: dict, active=None) -> Fraction:
    edges = simple_edges_among(g, active) if active is not None else g.simple_edges()
    return sum((abs(phi.get(u, 0) - phi.get(v, 0)) for u, v in edges), Fraction(0))


def level_sets(phi: dict):
    """Super-level sets ``{phi >= v}`` for the positive values v, largest v first."""
    values = sorted({v for v in phi.values() if v > 0}, reverse=True)
    for v in values:
        yield v, sorted(x for x, p in phi.items() if p >= v)


def folner_from_function(g: LabeledMultigraph, phi: dict, eps, active=None) -> FolnerSet:
    """First super-level set F of phi with ``|dF| < eps |F|``.

    Precondition: total variation of phi over edges is at most ``eps`` (the
    co-area sum then guarantees a strict level set unless every level set
    sits exactly on the bound, which is reported as a violation).
    """
    eps = Fraction(eps)
    phi = {x: Fraction(p) for x, p in phi.items() if p}
    if any(p < 0 for p in phi.values()) or sum(phi.values()) != 1:
        raise PreconditionError("phi must be non-negative with sum exactly 1")
    var = function_variation(g, phi, active)
    if var > eps:
        raise PreconditionError(f"variation {var} exceeds eps {eps}")
    for _, F in level_sets(phi):
        b = boundary_size(g, F, active)
        if b < eps * len(F):
            return FolnerSet(tuple(F), b, "graph")
    raise ViolationError(f"no level set beats eps {eps} (variation {var})")


# ---------------------------------------------------------------- witnesses

def ball_witness(g: LabeledMultigraph, r: int) -> WitnessCertificate:
    """xi_x uniform on B(x, r); the common denominator is the lcm of ball sizes."""
    balls = {x: sorted(bfs_distances(g, x, limit=r)) for x in range(g.vertex_count)}
    den = math.lcm(*[len(b) for b in balls.values()])
    rows = {x: {y: den // len(b) for y in b} for x, b in balls.items()}
    return WitnessCertificate(den, rows, g.name)


def push_witness_to_schreier(oracle: GroupOracle, action: PermAction, F: FolnerSet,
                             cap: int = 200_000) -> WitnessCertificate:
    """xi_x(y) = |{z in F : x.z = y}| / |F| on the points of the action."""
    if oracle.kind not in ("free_abelian", "free"):
        raise PreconditionError("pushforward needs words for the Folner set elements")
    if len(F.elements) > cap:
        raise CapExceededError(f"Folner set of size {len(F.elements)} exceeds cap {cap}")
    words = F.words or tuple(oracle.word_of(z) for z in F.elements)
    n = action.degree
    counts = [dict() for _ in range(n)]
    for w in words:
        img = action.act_all(w)
        for x in range(n):
            y = int(img[x])
            counts[x][y] = counts[x].get(y, 0) + 1
    return WitnessCertificate(len(words), {x: counts[x] for x in range(n)}, f"push_{action.degree}")


def reroute_witness(g: LabeledMultigraph, w: WitnessCertificate, removed) -> WitnessCertificate:
    """Drop ``removed`` and move their mass onto the remaining graph.

    For each column a (first the removed ones, then the surviving ones, both
    in ascending order) the rows holding mass at a split into connected
    components of the remaining graph; each component sends its mass at a to
    a representative, which is a itself if it lies in the component and the
    smallest id otherwise.  The second pass keeps every support inside its
    row's component.
    """
    removed = set(removed)
    active = [x for x in w.rows if x not in removed]
    if not active:
        raise PreconditionError("removing these vertices leaves nothing")
    act = set(active)
    rows = {x: dict(w.rows[x]) for x in active}
    adj = {x: [y for y in g.neighbors[x] if y in act] for x in active}
    before = {e: w.edge_variation(*e) for e in simple_edges_among(g, act)}

    def move_column(a):
        holders = sorted(x for x in active if rows[x].get(a, 0))
        if not holders:
            return
        hs = set(holders)
        seen = set()
        for start in holders:
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            i = 0
            while i < len(comp):
                for y in adj[comp[i]]:
                    if y in hs and y not in seen:
                        seen.add(y)
                        comp.append(y)
                i += 1
            rep = a if a in comp else min(comp)
            if rep == a:
                continue
            for x in comp:
                mass = rows[x].pop(a)
                rows[x][rep] = rows[x].get(rep, 0) + mass

    for a in sorted({y for r in rows.values() for y in r if y not in act}):
        move_column(a)
    for a in sorted({y for r in rows.values() for y in r}):
        move_column(a)
    out = WitnessCertificate(w.denominator, rows, w.graph_name)
    if not out.norms_exact():
        raise AssertionError("rerouting changed a norm")
    for e, v in before.items():
        if out.edge_variation(*e) > v:
            raise AssertionError(f"rerouting increased the variation on edge {e}")
    return out


@dataclass
class LocalFolner:
    folner: FolnerSet
    center: int
    radius: int
    eps: Fraction


def localized_folner(g: LabeledMultigraph, w: WitnessCertificate, eps=None) -> LocalFolner:
    """Pick the column z0 with least variation per unit mass and sweep it.

    The default target is ``d * measured eps`` with d the maximum degree.
    """
    active = set(w.rows)
    edges = simple_edges_among(g, active)
    measured = max((w.edge_variation(u, v) for u, v in edges), default=Fraction(0))
    if eps is None:
        if measured == 0:
            raise PreconditionError("witness has zero measured eps; give an explicit target")
        eps = g.max_degree * measured
    eps = Fraction(eps)
    mass = {}
    for r in w.rows.values():
        for y, c in r.items():
            mass[y] = mass.get(y, 0) + c
    var = dict.fromkeys(mass, 0)
    for u, v in edges:
        ru, rv = w.rows[u], w.rows[v]
        for y in set(ru) | set(rv):
            var[y] += abs(ru.get(y, 0) - rv.get(y, 0))
    z0 = min(mass, key=lambda y: (Fraction(var[y], mass[y]), y))
    total = mass[z0]
    phi = {x: Fraction(r[z0], total) for x, r in w.rows.items() if r.get(z0, 0)}
    F = folner_from_function(g, phi, eps, active)
    F.center = z0
    # F lies in the support of column z0, i.e. within the support radius of z0
    dist = bfs_distances(g, z0, allowed=active)
    missing = [x for x in F.elements if x not in dist]
    if missing:
        raise ViolationError(f"Folner set not connected to its center {z0}")
    radius = max(dist[x] for x in F.elements)
    return LocalFolner(F, z0, radius, eps)


def peel_partition(g: LabeledMultigraph, w: WitnessCertificate, eps=None,
                   support_radius: int | None = None) -> PartitionCertificate:
    """Remove localized Folner sets one by one and reroute the witness."""
    if g.vertex_count == 1:
        return PartitionCertificate.from_blocks(g, [[0]], meta={"method": "peel"})
    if eps is None:
        measured = w.measured_eps(g)
        if measured == 0:
            raise PreconditionError("witness has zero measured eps; give an explicit target")
        eps = g.max_degree * measured
    eps = Fraction(eps)
    S = w.support_radius(g) if support_radius is None else support_radius
    ball_max = max(len(bfs_distances(g, x, limit=S)) for x in range(g.vertex_count))
    blocks = []
    current = w
    while True:
        lf = localized_folner(g, current, eps)
        blocks.append(list(lf.folner.elements))
        left = [x for x in current.rows if x not in set(lf.folner.elements)]
        if not left:
            break
        current = reroute_witness(g, current, lf.folner.elements)
    p = PartitionCertificate.from_blocks(g, blocks, meta={"method": "peel", "target": str(eps)})
    if not p.eps < eps:
        raise ViolationError(f"peeled cut fraction {p.eps} not below {eps}")
    if p.K > ball_max:
        raise ViolationError(f"block of size {p.K} exceeds max ball size {ball_max}")
    p.meta["ball_max"] = str(ball_max)
    return p


# ---------------------------------------------------------------- partitions

def _components_after_cut(n, edges, cut_mask):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (u, v), c in zip(edges, cut_mask):
        if not c:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
    groups = {}
    for v in range(n):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


def exact_partition(g: LabeledMultigraph, eps, cap: int = EXACT_PARTITION_CAP) -> PartitionCertificate:
    """Least K over cut sets with fewer than eps*|V| edges (exhaustive)."""
    cap = cap_override(cap)
    n = g.vertex_count
    if n > cap:
        raise CapExceededError(f"exact partition limited to {cap} vertices, got {n}")
    eps = Fraction(eps)
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    edges = g.simple_edges()
    budget = math.ceil(eps * n) - 1
    best = None
    # removing more edges never enlarges components, so only full budgets matter
    size = min(budget, len(edges))
    if size < 0:
        raise InfeasibleError("no cut set is small enough", {"budget": budget})
    for cut in itertools.combinations(range(len(edges)), size):
        mask = [False] * len(edges)
        for i in cut:
            mask[i] = True
        comps = _components_after_cut(n, edges, mask)
        K = max(len(c) for c in comps)
        if best is None or K < best[0]:
            best = (K, comps)
            if K == 1:
                break
    p = PartitionCertificate.from_blocks(g, best[1], meta={"method": "exact", "target": str(eps)})
    if not p.eps < eps:
        raise AssertionError("exact partition breaks its budget")
    return p


def block_partition(g: LabeledMultigraph, b: int) -> PartitionCertificate:
    family = g.meta.get("family")
    side = int(g.meta.get("side", 0))
    if b < 1:
        raise PreconditionError("block side must be positive")
    if family == "cycle":
        blocks = [list(range(s, min(s + b, side))) for s in range(0, side, b)]
    elif family == "torus":
        blocks = {}
        for i in range(side):
            for j in range(side):
                blocks.setdefault((i // b, j // b), []).append(i * side + j)
        blocks = list(blocks.values())
    else:
        raise PreconditionError("blocks method needs a graph tagged family=cycle or family=torus")
    return PartitionCertificate.from_blocks(g, blocks, meta={"method": f"blocks({b})"})


def carve_partition(g: LabeledMultigraph, eps, max_radius: int | None = None) -> PartitionCertificate:
    """Peel with uniform-ball witnesses, growing the radius until d/2 * eps_w < eps."""
    eps = Fraction(eps)
    d = g.max_degree
    limit = max_radius if max_radius is not None else g.vertex_count
    for r in range(1, limit + 1):
        w = ball_witness(g, r)
        if Fraction(d, 2) * w.measured_eps(g) < eps:
            return peel_partition(g, w, eps)
    raise InfeasibleError(f"no ball witness up to radius {limit} reaches eps {eps}")


def hyperfinite_partition(g: LabeledMultigraph, eps, method: str = "exact", b: int | None = None,
                          cap: int = EXACT_PARTITION_CAP, k_cap: int | None = None) -> PartitionCertificate:
    if method == "exact":
        p = exact_partition(g, eps, cap)
    elif method == "blocks":
        p = block_partition(g, b)
    elif method == "carve":
        p = carve_partition(g, eps)
    else:
        raise PreconditionError(f"unknown method {method!r}")
    if k_cap is not None and p.K > k_cap:
        raise InfeasibleError(f"least K under eps {eps} is {p.K} > {k_cap}", p)
    return p


# ---------------------------------------------------------------- lifting

@dataclass
class LiftResult:
    folner: FolnerSet
    block: list
    root: int
    R: int
    graph_ratio: Fraction
    bad_fraction: Fraction
    target: Fraction


def _eccentricity_root(g, block):
    """Block vertex minimising the distance to the farthest block vertex."""
    best = None
    bs = set(block)
    for v in block:
        dist = bfs_distances(g, v)
        if not bs <= set(dist):
            continue
        ecc = max(dist[x] for x in block)
        if best is None or (ecc, v) < best:
            best = (ecc, v)
    return best


def lift_partition_to_folner(g: LabeledMultigraph, p: PartitionCertificate, oracle: GroupOracle,
                             R: int | None = None, eps=None,
                             bad_threshold=Fraction(1, 2)) -> LiftResult:
    """Lift a low-boundary block whose neighbourhood looks like the Cayley graph."""
    p.verify(g)
    roots = {}
    for i, blk in enumerate(p.blocks):
        roots[i] = _eccentricity_root(g, blk)
    if R is None:
        R = max(ecc for ecc, _ in roots.values())
    target = Fraction(eps) if eps is not None else 4 * p.eps
    good = match_mask(g, oracle_code(oracle, 2 * R), 2 * R)
    bad_fraction = Fraction(int((~good).sum()), g.vertex_count)
    if bad_fraction >= bad_threshold:
        raise InfeasibleError(f"bad-vertex fraction {bad_fraction} >= {bad_threshold}",
                              {"bad_fraction": bad_fraction})
    nice = match_mask(g, oracle_code(oracle, R), R)
    best = None
    for i, blk in enumerate(p.blocks):
        if not all(nice[v] for v in blk):
            continue
        ecc, root = roots[i]
        if ecc > R:
            continue
        ratio = Fraction(boundary_size(g, blk), len(blk))
        if best is None or (ratio, blk[0]) < (best[0], best[1][0]):
            best = (ratio, blk, root)
    if best is None or not best[0] < target:
        raise InfeasibleError("no particularly nice block beats the target",
                              {"best_ratio": None if best is None else best[0], "target": target})
    ratio, blk, root = best
    gb = ball(g, root, R)
    cb = oracle.ball(R)
    trav_g = deterministic_traversal(gb)
    trav_c = deterministic_traversal(cb)
    if ball_code(gb).code != ball_code(cb).code:
        raise AssertionError("root ball differs from the Cayley ball")
    local_to_elem = {}
    for lg, lc in zip(trav_g[0], trav_c[0]):
        local_to_elem[gb.vertices[lg]] = cb.elements[lc]
    elements = tuple(local_to_elem[v] for v in blk)
    fs = FolnerSet(elements, group_boundary(oracle, elements), "group",
                   tuple(oracle.word_of(e) for e in elements) if oracle.kind != "permutation" else ())
    if fs.ratio != ratio:
        raise AssertionError(f"lifted ratio {fs.ratio} differs from block ratio {ratio}")
    return LiftResult(fs, list(blk), root, R, ratio, bad_fraction, target)


# ---------------------------------------------------------------- almost-A

@dataclass
class AlmostARow:
    position: int
    scale: int
    removed: int
    total: int
    fraction: Fraction
    eps: Fraction
    radius: int | float
    branch: str


@dataclass
class AlmostAReport:
    schedule: dict
    rows: list
    witnesses: list = field(default_factory=list)
    removed_sets: list = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["#position\tscale\tremoved\ttotal\tfraction\teps\tsupport_radius\tbranch"]
        lines += [f"{r.position}\t{r.scale}\t{r.removed}\t{r.total}\t{r.fraction}\t{r.eps}\t{r.radius}\t{r.branch}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"


def _walk(slots, x, word):
    """Follow a word from x through label slots; None if a slot is not single."""
    out, inn = slots
    for s, e in word:
        nxt = (out if e == 1 else inn)[s][x]
        if len(nxt) != 1:
            return None
        x = nxt[0]
    return x


def _slot_lists(g):
    out = {s: [[] for _ in range(g.vertex_count)] for s in g.labels}
    inn = {s: [[] for _ in range(g.vertex_count)] for s in g.labels}
    for u, v, s in g.edges:
        out[s][u].append(v)
        inn[s][v].append(u)
    return out, inn


def almost_a_certify(seq: GraphSequence, oracle: GroupOracle, F: FolnerSet) -> AlmostAReport:
    """Per index: bad set V', and a witness on G minus V' from the two-case formula."""
    S = F.word_radius
    graphs = list(seq.graphs)
    p = {}
    bad = {}
    for i, g in enumerate(graphs):
        for s in range(1, S + 1):
            mask = match_mask(g, oracle_code(oracle, s), s)
            bad[i, s] = set(np.flatnonzero(~mask).tolist())
            p[i, s] = Fraction(int(mask.sum()), g.vertex_count)
    schedule = {}
    for s in range(1, S + 1):
        ok = [p[i, s] >= 1 - Fraction(1, s) for i in range(len(graphs))]
        start = None
        for i in range(len(graphs) - 1, -1, -1):
            if not ok[i]:
                break
            start = i
        schedule[s] = start
    report = AlmostAReport(schedule, [])
    for i, g in enumerate(graphs):
        scales = [s for s in range(1, S + 1) if schedule[s] is not None and schedule[s] <= i]
        s_n = max(scales) if scales else 1
        removed = bad[i, s_n]
        active = [x for x in range(g.vertex_count) if x not in removed]
        if not active:
            raise PreconditionError(f"index {i}: every vertex is bad at scale {s_n}")
        if s_n >= S:
            slots = _slot_lists(g)
            rows = {}
            for x in active:
                row = {}
                for word in F.words:
                    y = _walk(slots, x, word)
                    if y is None:
                        raise AssertionError(f"good vertex {x} has a broken slot")
                    row[y] = row.get(y, 0) + 1
                rows[x] = row
            w = WitnessCertificate(F.size, rows, g.name)
            branch = "folner"
        else:
            w = WitnessCertificate(len(active), {x: {y: 1 for y in active} for x in active}, g.name)
            branch = "uniform"
        w = reroute_witness(g, w, removed)
        eps = w.measured_eps(g)
        report.rows.append(AlmostARow(i, s_n, len(removed), g.vertex_count,
                                      Fraction(len(removed), g.vertex_count), eps,
                                      w.support_radius(g), branch))
        report.witnesses.append(w)
        report.removed_sets.append(sorted(removed))
    return report


# ---------------------------------------------------------------- expander gluing

@dataclass
class GlueRow:
    position: int
    box_index: int
    expander_vertices: int
    box_vertices: int
    ratio: Fraction
    feasible: bool


@dataclass
class GlueResult:
    sequence: GraphSequence
    rows: list

    def to_tsv(self) -> str:
        lines = ["#n\tbox_index\texpander_vertices\tbox_vertices\tratio\tfeasible"]
        lines += [f"{r.position}\t{r.box_index}\t{r.expander_vertices}\t{r.box_vertices}\t{r.ratio}\t{int(r.feasible)}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"


def glue_at_point(box: LabeledMultigraph, exp: LabeledMultigraph, name=None) -> LabeledMultigraph:
    """Identify expander vertex 0 with box vertex 0; other expander ids shift past the box."""
    nb = box.vertex_count

    def relabel(v):
        return 0 if v == 0 else nb + v - 1

    edges = list(box.edges) + [(relabel(u), relabel(v), s) for u, v, s in exp.edges]
    labels = tuple(dict.fromkeys(list(box.labels) + list(exp.labels)))
    meta = {"family": "glued", "box_vertices": str(nb), "glue_vertex": "0"}
    return LabeledMultigraph(nb + exp.vertex_count - 1, edges, labels=labels,
                             degree_bound=(box.degree_bound or 1) + (exp.degree_bound or 1),
                             name=name or f"glue_{box.name}_{exp.name}", meta=meta)


def glue_expander(box: GraphSequence, exp: GraphSequence, strict: bool = True) -> GlueResult:
    """For the n-th expander take the next box graph with |H_n|/|box_k| < 1/n."""
    boxes = list(box.graphs)
    rows, graphs, idx = [], [], []
    k = -1
    for pos, h in enumerate(exp.graphs):
        n = pos + 1
        choice = None
        for j in range(k + 1, len(boxes)):
            if Fraction(h.vertex_count, boxes[j].vertex_count) < Fraction(1, n):
                choice = j
                break
        if choice is None:
            rows.append(GlueRow(n, -1, h.vertex_count, 0, Fraction(0), False))
            if strict:
                raise InfeasibleError(f"no box graph after index {k} is {n} times larger than expander {n}",
                                      rows)
            continue
        k = choice
        b = boxes[k]
        rows.append(GlueRow(n, k, h.vertex_count, b.vertex_count,
                            Fraction(h.vertex_count, b.vertex_count), True))
        graphs.append(glue_at_point(b, h, name=f"glued_{n}"))
        idx.append(n)
    return GlueResult(GraphSequence(graphs, idx, "glued"), rows)


def glue_bound(g: LabeledMultigraph, exp_vertices: int, box: LabeledMultigraph, r: int) -> Fraction:
    """Lower bound 1 - (|H| + |B_box(glue, r)|)/|V| for the matching fraction."""
    near = len(bfs_distances(box, 0, limit=r))
    return 1 - Fraction(exp_vertices + near, g.vertex_count)


def expander_side(g: LabeledMultigraph) -> LabeledMultigraph:
    nb = int(g.meta["box_vertices"])
    sub, _ = g.induced([0] + list(range(nb, g.vertex_count)), name=f"{g.name}_expander")
    return sub
