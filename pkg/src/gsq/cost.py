"""Upper bounds on cost by distortion-bounded rewiring, and the subgroup reduction.

Every rewiring keeps the vertex set and is recorded as a move log; the
output graph is always produced by replaying that log, so replay is exact
by construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .coarse import VertexMap, replay_moves, verify_map
from .errors import CapExceededError, PreconditionError, ViolationError
from .graph import GraphSequence, LabeledMultigraph, edge_count, girth
from .groups import PermAction, SubgroupPair


@dataclass
class CostBound:
    L: int
    graph: LabeledMultigraph
    moves: list
    edges: int
    ratio: Fraction
    verified: bool
    measured: int
    meta: dict = field(default_factory=dict)

    def log_text(self) -> str:
        return "".join(f"{k} {u} {v} {s}\n" for k, u, v, s in self.moves)


def parse_moves(text: str) -> list:
    moves = []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        moves.append((parts[0], int(parts[1]), int(parts[2]), parts[3]))
    return moves


def _certify(g, moves, L, mode, name, meta=None) -> CostBound:
    out = replay_moves(g, moves, name=name)
    cert = verify_map(VertexMap.identity(g, out), "bilipschitz", bound=L)
    return CostBound(L, out, list(moves), edge_count(out, mode),
                     Fraction(edge_count(out, mode), g.vertex_count), True, cert.constant,
                     dict(meta or {}, exhaustive=str(cert.exhaustive)))


def _bounded_path(adj, u, v, limit):
    """A shortest u-v path of length <= limit as a list of vertices, or None."""
    if u == v:
        return [u]
    parent = {u: None}
    frontier = [u]
    depth = 0
    while frontier and depth < limit:
        depth += 1
        nxt = []
        for x in frontier:
            for y in sorted(adj[x]):
                if y in parent:
                    continue
                parent[y] = x
                if y == v:
                    path = [v]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                nxt.append(y)
        frontier = nxt
    return None


def greedy_thin(g: LabeledMultigraph, L: int, mode: str = "multi") -> CostBound:
    """Delete edges in (u, v, label) order while every original edge stays L-short.

    A parallel copy is always removable.  Removing the last copy of a simple
    edge is allowed only if its endpoints, and the endpoints of every edge
    removed earlier, remain within distance L.
    """
    if L < 1:
        raise PreconditionError("L must be at least 1")
    if not g.connected:
        raise PreconditionError("greedy thinning needs a connected graph")
    mult = {}
    for u, v, s in g.edges:
        if u != v:
            key = (min(u, v), max(u, v))
            mult[key] = mult.get(key, 0) + 1
    adj = [set(nb) for nb in g.neighbors]
    witness = {}   # removed simple edge -> path edges certifying distance <= L
    users = {}     # simple edge -> removed edges whose witness uses it
    moves = []

    def path_edges(path):
        return [(min(a, b), max(a, b)) for a, b in zip(path, path[1:])]

    for u, v, s in sorted(g.edges, key=lambda e: (e[0], e[1], e[2])):
        if u == v:
            moves.append(("del", u, v, s))
            continue
        key = (min(u, v), max(u, v))
        if mult[key] > 1:
            mult[key] -= 1
            moves.append(("del", u, v, s))
            continue
        a, b = key
        adj[a].discard(b)
        adj[b].discard(a)
        new_witness = {}
        ok = True
        for e in [key] + sorted(users.get(key, ())):
            p = _bounded_path(adj, e[0], e[1], L)
            if p is None:
                ok = False
                break
            new_witness[e] = p
        if not ok:
            adj[a].add(b)
            adj[b].add(a)
            continue
        mult[key] = 0
        moves.append(("del", u, v, s))
        for e, p in new_witness.items():
            for pe in path_edges(witness.get(e, [])):
                users.get(pe, set()).discard(e)
            witness[e] = p
            for pe in path_edges(p):
                users.setdefault(pe, set()).add(e)
    return _certify(g, moves, L, mode, f"{g.name}_thin{L}", {"method": "greedy"})


def torus_thinning(g: LabeledMultigraph, L: int, mode: str = "multi") -> CostBound:
    """Keep every row edge and the column edges of every L-th column."""
    if g.meta.get("family") != "torus":
        raise PreconditionError("torus thinning needs a graph tagged family=torus")
    n = int(g.meta["side"])
    if L < 1 or n % L:
        raise PreconditionError(f"L={L} does not divide the side {n}")
    moves = []
    for u, v, s in g.edges:
        # label a moves along columns: (i,j) -> (i+1,j); j is the column index
        if s == "a" and (u % n) % L:
            moves.append(("del", u, v, s))
    cb = _certify(g, moves, L + 2, mode, f"{g.name}_torus{L}", {"method": "torus"})
    cb.meta["budget"] = str(L)
    return cb


# ---------------------------------------------------------------- subgroup reduction

@dataclass
class AugmentedPair:
    graph: LabeledMultigraph
    h_labels: tuple
    g_labels: tuple
    base: tuple
    index: int


def augmented_pair_graph(pair: SubgroupPair, level: int, g_labels=None) -> AugmentedPair:
    """Schreier graph of the tower quotient on S' (subgroup words) plus outside generators."""
    lv = pair.levels[level]
    gamma = lv.gamma
    if g_labels is None:
        g_labels = tuple(s for s in pair.ambient if pair.coset_action.perms[s][0] != 0)
    cover = PermAction(pair.index, {s: pair.coset_action.perms[s] for s in g_labels}) if g_labels else None
    if pair.index > 1 and (cover is None or not cover.transitive):
        raise PreconditionError("outside generators do not act transitively on the cosets")
    edges = []
    for x in range(gamma.degree):
        for s in g_labels:
            edges.append((x, gamma.perms[s][x], s))
    words = pair.generator_words()
    for h in pair.subgroup_labels:
        img = gamma.act_all(words[h])
        edges += [(x, int(img[x]), h) for x in range(gamma.degree)]
    labels = tuple(g_labels) + tuple(pair.subgroup_labels)
    g = LabeledMultigraph(gamma.degree, edges, labels=labels, degree_bound=2 * len(labels),
                          name=f"augmented_{level}")
    return AugmentedPair(g, tuple(pair.subgroup_labels), tuple(g_labels), lv.base_points, pair.index)


def distances_to_set(g: LabeledMultigraph, sources, allowed_labels=None) -> dict:
    if allowed_labels is None:
        adj = g.neighbors
    else:
        adj = [set() for _ in range(g.vertex_count)]
        for u, v, s in g.edges:
            if s in allowed_labels and u != v:
                adj[u].add(v)
                adj[v].add(u)
        adj = [sorted(a) for a in adj]
    dist = {v: 0 for v in sources}
    queue = deque(sorted(sources))
    while queue:
        x = queue.popleft()
        for y in adj[x]:
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


@dataclass
class ReductionResult:
    graph: LabeledMultigraph
    moves: list
    R_max: int
    phase1_bound: int
    phase1_measured: int
    arcs: list
    depth: int


def _nearest_base(adj, base, x):
    """Nearest base vertex through g-edges (smallest id among the nearest)."""
    if x in base:
        return x, 0
    seen = {x}
    frontier = [x]
    d = 0
    while frontier:
        d += 1
        nxt = []
        hits = []
        for v in frontier:
            for w in adj[v]:
                if w in seen:
                    continue
                seen.add(w)
                if w in base:
                    hits.append(w)
                nxt.append(w)
        if hits:
            return min(hits), d
        frontier = nxt
    return None, None


def _g_adjacency(n, edges, g_labels):
    adj = [set() for _ in range(n)]
    for u, v, s in edges:
        if s in g_labels and u != v:
            adj[u].add(v)
            adj[v].add(u)
    return adj


def _shortest_arc(n, adj, base):
    """Shortest g-path between base vertices with non-base interior.

    Each (base vertex, first interior vertex) pair is a separate terminal;
    the shortest arc is the shortest path between two distinct terminals,
    found by a multi-source search over interior vertices.
    """
    best = None
    for a in sorted(base):
        for b in sorted(adj[a]):
            if b in base and a < b:
                cand = (1, (a, b), (a, b))
                best = cand if best is None or cand < best else best
    owner = {}
    dist = {}
    parent = {}
    queue = deque()
    for a in sorted(base):
        for u in sorted(adj[a]):
            if u in base:
                continue
            t = (a, u)
            if u not in owner or t < owner[u]:
                if u not in owner:
                    queue.append(u)
                owner[u] = t
                dist[u] = 1
                parent[u] = a
    while queue:
        x = queue.popleft()
        for y in sorted(adj[x]):
            if y in base or y in owner:
                continue
            owner[y] = owner[x]
            dist[y] = dist[x] + 1
            parent[y] = x
            queue.append(y)

    def trace(v):
        path = [v]
        while path[-1] not in base:
            path.append(parent[path[-1]])
        return path[::-1]

    for x in sorted(owner):
        for y in sorted(adj[x]):
            if y in base:
                if owner[x] != (y, x):
                    path = trace(x) + [y]
                    length = len(path) - 1
                    if path[0] == path[-1] and length < 3:
                        continue
                    if path[0] > path[-1]:
                        path = path[::-1]
                    cand = (length, (path[0], path[-1]), tuple(path))
                    best = cand if best is None or cand < best else best
            elif y in owner and owner[y] != owner[x] and x < y:
                path = trace(x) + trace(y)[::-1]
                if len(set(path)) < len(path) - (1 if path[0] == path[-1] else 0):
                    continue
                length = len(path) - 1
                if path[0] > path[-1]:
                    path = path[::-1]
                cand = (length, (path[0], path[-1]), tuple(path))
                best = cand if best is None or cand < best else best
    return None if best is None else list(best[2])


def _middle_edge(path):
    k, r = divmod(len(path) - 1, 2)
    if r:
        return path[k], path[k + 1]
    left, right = (path[k - 1], path[k]), (path[k], path[k + 1])
    return left if path[k - 1] < path[k + 1] else right


def base_copy_reduction(g: LabeledMultigraph, h_labels, g_labels, base, index: int,
                        budget: int) -> ReductionResult:
    """Strip h-edges off the base copy, then cut every arc at its middle.

    The result is the base copy with pendant trees, and every vertex keeps
    its distance to the base copy.
    """
    base = set(base)
    h_labels, g_labels = set(h_labels), set(g_labels)
    if not base:
        raise PreconditionError("empty base copy")
    before = distances_to_set(g, base)
    if len(before) != g.vertex_count:
        raise PreconditionError("some vertex cannot reach the base copy")
    if max(before.values()) > index:
        raise PreconditionError(f"a vertex is farther than the index {index} from the base copy")
    g_adj = _g_adjacency(g.vertex_count, g.edges, g_labels)
    h_base = [set() for _ in range(g.vertex_count)]
    for u, v, s in g.edges:
        if s in h_labels and u in base and v in base and u != v:
            h_base[u].add(v)
            h_base[v].add(u)

    r_max = 0
    moves = []
    for u, v, s in g.edges:
        if s not in h_labels or (u in base and v in base):
            continue
        if (u in base) != (v in base):
            raise PreconditionError(f"h-edge ({u},{v}) leaves the base copy")
        pu, _ = _nearest_base(g_adj, base, u)
        pv, _ = _nearest_base(g_adj, base, v)
        if pu is None or pv is None:
            raise PreconditionError("a vertex has no g-path to the base copy")
        d = distances_to_set(_adj_graph(g.vertex_count, h_base), {pu}).get(pv)
        if d is None:
            raise PreconditionError("base copy is disconnected in h-edges")
        r_max = max(r_max, d)
        if r_max > budget:
            raise CapExceededError(f"trapezoid constant {r_max} exceeds budget {budget}")
        moves.append(("del", u, v, s))
    stage1 = replay_moves(g, moves)
    phase1_bound = r_max + 2 * index
    measured = verify_map(VertexMap.identity(g, stage1), "bilipschitz", bound=phase1_bound).constant

    arcs = []
    edges = list(stage1.edges)
    while True:
        adj = _g_adjacency(g.vertex_count, edges, g_labels)
        arc = _shortest_arc(g.vertex_count, adj, base)
        if arc is None:
            break
        x, y = _middle_edge(arc)
        arcs.append(arc)
        keep = []
        for e in edges:
            if e[2] in g_labels and {e[0], e[1]} == {x, y}:
                moves.append(("del",) + tuple(e))
            else:
                keep.append(e)
        edges = keep
    out = replay_moves(g, moves, name=f"{g.name}_reduced")
    after = distances_to_set(out, base)
    if after != before:
        changed = sorted(v for v in before if after.get(v) != before[v])
        raise ViolationError(f"distance to the base copy changed at {changed[:5]}", changed)
    _check_pendant_trees(out, base)
    return ReductionResult(out, moves, r_max, phase1_bound, measured, arcs, max(after.values()))


def _adj_graph(n, adj_sets):
    edges = [(u, v, "h") for u in range(n) for v in adj_sets[u] if u < v]
    return LabeledMultigraph(n, edges, labels=("h",), degree_bound=max(1, n))


def _check_pendant_trees(g: LabeledMultigraph, base) -> None:
    """Outside the base copy: forests, each tree attached by exactly one edge."""
    outside = [v for v in range(g.vertex_count) if v not in base]
    seen = set()
    for start in outside:
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        i = 0
        while i < len(comp):
            for w in g.neighbors[comp[i]]:
                if w not in base and w not in seen:
                    seen.add(w)
                    comp.append(w)
            i += 1
        cs = set(comp)
        inner = sum(1 for a, b in g.simple_edges() if a in cs and b in cs)
        attach = sum(1 for a, b in g.simple_edges() if (a in cs) != (b in cs))
        if inner != len(comp) - 1 or attach != 1:
            raise ViolationError(f"component {sorted(cs)[:5]} outside the base copy is not a pendant tree")


# ---------------------------------------------------------------- identities and intervals

@dataclass
class MultRow:
    index: int
    gamma_vertices: int
    gamma_edges: int
    lambda_vertices: int
    lambda_edges: int
    e_gamma: Fraction
    e_lambda: Fraction
    holds: bool


@dataclass
class MultReport:
    index: int
    rows: list

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.rows)

    def to_tsv(self) -> str:
        lines = ["#index\tgamma_vertices\tgamma_edges\tlambda_vertices\tlambda_edges\te_gamma\te_lambda\tholds"]
        lines += [f"{r.index}\t{r.gamma_vertices}\t{r.gamma_edges}\t{r.lambda_vertices}\t{r.lambda_edges}"
                  f"\t{r.e_gamma}\t{r.e_lambda}\t{int(r.holds)}" for r in self.rows]
        return "\n".join(lines) + "\n"


def multiplicativity_check(gamma: GraphSequence, lam: GraphSequence, index: int,
                           mode: str = "multi") -> MultReport:
    """Check ``m (e_Gamma - 1) == e_Lambda - 1`` at every paired index."""
    if list(gamma.indices) != list(lam.indices):
        raise PreconditionError("paired sequences have different indices")
    rows = []
    for (k, g), (_, h) in zip(gamma, lam):
        if g.vertex_count != index * h.vertex_count:
            raise PreconditionError(f"index {k}: {g.vertex_count} != {index} * {h.vertex_count}")
        eg, eh = edge_count(g, mode), edge_count(h, mode)
        rg, rh = Fraction(eg, g.vertex_count), Fraction(eh, h.vertex_count)
        rows.append(MultRow(k, g.vertex_count, eg, h.vertex_count, eh, rg, rh,
                            index * (rg - 1) == rh - 1))
    return MultReport(index, rows)


@dataclass
class CostInterval:
    lower: Fraction
    upper: Fraction
    large_girth: bool
    girths: list

    def __str__(self):
        return f"[{self.lower}, {self.upper}]"


def cost_interval(seq: GraphSequence, large_girth: bool = False, upper_bounds=None,
                  mode: str = "multi") -> CostInterval:
    """Lower and upper bounds on cost over the truncation's tail.

    The lower bound is the multi-mode edge number for families flagged as
    large-girth (where edge number equals cost), otherwise ``1 - 1/|V|``.
    The upper bound is the best ratio among the sequence itself and any
    supplied rewirings, one per index.
    """
    graphs = list(seq.graphs)
    tail = graphs[len(graphs) // 2:]
    offset = len(graphs) - len(tail)
    ratios = [Fraction(edge_count(g, mode), g.vertex_count) for g in graphs]
    if upper_bounds is not None:
        ratios = [min(r, Fraction(u)) for r, u in zip(ratios, upper_bounds)]
    upper = min(ratios[offset:])
    girths = [girth(g) for g in graphs] if large_girth else []
    if large_girth:
        lower = min(Fraction(edge_count(g, "multi"), g.vertex_count) for g in tail)
        lower = min(lower, upper)
    else:
        lower = min(1 - Fraction(1, g.vertex_count) for g in tail)
    return CostInterval(lower, upper, large_girth, girths)
