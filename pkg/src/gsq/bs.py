"""Rooted-ball canonical codes and Benjamini-Schramm local statistics.

Two code families share one namespace:

* ``D`` codes come from a traversal that is forced by the labels: from the
  root, each vertex's slots (label, direction) are read in a fixed order and
  every slot holds at most one in-ball neighbour.  Schreier balls are always
  of this kind, and the traversal is linear in the ball size.
* ``X`` codes are the lexicographically least edge list over all
  root-preserving relabelings, found by colour refinement plus
  individualization.  Only used for small balls where some slot is shared.

A ball is of ``D`` kind iff every isomorphic ball is, so codes of different
kinds never describe isomorphic balls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CapExceededError, PreconditionError
from .graph import GraphSequence, LabeledMultigraph, RootedBall, ball

EXHAUSTIVE_CAP = 12


@dataclass(frozen=True)
class BallCode:
    code: bytes
    radius: int
    vertex_count: int
    ball: RootedBall | None = field(default=None, compare=False, repr=False)

    @property
    def hex(self) -> str:
        return self.code.hex()

    @property
    def deterministic(self) -> bool:
        return self.code[:1] == b"D"


def ball_labels(g: LabeledMultigraph) -> list:
    """Labels occurring on edges; declared-but-unused labels do not count."""
    return sorted({s for _, _, s in g.edges})


def _slot_table(g: LabeledMultigraph):
    labels = ball_labels(g)
    out = {s: [[] for _ in range(g.vertex_count)] for s in labels}
    inn = {s: [[] for _ in range(g.vertex_count)] for s in labels}
    for u, v, s in g.edges:
        out[s][u].append(v)
        inn[s][v].append(u)
    return labels, out, inn


def _header(kind: bytes, labels, n: int, radius: int) -> bytes:
    return kind + ",".join(labels).encode() + b"|" + np.array([n, radius], dtype=np.int32).tobytes()


def deterministic_traversal(b: RootedBall):
    """Forced traversal of a ball, or None if some slot is shared.

    Returns ``(order, record, tree)``: discovery order of local vertices, the
    flat slot record, and per discovered vertex its ``(parent, label, exp)``.
    """
    g = b.graph
    labels, out, inn = _slot_table(g)
    index = {0: 0}
    order = [0]
    tree = {0: None}
    record = []
    i = 0
    while i < len(order):
        v = order[i]
        for s in labels:
            for exp, table in ((1, out), (-1, inn)):
                slot = table[s][v]
                if len(slot) > 1:
                    return None
                if not slot:
                    record.append(-1)
                    continue
                w = slot[0]
                if w not in index:
                    index[w] = len(order)
                    order.append(w)
                    tree[w] = (v, s, exp)
                record.append(index[w])
        i += 1
    if len(order) != g.vertex_count:
        raise PreconditionError("ball is not connected through its own edges")
    return order, record, tree


def ball_code(b: RootedBall, cap: int = EXHAUSTIVE_CAP) -> BallCode:
    labels = ball_labels(b.graph)
    n = b.graph.vertex_count
    trav = deterministic_traversal(b)
    if trav is not None:
        body = np.array(trav[1], dtype=np.int32).tobytes()
        return BallCode(_header(b"D", labels, n, b.radius) + body, b.radius, n, b)
    if n > cap:
        raise CapExceededError(f"non-deterministic ball with {n} vertices exceeds exhaustive cap {cap}")
    edges = _exhaustive_min_edges(b.graph, labels)
    body = np.array(edges, dtype=np.int32).tobytes()
    return BallCode(_header(b"X", labels, n, b.radius) + body, b.radius, n, b)


# ---------------------------------------------------------------- exhaustive path

def _refine(colors, nbrs):
    """Colour refinement; colour ids are ranks of signatures, so canonical."""
    while True:
        sigs = [(colors[v], tuple(sorted((lab, d, colors[w]) for lab, d, w in nbrs[v])))
                for v in range(len(colors))]
        ranks = {sig: i for i, sig in enumerate(sorted(set(sigs)))}
        new = [ranks[sig] for sig in sigs]
        if len(ranks) == len(set(colors)):
            return new
        colors = new


def _twin_key(v, nbrs):
    return tuple(sorted((lab, d, w if w != v else -1) for lab, d, w in nbrs[v]))


def _exhaustive_min_edges(g: LabeledMultigraph, labels):
    n = g.vertex_count
    lab_index = {s: i for i, s in enumerate(labels)}
    nbrs = [[] for _ in range(n)]
    for u, v, s in g.edges:
        nbrs[u].append((lab_index[s], 0, v))
        nbrs[v].append((lab_index[s], 1, u))
    dist = [0] * n
    # root is 0; distances inside the ball equal ambient distances
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for v in frontier:
            for _, _, w in nbrs[v]:
                if w not in seen:
                    seen.add(w)
                    dist[w] = dist[v] + 1
                    nxt.append(w)
        frontier = nxt
    best = None

    def leaf_code(colors):
        pos = colors  # discrete colouring: colour = position
        return sorted((pos[u], pos[v], lab_index[s]) for u, v, s in g.edges)

    def search(colors):
        nonlocal best
        colors = _refine(colors, nbrs)
        if len(set(colors)) == n:
            code = leaf_code(colors)
            if best is None or code < best:
                best = code
            return
        # first smallest non-singleton cell
        counts = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, k in counts.items() if k > 1)
        cell = [v for v in range(n) if colors[v] == target]
        tried = set()
        for v in cell:
            key = _twin_key(v, nbrs)
            if key in tried:
                continue
            tried.add(key)
            # individualize v: it gets the smallest colour in its cell
            new = [2 * c + (1 if c == target and u != v else 0) for u, c in enumerate(colors)]
            search(new)

    initial = [dist[v] * 2 + (0 if v == 0 else 1) for v in range(n)]
    search(initial)
    return [x for e in best for x in e]


# ---------------------------------------------------------------- matching

class _OraclePlan:
    """Precomputed traversal of a deterministic target ball for vector matching."""

    def __init__(self, target: BallCode):
        b = target.ball
        order, _, tree = deterministic_traversal(b)
        self.labels = ball_labels(b.graph)
        self.order = order
        self.radius = b.radius
        self.tree = [tree[v] for v in order]
        local = {v: i for i, v in enumerate(order)}
        self.tree = [None if t is None else (local[t[0]], t[1], t[2]) for t in self.tree]
        _, out, inn = _slot_table(b.graph)
        self.slots = []
        for v in order:
            for s in self.labels:
                for exp, table in ((1, out), (-1, inn)):
                    slot = table[s][v]
                    self.slots.append((local[v], s, exp, local[slot[0]] if slot else -1))


def _vector_match(g: LabeledMultigraph, plan: _OraclePlan, perms) -> np.ndarray:
    n = g.vertex_count
    inverse = {}
    for s, p in perms.items():
        inv = np.empty_like(p)
        inv[p] = np.arange(n)
        inverse[s] = inv

    def step(s, exp, pts):
        return perms[s][pts] if exp == 1 else inverse[s][pts]

    m = len(plan.order)
    img = np.empty((m, n), dtype=np.int64)
    img[0] = np.arange(n)
    for h in range(1, m):
        parent, s, exp = plan.tree[h]
        img[h] = step(s, exp, img[parent])
    ok = np.ones(n, dtype=bool)
    srt = np.sort(img, axis=0)
    ok &= ~np.any(srt[1:] == srt[:-1], axis=0)
    keys = np.sort((np.arange(n)[None, :] * n + img).ravel())
    base = np.arange(n) * n
    for h, s, exp, target in plan.slots:
        z = step(s, exp, img[h])
        if target >= 0:
            ok &= z == img[target]
        else:
            q = base + z
            pos = np.searchsorted(keys, q)
            pos = np.minimum(pos, len(keys) - 1)
            ok &= keys[pos] != q
    return ok


def match_mask(g: LabeledMultigraph, target: BallCode, r: int | None = None,
               cap: int = EXHAUSTIVE_CAP, vertices=None, fast: bool = True) -> np.ndarray:
    """Boolean array: does the r-ball at each vertex have code ``target``."""
    r = target.radius if r is None else r
    if r != target.radius:
        raise PreconditionError(f"target code has radius {target.radius}, asked for {r}")
    verts = range(g.vertex_count) if vertices is None else vertices
    if fast and vertices is None and target.deterministic and target.ball is not None and r >= 1:
        perms = g.permutations()
        if perms is not None and sorted(perms) == ball_labels(target.ball.graph):
            return _vector_match(g, _OraclePlan(target), perms)
    mask = np.zeros(g.vertex_count, dtype=bool)
    for x in verts:
        b = ball(g, x, r)
        if b.graph.vertex_count != target.vertex_count:
            continue
        if target.deterministic:
            trav = deterministic_traversal(b)
            if trav is None:
                continue
            mask[x] = ball_code(b).code == target.code
        else:
            try:
                mask[x] = ball_code(b, cap).code == target.code
            except CapExceededError:
                continue
    return mask


def oracle_code(oracle, r: int) -> BallCode:
    return ball_code(oracle.ball(r))


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class StatEstimate:
    value: Fraction
    hits: int
    count: int
    exact: bool


def local_statistic(g: LabeledMultigraph, target: BallCode, r: int | None = None,
                    mode: str = "exact", count: int = 1000, seed: int = 0) -> StatEstimate:
    r = target.radius if r is None else r
    if r < 0:
        raise PreconditionError("radius must be non-negative")
    if mode == "exact":
        hits = int(match_mask(g, target, r).sum())
        return StatEstimate(Fraction(hits, g.vertex_count), hits, g.vertex_count, True)
    if mode == "sample":
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, g.vertex_count, size=count)
        uniq, mult = np.unique(picks, return_counts=True)
        mask = match_mask(g, target, r, vertices=[int(v) for v in uniq])
        hits = int(mult[mask[uniq]].sum())
        return StatEstimate(Fraction(hits, count), hits, count, False)
    raise PreconditionError(f"unknown mode {mode!r}")


def bad_vertex_set(g: LabeledMultigraph, oracle, s: int) -> set:
    mask = match_mask(g, oracle_code(oracle, s), s)
    return set(np.flatnonzero(~mask).tolist())


def code_histogram(g: LabeledMultigraph, r: int, cap: int = EXHAUSTIVE_CAP) -> dict:
    """Map code -> list of vertices, in vertex order."""
    hist = {}
    for x in range(g.vertex_count):
        hist.setdefault(ball_code(ball(g, x, r), cap).code, []).append(x)
    return hist


@dataclass(frozen=True)
class StatRow:
    index: int
    radius: int
    matching: int
    total: int
    p: Fraction


@dataclass
class LocalStatReport:
    rows: list
    non_monotone: list = field(default_factory=list)

    def value(self, index: int, radius: int) -> Fraction:
        for row in self.rows:
            if row.index == index and row.radius == radius:
                return row.p
        raise KeyError((index, radius))

    def to_tsv(self) -> str:
        lines = ["#index\tradius\tmatching\ttotal\tp"]
        lines += [f"{r.index}\t{r.radius}\t{r.matching}\t{r.total}\t{r.p}" for r in self.rows]
        return "\n".join(lines) + "\n"


def bs_report(seq: GraphSequence, oracle, r_max: int) -> LocalStatReport:
    codes = [oracle_code(oracle, r) for r in range(r_max + 1)]
    rows = []
    bad = []
    for k, g in seq:
        prev = None
        for r, code in enumerate(codes):
            mask = match_mask(g, code, r)
            if prev is not None and np.any(mask & ~prev):
                bad.append((k, r))
            prev = mask
            hits = int(mask.sum())
            rows.append(StatRow(k, r, hits, g.vertex_count, Fraction(hits, g.vertex_count)))
    if bad:
        # a match at radius r+1 forces a match at radius r; anything else is a bug
        raise AssertionError(f"matching not monotone in radius at {bad}")
    return LocalStatReport(rows)
