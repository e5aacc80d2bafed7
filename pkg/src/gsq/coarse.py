"""Distortion checks for vertex maps and the coarse rewiring constructions.

Constants are measured, never assumed: ``verify_map`` returns the least
integer constant a map satisfies, and each construction compares its
measured constant against the bound its correctness argument gives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificates import PartitionCertificate
from .errors import (CapExceededError, DisconnectedError, ParseError,
                     PreconditionError, ViolationError)
from .graph import LabeledMultigraph, all_pairs_distances, bfs_distances

EXHAUSTIVE_LIMIT = 512
SAMPLE_PAIRS = 10_000
SAMPLE_SOURCES = 100


@dataclass
class VertexMap:
    domain: LabeledMultigraph
    codomain: LabeledMultigraph
    image: tuple

    def __post_init__(self):
        self.image = tuple(int(v) for v in self.image)
        if len(self.image) != self.domain.vertex_count:
            raise PreconditionError("image array length differs from domain size")
        if any(v < 0 or v >= self.codomain.vertex_count for v in self.image):
            raise PreconditionError("image outside codomain")

    @classmethod
    def identity(cls, g, h=None):
        return cls(g, h if h is not None else g, tuple(range(g.vertex_count)))

    @property
    def injective(self) -> bool:
        return len(set(self.image)) == len(self.image)

    def to_text(self) -> str:
        return f"map {len(self.image)}\n" + "".join(f"{v}\n" for v in self.image)


def parse_map(text: str) -> list:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("map "):
        raise ParseError("expected 'map <n>' header", 1)
    n = int(lines[0].split()[1])
    try:
        image = [int(v) for v in lines[1:]]
    except ValueError:
        raise ParseError("non-integer image id") from None
    if len(image) != n:
        raise ParseError(f"header says {n} images, found {len(image)}")
    return image


def read_map(path, domain, codomain) -> VertexMap:
    return VertexMap(domain, codomain, parse_map(Path(path).read_text(encoding="utf-8")))


@dataclass
class DistortionCertificate:
    kind: str
    constant: int
    worst_pairs: list
    density: tuple | None
    exhaustive: bool
    pairs_checked: int
    meta: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["certificate distortion", f"distortion_kind {self.kind}", f"constant {self.constant}",
                 f"exhaustive {int(self.exhaustive)}", f"pairs_checked {self.pairs_checked}"]
        if self.density is not None:
            lines.append(f"density {self.density[0]} {self.density[1]}")
        lines += [f"pair {x} {y} {d} {dd}" for x, y, d, dd in self.worst_pairs]
        lines += [f"meta {k} {v}" for k, v in sorted(self.meta.items())]
        return "\n".join(lines) + "\n"


def _pair_distances(f: VertexMap, exhaustive_limit, samples, seed):
    n = f.domain.vertex_count
    img = np.array(f.image, dtype=np.int64)
    if n <= exhaustive_limit and f.codomain.vertex_count <= exhaustive_limit:
        dd = all_pairs_distances(f.domain)
        dc = all_pairs_distances(f.codomain)
        xs, ys = np.triu_indices(n, 1)
        return xs, ys, dd[xs, ys].astype(np.int64), dc[img[xs], img[ys]].astype(np.int64), True, dc
    rng = np.random.default_rng(seed)
    sources = np.unique(rng.integers(0, n, size=min(SAMPLE_SOURCES, n)))
    per = max(1, samples // len(sources))
    xs, ys, d1, d2 = [], [], [], []
    for x in sources:
        x = int(x)
        a = bfs_distances(f.domain, x)
        b = bfs_distances(f.codomain, int(img[x]))
        for y in rng.integers(0, n, size=per):
            y = int(y)
            if y == x:
                continue
            xs.append(x)
            ys.append(y)
            d1.append(a.get(y, -1))
            d2.append(b.get(int(img[y]), -1))
    return (np.array(xs), np.array(ys), np.array(d1, dtype=np.int64),
            np.array(d2, dtype=np.int64), False, None)


def _density(f: VertexMap, dc):
    """Farthest codomain vertex from the image: (vertex, distance)."""
    img = sorted(set(f.image))
    if dc is not None:
        d = dc[img].min(axis=0)
    else:
        # multi-source BFS
        h = f.codomain
        d = np.full(h.vertex_count, -1, dtype=np.int64)
        frontier = list(img)
        d[frontier] = 0
        while frontier:
            nxt = []
            for v in frontier:
                for w in h.neighbors[v]:
                    if d[w] < 0:
                        d[w] = d[v] + 1
                        nxt.append(w)
            frontier = nxt
    y = int(np.argmax(d))
    return y, int(d[y])


def _min_lower_constant(d, dd):
    """Least A >= 1 with d/A - A <= dd, i.e. A^2 + dd*A >= d."""
    a = np.maximum(1, np.ceil((-dd + np.sqrt(dd * dd + 4.0 * d)) / 2.0).astype(np.int64))
    # correct floating error in both directions
    a = np.where(a * a + dd * a >= d, a, a + 1)
    a = np.where((a > 1) & ((a - 1) ** 2 + dd * (a - 1) >= d), a - 1, a)
    return a


def verify_map(f: VertexMap, kind: str = "quasi_isometry", bound: int | None = None,
               exhaustive_limit: int = EXHAUSTIVE_LIMIT, samples: int = SAMPLE_PAIRS,
               seed: int = 0) -> DistortionCertificate:
    """Least constant of ``f`` as an (A, A)-quasi-isometry or L-bi-Lipschitz map.

    Raises ``ViolationError`` with the offending pair when the constant
    exceeds ``bound`` or no finite constant exists.
    """
    for g in (f.domain, f.codomain):
        if not g.connected:
            raise DisconnectedError(f"graph {g.name} is not connected")
    xs, ys, d, dd, exhaustive, dc = _pair_distances(f, exhaustive_limit, samples, seed)
    if kind == "quasi_isometry":
        upper = np.ceil(dd / (d + 1.0)).astype(np.int64) if len(d) else np.zeros(0, np.int64)
        lower = _min_lower_constant(d, dd) if len(d) else np.zeros(0, np.int64)
        need = np.maximum(upper, lower)
        density = _density(f, dc)
        const = max(1, int(need.max()) if len(need) else 1, density[1])
    elif kind == "bilipschitz":
        if len(d) and np.any(dd == 0):
            i = int(np.flatnonzero(dd == 0)[0])
            raise ViolationError(f"pair ({xs[i]}, {ys[i]}) collapses to one image",
                                 (int(xs[i]), int(ys[i]), int(d[i]), 0))
        need = np.maximum(np.ceil(dd / d), np.ceil(d / dd)).astype(np.int64) if len(d) else np.zeros(0, np.int64)
        density = None
        const = max(1, int(need.max()) if len(need) else 1)
    else:
        raise PreconditionError(f"unknown map kind {kind!r}")
    worst = []
    if len(need):
        for i in np.flatnonzero(need == need.max())[:5]:
            worst.append((int(xs[i]), int(ys[i]), int(d[i]), int(dd[i])))
    cert = DistortionCertificate(kind, const, worst, density, exhaustive, int(len(d)))
    if bound is not None and const > bound:
        witness = worst[0] if worst and need.max() > bound else ("density",) + tuple(density or ())
        raise ViolationError(f"{kind} constant {const} exceeds bound {bound}", witness)
    return cert


# ---------------------------------------------------------------- terminals

def strip_terminals(g: LabeledMultigraph):
    """Remove simple-degree-1 vertices once.

    Returns ``(core, terminals, kept)`` where terminals lists
    ``(terminal, base)`` in old ids and ``kept[i]`` is the old id of core
    vertex i.
    """
    deg = [len(nb) for nb in g.neighbors]
    terminal = {v for v in range(g.vertex_count) if deg[v] == 1}
    kept = [v for v in range(g.vertex_count) if v not in terminal]
    if not kept:
        raise PreconditionError("stripping terminals leaves the empty graph")
    pairs = [(y, g.neighbors[y][0]) for y in sorted(terminal)]
    if any(b in terminal for _, b in pairs):
        raise PreconditionError("a terminal is attached to another terminal (isolated edge)")
    core, old = g.induced(kept, name=f"{g.name}_core")
    return core, pairs, list(old)


@dataclass
class RewireResult:
    graph: LabeledMultigraph
    moves: list
    phases: dict
    bound: int
    certificate: DistortionCertificate
    reach: int


class _EdgeBag:
    """Mutable labeled edge multiset with a move log."""

    def __init__(self, g: LabeledMultigraph):
        self.g = g
        self.edges = list(g.edges)
        self.moves = []

    def adjacent(self, u):
        out = set()
        for a, b, _ in self.edges:
            if a == u:
                out.add(b)
            if b == u:
                out.add(a)
        return out

    def delete_pair(self, u, v):
        keep = []
        for e in self.edges:
            if {e[0], e[1]} == {u, v} and (e[0] != e[1] or u == v):
                self.moves.append(("del",) + tuple(e))
            else:
                keep.append(e)
        self.edges = keep

    def add(self, u, v, label):
        self.edges.append((u, v, label))
        self.moves.append(("add", u, v, label))

    def graph(self, name):
        labels = tuple(dict.fromkeys(list(self.g.labels) + [e[2] for e in self.edges]))
        return LabeledMultigraph(self.g.vertex_count, self.edges, labels=labels,
                                 degree_bound=max(1, self.g.vertex_count), name=name)


def replay_moves(g: LabeledMultigraph, moves, name=None) -> LabeledMultigraph:
    """Apply ``del``/``add`` moves in order; deletions remove the first exact match."""
    edges = list(g.edges)
    labels = list(g.labels)
    for kind, u, v, label in moves:
        if kind == "del":
            edges.remove((u, v, label))
        elif kind == "add":
            edges.append((u, v, label))
            if label not in labels:
                labels.append(label)
        else:
            raise ParseError(f"unknown move {kind!r}")
    return LabeledMultigraph(g.vertex_count, edges, labels=tuple(labels),
                             degree_bound=max(1, g.vertex_count), name=name or g.name)


def normalize_terminal_edges(h: LabeledMultigraph, terminals, label: str = "rw",
                             rounds: int | None = None) -> RewireResult:
    """Rewire ``h`` so the only edges at terminals are (terminal, base).

    ``terminals`` is a list of ``(terminal, base)`` pairs from a reference
    graph on the same vertex set.  Moves: terminal-terminal edges re-hung on
    an internal neighbour (repeated), surplus internal neighbours of a
    terminal joined to the kept one, and a lone non-base neighbour replaced
    by the base.  Loops at terminals are dropped.
    """
    if not h.connected:
        raise DisconnectedError("input graph is not connected")
    base = dict(terminals)
    term = set(base)
    reach = max([1] + [bfs_distances(h, y).get(b, math.inf) for y, b in base.items()])
    if reach == math.inf:
        raise DisconnectedError("a terminal cannot reach its base")
    budget = reach if rounds is None else rounds
    bag = _EdgeBag(h)
    phases = {"loops": 0, "type1_rounds": 0, "type3a": 0, "type3b": 0}

    for y in sorted(term):
        if any(a == b == y for a, b, _ in bag.edges):
            bag.delete_pair(y, y)
            phases["loops"] += 1

    while True:
        tt = sorted({tuple(sorted((a, b))) for a, b, _ in bag.edges
                     if a != b and a in term and b in term})
        if not tt:
            break
        if phases["type1_rounds"] >= budget:
            raise CapExceededError(f"terminal-terminal edges remain after {budget} rounds")
        phases["type1_rounds"] += 1
        progressed = False
        for y1, y2 in tt:
            nb1 = sorted(bag.adjacent(y1) - term)
            nb2 = sorted(bag.adjacent(y2) - term)
            if nb1:
                x, moved = nb1[0], y2
            elif nb2:
                x, moved = nb2[0], y1
            else:
                continue
            bag.delete_pair(y1, y2)
            if moved not in bag.adjacent(x):
                bag.add(x, moved, label)
            progressed = True
        if not progressed:
            raise CapExceededError("terminal cluster without internal neighbour")

    for y in sorted(term):
        nbs = sorted(bag.adjacent(y) - {y})
        if len(nbs) > 1:
            keep = base[y] if base[y] in nbs else nbs[0]
            for x2 in nbs:
                if x2 == keep:
                    continue
                bag.delete_pair(x2, y)
                if x2 not in bag.adjacent(keep):
                    bag.add(x2, keep, label)
                phases["type3a"] += 1

    for y in sorted(term):
        nbs = sorted(bag.adjacent(y) - {y})
        if nbs != [base[y]]:
            for x2 in nbs:
                bag.delete_pair(x2, y)
            bag.add(base[y], y, label)
            phases["type3b"] += 1

    out = replay_moves(h, bag.moves, name=f"{h.name}_normalized")
    if not out.connected:
        raise AssertionError("rewiring disconnected the graph")
    for a, b, _ in out.edges:
        for y, x in ((a, b), (b, a)):
            if y in term and x != base[y]:
                raise AssertionError(f"edge ({a},{b}) still touches terminal {y} off its base")
    bound = 1
    if phases["type1_rounds"] or phases["loops"]:
        bound *= 2 * reach
    if phases["type3a"]:
        bound *= 2
    if phases["type3b"]:
        bound *= reach
    cert = verify_map(VertexMap.identity(h, out), "bilipschitz", bound=bound)
    return RewireResult(out, bag.moves, phases, bound, cert, reach)


# ---------------------------------------------------------------- injectivize / pushforward

@dataclass
class InjectivizeResult:
    graph: LabeledMultigraph
    map: VertexMap
    added: list
    fiber_bound: int
    constant: int


def injectivize(f: VertexMap, label: str = "pend") -> InjectivizeResult:
    """Hang ``|fiber| - 1`` pendants on each image point; map the fiber onto them."""
    cert = verify_map(f, "quasi_isometry")
    a = cert.constant
    ball_sizes = [len(bfs_distances(f.domain, x, limit=a * a)) for x in range(f.domain.vertex_count)]
    fiber_bound = max(ball_sizes)
    fibers = {}
    for x, y in enumerate(f.image):
        fibers.setdefault(y, []).append(x)
    h = f.codomain
    n = h.vertex_count
    edges = list(h.edges)
    image = list(f.image)
    added = []
    for y in sorted(fibers):
        fiber = fibers[y]
        if len(fiber) > fiber_bound:
            raise ViolationError(f"fiber of {y} has {len(fiber)} points, bound {fiber_bound}")
        for x in fiber[1:]:
            new = n + len(added)
            added.append((new, y))
            edges.append((y, new, label))
            image[x] = new
    labels = tuple(h.labels) + ((label,) if added and label not in h.labels else ())
    g2 = LabeledMultigraph(n + len(added), edges, labels=labels,
                           degree_bound=max(1, (h.degree_bound or 1) + fiber_bound),
                           name=f"{h.name}_inj")
    return InjectivizeResult(g2, VertexMap(f.domain, g2, image), added, fiber_bound, a)


@dataclass
class PushforwardResult:
    graph: LabeledMultigraph
    R: int
    A: int
    formula_bound: int
    measured: int
    certificate: DistortionCertificate


def nearest_image(h: LabeledMultigraph, image_set) -> dict:
    """Non-image vertex -> (nearest image point, distance); ties to smallest id."""
    out = {}
    imgs = sorted(image_set)
    dist = {}
    owner = {}
    frontier = list(imgs)
    for v in imgs:
        dist[v] = 0
        owner[v] = v
    while frontier:
        nxt = {}
        for v in frontier:
            for w in h.neighbors[v]:
                if w in dist:
                    continue
                if w not in nxt or owner[v] < nxt[w]:
                    nxt[w] = owner[v]
        for w, o in nxt.items():
            dist[w] = dist[frontier[0]] + 1
            owner[w] = o
        frontier = sorted(nxt)
    for v in range(h.vertex_count):
        if v not in image_set:
            out[v] = (owner[v], dist[v])
    return out


def pushforward_graph(g: LabeledMultigraph, f: VertexMap, label: str = "hang") -> PushforwardResult:
    """Carry ``g``'s edges through injective ``f`` and hang non-image points on the image."""
    if not f.injective:
        raise PreconditionError("pushforward needs an injective map")
    h = f.codomain
    if not h.connected:
        raise DisconnectedError("codomain is not connected")
    image_set = set(f.image)
    edges = [(f.image[u], f.image[v], s) for u, v, s in g.edges]
    hang = nearest_image(h, image_set)
    for v in sorted(hang):
        edges.append((hang[v][0], v, label))
    R = max([0] + [d for _, d in hang.values()])
    labels = tuple(dict.fromkeys(list(g.labels) + ([label] if hang else [])))
    h2 = LabeledMultigraph(h.vertex_count, edges, labels=labels,
                           degree_bound=max(1, h.vertex_count), name=f"{h.name}_push")
    a = verify_map(f, "quasi_isometry").constant
    bound = max(a * (2 * R + 1) + a * a + 2, a * (R + 1) + a * a + 1, a + a * a)
    cert = verify_map(VertexMap.identity(h, h2), "bilipschitz", bound=bound)
    return PushforwardResult(h2, R, a, bound, cert.constant, cert)


# ---------------------------------------------------------------- partition transfer

@dataclass
class TransferResult:
    partition: PartitionCertificate
    L: int
    degree: int
    bound: int


def transfer_partition(p: PartitionCertificate, g: LabeledMultigraph, g2: LabeledMultigraph,
                       L: int | None = None) -> TransferResult:
    """Reuse a vertex partition of ``g`` on a bi-Lipschitz equivalent ``g2``."""
    if g.vertex_count != g2.vertex_count:
        raise PreconditionError("graphs have different vertex sets")
    p.verify(g)
    measured = verify_map(VertexMap.identity(g, g2), "bilipschitz", bound=L).constant
    L = measured if L is None else L
    d = max(g.max_degree, g2.max_degree)
    bound = len(p.cut) * sum(d ** i for i in range(1, L + 1)) ** 2
    q = PartitionCertificate.from_blocks(g2, p.blocks, meta=p.meta)
    if len(q.cut) > bound:
        raise ViolationError(f"transferred cut {len(q.cut)} exceeds bound {bound}")
    return TransferResult(q, L, d, bound)
