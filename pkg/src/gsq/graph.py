"""Labeled multigraphs, their simple metric view, and per-graph invariants.

Graphs are finite directed multigraphs whose edges carry generator labels.
Loops and parallel edges are kept; every metric notion (distances, balls,
simple girth, Cheeger constant, boundaries) uses the *simple view*, where
loops are dropped, parallel edges merged and directions forgotten.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CapExceededError,
    ConvergenceError,
    DegreeBoundError,
    DisconnectedError,
    ParseError,
    PreconditionError,
    VertexRangeError,
)

INF = math.inf
EDGE_MODES = ("simple", "multi", "multi_no_loops")

Edge = tuple  # (source, target, label)


class LabeledMultigraph:
    """Immutable labeled multigraph on vertices ``0..vertex_count-1``.

    ``degree_bound`` bounds the simple-view degree; it defaults to the actual
    maximum.  ``require_connected`` turns a disconnected simple view into an
    error; the measured connectivity is always available as ``connected``.
    ``meta`` holds free-form string tags (``family``, ``side``...) used by
    family-aware methods such as block partitions.
    """

    def __init__(
        self,
        vertex_count: int,
        edges: Iterable[Edge],
        labels: Sequence[str] | None = None,
        degree_bound: int | None = None,
        name: str = "graph",
        require_connected: bool = False,
        meta: dict | None = None,
    ):
        if vertex_count < 0:
            raise VertexRangeError(f"negative vertex count {vertex_count}")
        edges = tuple((int(u), int(v), str(s)) for u, v, s in edges)
        if labels is None:
            labels = sorted({s for _, _, s in edges})
        labels = tuple(labels)
        alphabet = set(labels)
        for u, v, s in edges:
            if not (0 <= u < vertex_count and 0 <= v < vertex_count):
                raise VertexRangeError(
                    f"edge ({u}, {v}, {s}) out of range for {vertex_count} vertices"
                )
            if s not in alphabet:
                raise ParseError(f"label {s!r} not in declared alphabet {labels}")
        self.vertex_count = vertex_count
        self.edges = edges
        self.labels = labels
        self.name = name
        self.meta = dict(meta or {})

        nbrs = [set() for _ in range(vertex_count)]
        for u, v, _ in edges:
            if u != v:
                nbrs[u].add(v)
                nbrs[v].add(u)
        self.neighbors = tuple(tuple(sorted(s)) for s in nbrs)
        max_deg = max((len(s) for s in self.neighbors), default=0)
        if degree_bound is None:
            degree_bound = max(max_deg, 1)
        if degree_bound < 1:
            raise DegreeBoundError("degree bound must be positive")
        if max_deg > degree_bound:
            worst = max(range(vertex_count), key=lambda x: len(self.neighbors[x]))
            raise DegreeBoundError(
                f"vertex {worst} has simple degree {max_deg} > bound {degree_bound}"
            )
        self.degree_bound = degree_bound
        self.connected = _is_connected(self.neighbors)
        if require_connected and not self.connected:
            raise DisconnectedError(f"graph {name!r} is not connected")

        self._slots = None
        self._perms = False
        self._simple_edges = None

    def __repr__(self):
        return (
            f"LabeledMultigraph({self.name!r}, |V|={self.vertex_count}, "
            f"|E|={len(self.edges)}, labels={self.labels})"
        )

    def __eq__(self, other):
        if not isinstance(other, LabeledMultigraph):
            return NotImplemented
        return (
            self.vertex_count == other.vertex_count
            and sorted(self.edges) == sorted(other.edges)
            and self.labels == other.labels
        )

    __hash__ = None

    @property
    def max_degree(self) -> int:
        return max((len(s) for s in self.neighbors), default=0)

    def simple_edges(self) -> list[tuple[int, int]]:
        """Sorted undirected loop-free edges ``(u, v)`` with ``u < v``."""
        if self._simple_edges is None:
            self._simple_edges = [
                (u, v) for u in range(self.vertex_count) for v in self.neighbors[u] if u < v
            ]
        return self._simple_edges

    def slots(self):
        """Per-label adjacency: ``(out, inn)`` where ``out[label][u]`` lists targets."""
        if self._slots is None:
            out = {s: [[] for _ in range(self.vertex_count)] for s in self.labels}
            inn = {s: [[] for _ in range(self.vertex_count)] for s in self.labels}
            for u, v, s in self.edges:
                out[s][u].append(v)
                inn[s][v].append(u)
            self._slots = (out, inn)
        return self._slots

    def permutations(self) -> dict[str, np.ndarray] | None:
        """Label -> image array when every label acts as a permutation, else None."""
        if self._perms is False:
            out, inn = self.slots()
            perms = {}
            for s in self.labels:
                if any(len(t) != 1 for t in out[s]) or any(len(t) != 1 for t in inn[s]):
                    perms = None
                    break
                perms[s] = np.array([t[0] for t in out[s]], dtype=np.int64)
            self._perms = perms
        return self._perms

    @property
    def label_regular(self) -> bool:
        return self.vertex_count > 0 and self.permutations() is not None

    def with_edges(self, edges, name=None, labels=None, degree_bound=None) -> "LabeledMultigraph":
        """Copy on the same vertex set with a different edge list."""
        return LabeledMultigraph(
            self.vertex_count,
            edges,
            labels=labels if labels is not None else self.labels,
            degree_bound=degree_bound,
            name=name or self.name,
            meta=self.meta,
        )

    def induced(self, vertices: Iterable[int], name=None):
        """Induced labeled subgraph; returns ``(graph, old_ids)`` with new id = position."""
        old = sorted(set(vertices))
        new = {x: i for i, x in enumerate(old)}
        edges = [(new[u], new[v], s) for u, v, s in self.edges if u in new and v in new]
        g = LabeledMultigraph(
            len(old), edges, labels=self.labels, degree_bound=self.degree_bound,
            name=name or f"{self.name}[induced]",
        )
        return g, old


def _is_connected(neighbors) -> bool:
    n = len(neighbors)
    if n <= 1:
        return True
    seen = bytearray(n)
    seen[0] = 1
    stack = [0]
    count = 1
    while stack:
        u = stack.pop()
        for w in neighbors[u]:
            if not seen[w]:
                seen[w] = 1
                count += 1
                stack.append(w)
    return count == n


def components(g: LabeledMultigraph, vertices=None) -> list[list[int]]:
    """Connected components of the simple view (optionally restricted), sorted."""
    allowed = None if vertices is None else set(vertices)
    pool = range(g.vertex_count) if allowed is None else sorted(allowed)
    seen = set()
    comps = []
    for x in pool:
        if x in seen:
            continue
        seen.add(x)
        comp = [x]
        stack = [x]
        while stack:
            u = stack.pop()
            for w in g.neighbors[u]:
                if w not in seen and (allowed is None or w in allowed):
                    seen.add(w)
                    comp.append(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


# ---------------------------------------------------------------- file format

def parse_graph(text: str, require_connected: bool | None = None) -> LabeledMultigraph:
    """Parse the ``graph ... / e u v label`` edge-list document."""
    header = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if header is None:
            if parts[0] != "graph" or len(parts) < 2:
                raise ParseError("expected 'graph <name> key=value ...' header", lineno)
            header = {"name": parts[1]}
            for item in parts[2:]:
                if "=" not in item:
                    raise ParseError(f"malformed header field {item!r}", lineno)
                key, value = item.split("=", 1)
                header[key] = value
            for key in ("vertices", "degree_bound", "labels"):
                if key not in header:
                    raise ParseError(f"header missing {key}=", lineno)
            continue
        if parts[0] != "e" or len(parts) != 4:
            raise ParseError(f"expected 'e <u> <v> <label>', got {line!r}", lineno)
        try:
            u, v = int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError(f"non-integer vertex id in {line!r}", lineno) from None
        n = int(header["vertices"])
        if not (0 <= u < n and 0 <= v < n):
            raise VertexRangeError(f"line {lineno}: vertex id out of range in {line!r}")
        edges.append((u, v, parts[3], lineno))
    if header is None:
        raise ParseError("empty graph document")
    try:
        n = int(header["vertices"])
        d = int(header["degree_bound"])
    except ValueError:
        raise ParseError("vertices/degree_bound must be integers") from None
    labels = tuple(s for s in header["labels"].split(",") if s)
    for _, _, s, lineno in edges:
        if s not in labels:
            raise ParseError(f"label {s!r} not declared in header", lineno)
    if require_connected is None:
        require_connected = header.get("connected", "0") == "1"
    meta = {k: v for k, v in header.items()
            if k not in ("name", "vertices", "degree_bound", "labels", "connected")}
    return LabeledMultigraph(
        n, [e[:3] for e in edges], labels=labels, degree_bound=d,
        name=header["name"], require_connected=require_connected, meta=meta,
    )


build_graph = parse_graph


def format_graph(g: LabeledMultigraph) -> str:
    extra = "".join(f" {k}={v}" for k, v in sorted(g.meta.items()))
    lines = [
        f"graph {g.name} vertices={g.vertex_count} degree_bound={g.degree_bound} "
        f"labels={','.join(g.labels)} connected={int(g.connected)}{extra}"
    ]
    lines.extend(f"e {u} {v} {s}" for u, v, s in g.edges)
    return "\n".join(lines) + "\n"


def read_graph(path) -> LabeledMultigraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def write_graph(g: LabeledMultigraph, path) -> None:
    Path(path).write_text(format_graph(g), encoding="utf-8")


# ---------------------------------------------------------------- metric view

def bfs_distances(g: LabeledMultigraph, source: int, limit: int | None = None,
                  allowed=None) -> dict[int, int]:
    """Distances from ``source`` in the simple view, optionally depth-limited."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if limit is not None and du >= limit:
            continue
        for w in g.neighbors[u]:
            if w not in dist and (allowed is None or w in allowed):
                dist[w] = du + 1
                queue.append(w)
    return dist


class MetricView:
    """Exact shortest-path distances on the simple view of a graph."""

    def __init__(self, g: LabeledMultigraph):
        self.graph = g
        self._rows = {}
        self._matrix = None

    def distances_from(self, x: int) -> dict[int, int]:
        if not 0 <= x < self.graph.vertex_count:
            raise VertexRangeError(f"vertex {x} out of range")
        row = self._rows.get(x)
        if row is None:
            row = bfs_distances(self.graph, x)
            self._rows[x] = row
        return row

    def distance(self, x: int, y: int):
        if self._matrix is not None:
            d = self._matrix[x, y]
            return INF if d < 0 else int(d)
        return self.distances_from(x).get(y, INF)

    def matrix(self) -> np.ndarray:
        """All-pairs distance matrix (int32, ``-1`` for disconnected pairs)."""
        if self._matrix is None:
            self._matrix = all_pairs_distances(self.graph)
        return self._matrix


def metric_view(g: LabeledMultigraph) -> MetricView:
    return MetricView(g)


def all_pairs_distances(g: LabeledMultigraph) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    n = g.vertex_count
    pairs = g.simple_edges()
    if not pairs:
        out = np.full((n, n), -1, dtype=np.int32)
        np.fill_diagonal(out, 0)
        return out
    rows = np.array([u for u, _ in pairs])
    cols = np.array([v for _, v in pairs])
    adj = csr_matrix((np.ones(len(pairs)), (rows, cols)), shape=(n, n))
    dist = shortest_path(adj, directed=False, unweighted=True)
    out = np.where(np.isinf(dist), -1, dist).astype(np.int32)
    return out


@dataclass(frozen=True)
class RootedBall:
    """Induced labeled subgraph on a metric ball; local vertex 0 is the root.

    ``vertices[i]`` is the ambient id of local vertex ``i`` (sorted by
    distance from the root, then by id).  ``elements`` is filled only for
    Cayley balls produced by a group oracle.
    """

    graph: LabeledMultigraph
    vertices: tuple
    radius: int
    elements: tuple | None = field(default=None, compare=False)

    @property
    def root(self) -> int:
        return 0


def ball(g: LabeledMultigraph, x: int, r: int) -> RootedBall:
    if r < 0:
        raise PreconditionError("radius must be non-negative")
    if not 0 <= x < g.vertex_count:
        raise VertexRangeError(f"vertex {x} out of range")
    dist = bfs_distances(g, x, limit=r)
    order = sorted(dist, key=lambda y: (dist[y], y))
    local = {y: i for i, y in enumerate(order)}
    edges = [(local[u], local[v], s) for u, v, s in g.edges if u in local and v in local]
    sub = LabeledMultigraph(
        len(order), edges, labels=g.labels, degree_bound=g.degree_bound,
        name=f"{g.name}.B({x},{r})",
    )
    return RootedBall(sub, tuple(order), r)


# ---------------------------------------------------------------- invariants

def edge_count(g: LabeledMultigraph, mode: str = "multi") -> int:
    if mode == "simple":
        return len(g.simple_edges())
    if mode == "multi":
        return len(g.edges)
    if mode == "multi_no_loops":
        return sum(1 for u, v, _ in g.edges if u != v)
    raise ValueError(f"unknown edge mode {mode!r}; expected one of {EDGE_MODES}")


def cycle_space_dim(g: LabeledMultigraph) -> int:
    return len(g.simple_edges()) - g.vertex_count + len(components(g))


def girth(g: LabeledMultigraph, mode: str = "simple"):
    """Shortest nontrivial cycle length, or ``math.inf`` on forests.

    ``multi`` mode counts a loop as a 1-cycle and any two edges joining the
    same pair of vertices as a 2-cycle before falling back to the simple view.
    """
    if mode == "multi":
        if any(u == v for u, v, _ in g.edges):
            return 1
        seen = set()
        for u, v, _ in g.edges:
            key = (min(u, v), max(u, v))
            if key in seen:
                return 2
            seen.add(key)
    elif mode != "simple":
        raise ValueError(f"unknown girth mode {mode!r}")
    best = INF
    nbrs = g.neighbors
    for root in range(g.vertex_count):
        dist = {root: 0}
        parent = {root: -1}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            du = dist[u]
            if 2 * du >= best:
                break
            for w in nbrs[u]:
                if w not in dist:
                    dist[w] = du + 1
                    parent[w] = u
                    queue.append(w)
                elif parent[u] != w:
                    best = min(best, du + dist[w] + 1)
    return best


# ---------------------------------------------------------------- sequences

@dataclass
class GraphSequence:
    """Finite truncation ``G_k`` of a graph sequence."""

    graphs: list
    indices: list = None
    family: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.indices is None:
            self.indices = list(range(len(self.graphs)))
        if len(self.indices) != len(self.graphs):
            raise PreconditionError("indices and graphs differ in length")
        sizes = [g.vertex_count for g in self.graphs]
        if any(b < a for a, b in zip(sizes, sizes[1:])):
            raise PreconditionError(f"vertex counts must be non-decreasing, got {sizes}")

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(zip(self.indices, self.graphs))


def read_manifest(path) -> GraphSequence:
    """Load ``<k> <path>`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    graphs, indices = [], []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected '<k> <path>', got {line!r}", lineno)
        try:
            k = int(parts[0])
        except ValueError:
            raise ParseError(f"non-integer index {parts[0]!r}", lineno) from None
        indices.append(k)
        graphs.append(read_graph(path.parent / parts[1]))
    family = graphs[0].meta.get("family", "custom") if graphs else "custom"
    return GraphSequence(graphs, indices, family)


def write_sequence(seq: GraphSequence, directory) -> Path:
    """Write one graph file per index plus ``manifest.tsv``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, g in seq:
        fname = f"{g.name}.g"
        write_graph(g, directory / fname)
        lines.append(f"{k} {fname}")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


@dataclass
class RatioRow:
    index: int
    vertices: int
    edges: int
    ratio: Fraction
    tail_min: Fraction


@dataclass
class RatioTable:
    rows: list
    mode: str

    @property
    def liminf_proxy(self) -> Fraction:
        """Minimum ratio over the last ceil(len/2) indices."""
        tail = self.rows[len(self.rows) // 2:]
        return min(r.ratio for r in tail)

    def to_tsv(self) -> str:
        out = ["#index\tvertices\tedges\tratio\ttail_min"]
        for r in self.rows:
            out.append(f"{r.index}\t{r.vertices}\t{r.edges}\t{r.ratio}\t{r.tail_min}")
        out.append(f"#liminf_proxy\t{self.liminf_proxy}\tmode={self.mode}")
        return "\n".join(out) + "\n"


def edge_number_table(seq: GraphSequence, mode: str = "multi") -> RatioTable:
    if len(seq) == 0:
        raise PreconditionError("edge_number_table needs a non-empty sequence")
    counts = [(k, g.vertex_count, edge_count(g, mode)) for k, g in seq]
    ratios = [Fraction(e, v) for _, v, e in counts]
    rows = []
    for i, (k, v, e) in enumerate(counts):
        rows.append(RatioRow(k, v, e, ratios[i], min(ratios[i:])))
    return RatioTable(rows, mode)


# ---------------------------------------------------------------- Cheeger

DEFAULT_CHEEGER_CAP = 20
SPECTRAL_TOL = 1e-9
SPECTRAL_MAX_ITER = 200_000


def edge_boundary(g: LabeledMultigraph, subset) -> int:
    """Number of simple-view edges with exactly one endpoint in ``subset``."""
    inside = set(subset)
    return sum(1 for u in inside for w in g.neighbors[u] if w not in inside)


def cheeger(g: LabeledMultigraph, method: str = "exact", cap: int = DEFAULT_CHEEGER_CAP):
    """Cheeger constant with edge boundary.

    ``exact`` enumerates every subset with at most half the vertices and
    returns a Fraction; ``spectral_lower`` returns ``lambda_2 / 2`` of the
    normalized Laplacian, a float lower bound.
    """
    n = g.vertex_count
    if n < 2:
        raise PreconditionError("Cheeger constant needs at least two vertices")
    if not g.connected:
        raise DisconnectedError(f"graph {g.name!r} is disconnected")
    if method == "exact":
        if n > cap:
            raise CapExceededError(f"exact Cheeger limited to {cap} vertices, got {n}")
        return _cheeger_exact(g)
    if method == "spectral_lower":
        return normalized_laplacian_lambda2(g) / 2
    raise ValueError(f"unknown Cheeger method {method!r}")


def _cheeger_exact(g):
    n = g.vertex_count
    masks = np.arange(1, 1 << n, dtype=np.uint32)
    sizes = np.zeros(len(masks), dtype=np.int32)
    for i in range(n):
        sizes += ((masks >> i) & 1).astype(np.int32)
    keep = sizes <= n // 2
    masks, sizes = masks[keep], sizes[keep]
    bnd = np.zeros(len(masks), dtype=np.int32)
    for u, v in g.simple_edges():
        bnd += (((masks >> u) ^ (masks >> v)) & 1).astype(np.int32)
    best = None
    for s in range(1, n // 2 + 1):
        sel = bnd[sizes == s]
        cand = Fraction(int(sel.min()), s)
        if best is None or cand < best:
            best = cand
    return best


def normalized_laplacian_lambda2(g: LabeledMultigraph, tol: float = SPECTRAL_TOL,
                                 max_iter: int = SPECTRAL_MAX_ITER) -> float:
    """Second-smallest eigenvalue of ``I - D^-1/2 A D^-1/2`` (simple view).

    Deterministic power iteration on ``2I - N`` with the known top eigenvector
    ``D^{1/2} 1`` projected out; stops once successive Rayleigh quotients
    differ by less than ``tol``.
    """
    from scipy.sparse import csr_matrix

    n = g.vertex_count
    pairs = g.simple_edges()
    deg = np.array([len(nb) for nb in g.neighbors], dtype=float)
    if np.any(deg == 0):
        raise DisconnectedError("isolated vertex in spectral computation")
    rows = np.array([u for u, v in pairs] + [v for u, v in pairs])
    cols = np.array([v for u, v in pairs] + [u for u, v in pairs])
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    norm_adj = csr_matrix((vals, (rows, cols)), shape=(n, n))
    top = np.sqrt(deg)
    top /= np.linalg.norm(top)
    x = np.sin(1.0 + 0.7548776662466927 * np.arange(n))
    x -= top * (top @ x)
    x /= np.linalg.norm(x)
    prev = None
    for _ in range(max_iter):
        # (2I - N) x = x + D^-1/2 A D^-1/2 x
        y = x + norm_adj @ x
        y -= top * (top @ y)
        rq = float(x @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            raise ConvergenceError("power iteration collapsed to zero")
        x = y / nrm
        if prev is not None and abs(rq - prev) < tol:
            return max(0.0, 2.0 - rq)
        prev = rq
    raise ConvergenceError(f"spectral iteration did not converge in {max_iter} steps")
