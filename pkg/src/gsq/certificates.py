"""Partition and witness certificates with exact rational fields.

Certificates are plain text; every field can be recomputed from the graph
they reference, which is what ``verify`` does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ParseError, ViolationError
from .graph import LabeledMultigraph, all_pairs_distances, components, read_graph


def parse_rational(text) -> Fraction:
    """``p/q`` or a decimal literal, converted exactly."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    text = str(text).strip()
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"not a rational: {text!r}") from None


def simple_edges_among(g: LabeledMultigraph, active) -> list:
    act = set(active)
    return [(u, v) for u, v in g.simple_edges() if u in act and v in act]


def boundary_size(g: LabeledMultigraph, subset, active=None) -> int:
    """Edge boundary of ``subset`` inside the graph induced on ``active``."""
    sub = set(subset)
    act = None if active is None else set(active)
    count = 0
    for u, v in g.simple_edges():
        if act is not None and (u not in act or v not in act):
            continue
        if (u in sub) != (v in sub):
            count += 1
    return count


# ---------------------------------------------------------------- partitions

@dataclass
class PartitionCertificate:
    vertex_count: int
    blocks: list
    cut: list
    eps: Fraction
    K: int
    graph_name: str = ""
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_blocks(cls, g: LabeledMultigraph, blocks, meta=None):
        blocks = [sorted(int(v) for v in b) for b in blocks if len(b)]
        blocks.sort()
        owner = np.full(g.vertex_count, -1, dtype=np.int64)
        for i, b in enumerate(blocks):
            for v in b:
                if owner[v] != -1:
                    raise ViolationError(f"vertex {v} in two blocks")
                owner[v] = i
        if np.any(owner < 0):
            raise ViolationError(f"vertex {int(np.flatnonzero(owner < 0)[0])} in no block")
        cut = [(u, v) for u, v in g.simple_edges() if owner[u] != owner[v]]
        n = max(g.vertex_count, 1)
        return cls(g.vertex_count, blocks, cut, Fraction(len(cut), n),
                   max((len(b) for b in blocks), default=0), g.name, dict(meta or {}))

    def verify(self, g: LabeledMultigraph) -> None:
        fresh = PartitionCertificate.from_blocks(g, self.blocks)
        if sorted(fresh.cut) != sorted(self.cut):
            raise ViolationError("cut set differs from recomputation")
        if fresh.eps != self.eps or fresh.K != self.K:
            raise ViolationError(f"recomputed (eps, K) = ({fresh.eps}, {fresh.K}), "
                                 f"certificate says ({self.eps}, {self.K})")
        cutset = set(self.cut)
        kept = [e for e in g.simple_edges() if e not in cutset]
        rest = g.with_edges([(u, v, g.labels[0]) for u, v in kept]) if g.labels else g
        owner = {v: i for i, b in enumerate(self.blocks) for v in b}
        for comp in components(rest):
            if len({owner[v] for v in comp}) != 1 or len(comp) > self.K:
                raise ViolationError("a component of the cut graph crosses blocks or exceeds K")

    def to_text(self, graph_path: str = "") -> str:
        lines = ["certificate partition", f"graph {graph_path or self.graph_name}",
                 f"vertices {self.vertex_count}", f"eps {self.eps}", f"K {self.K}"]
        lines += [f"meta {k} {v}" for k, v in sorted(self.meta.items())]
        lines += ["block " + " ".join(map(str, b)) for b in self.blocks]
        lines += [f"cut {u} {v}" for u, v in self.cut]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- witnesses

@dataclass
class WitnessCertificate:
    """Rows ``x -> {y: numerator}`` over a common denominator.

    Rows exist exactly for the active vertices; the witness lives on the
    graph induced on them.
    """

    denominator: int
    rows: dict
    graph_name: str = ""

    @property
    def active(self) -> list:
        return sorted(self.rows)

    def vector(self, x: int) -> dict:
        return {y: Fraction(c, self.denominator) for y, c in self.rows[x].items()}

    def norms_exact(self) -> bool:
        return all(sum(r.values()) == self.denominator and all(c >= 0 for c in r.values())
                   for r in self.rows.values())

    def edge_variation(self, x: int, y: int) -> Fraction:
        rx, ry = self.rows[x], self.rows[y]
        keys = set(rx) | set(ry)
        return Fraction(sum(abs(rx.get(k, 0) - ry.get(k, 0)) for k in keys), self.denominator)

    def variations(self, g: LabeledMultigraph) -> dict:
        return {(u, v): self.edge_variation(u, v) for u, v in simple_edges_among(g, self.rows)}

    def measured_eps(self, g: LabeledMultigraph) -> Fraction:
        return max(self.variations(g).values(), default=Fraction(0))

    def support_radius(self, g: LabeledMultigraph):
        """Largest distance from x to its support, inside the active subgraph."""
        sub, old = g.induced(self.active)
        pos = {v: i for i, v in enumerate(old)}
        for r in self.rows.values():
            if any(y not in pos for y in r):
                return float("inf")
        dist = all_pairs_distances(sub)
        worst = 0
        for x, r in self.rows.items():
            d = dist[pos[x], [pos[y] for y in r]]
            if np.any(d < 0):
                return float("inf")
            worst = max(worst, int(d.max()))
        return worst

    def verify(self, g: LabeledMultigraph, eps=None, radius=None) -> None:
        if not self.norms_exact():
            raise ViolationError("some witness vector does not have norm exactly 1")
        if eps is not None and self.measured_eps(g) != eps:
            raise ViolationError(f"measured eps {self.measured_eps(g)} differs from {eps}")
        if radius is not None and self.support_radius(g) != radius:
            raise ViolationError(f"support radius {self.support_radius(g)} differs from {radius}")

    def to_text(self, g: LabeledMultigraph | None = None, graph_path: str = "") -> str:
        lines = ["certificate witness", f"graph {graph_path or self.graph_name}",
                 f"denominator {self.denominator}"]
        if g is not None:
            lines += [f"eps {self.measured_eps(g)}", f"support_radius {self.support_radius(g)}"]
        for x in self.active:
            row = self.rows[x]
            lines.append(f"row {x} " + " ".join(f"{y}:{row[y]}" for y in sorted(row)))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- text io

def parse_certificate(text: str) -> dict:
    """Parse any certificate into a dict with ``kind`` and raw fields."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][0] != "certificate":
        raise ParseError("expected 'certificate <kind>' header", 1)
    out = {"kind": lines[0][1], "lines": []}
    for parts in lines[1:]:
        key = parts[0]
        if key in ("block", "cut", "row", "move", "meta", "pair", "image"):
            out["lines"].append(parts)
        else:
            out[key] = " ".join(parts[1:])
    return out


def partition_from_fields(fields: dict) -> PartitionCertificate:
    blocks = [[int(v) for v in p[1:]] for p in fields["lines"] if p[0] == "block"]
    cut = [(int(p[1]), int(p[2])) for p in fields["lines"] if p[0] == "cut"]
    meta = {p[1]: " ".join(p[2:]) for p in fields["lines"] if p[0] == "meta"}
    return PartitionCertificate(int(fields["vertices"]), blocks, cut,
                                parse_rational(fields["eps"]), int(fields["K"]),
                                fields.get("graph", ""), meta)


def witness_from_fields(fields: dict) -> WitnessCertificate:
    rows = {}
    for p in fields["lines"]:
        if p[0] != "row":
            continue
        rows[int(p[1])] = {int(a): int(b) for a, b in (t.split(":") for t in p[2:])}
    return WitnessCertificate(int(fields["denominator"]), rows, fields.get("graph", ""))


def load_graph_for(fields: dict, cert_path) -> LabeledMultigraph:
    path = Path(fields["graph"])
    if not path.is_absolute():
        path = Path(cert_path).parent / path
    return read_graph(path)
