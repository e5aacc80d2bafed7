"""Cayley and Schreier graph construction from permutation actions.

Everything is built from right actions of a finitely generated group on a
finite set: ``x . s`` is ``perms[s][x]`` and words act letter by letter from
the left.  Subgroups enter as coset actions, intersections as product
actions, and the generators of a finite-index subgroup of a free group are
produced by Reidemeister-Schreier rewriting of the coset table.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy

from .errors import CapExceededError, ParseError, PreconditionError
from .graph import GraphSequence, LabeledMultigraph, RootedBall

# A word is a tuple of (label, exponent) letters with exponent +1 or -1.
Word = tuple

DEFAULT_BALL_CAP = 200_000
RNG_NAME = "numpy.random.default_rng(PCG64)"


def default_labels(count: int) -> tuple:
    return tuple("abcdefghijklmnopqrstuvwxyz"[i] for i in range(count))


def free_reduce(word) -> Word:
    out = []
    for letter in word:
        if out and out[-1][0] == letter[0] and out[-1][1] == -letter[1]:
            out.pop()
        else:
            out.append(letter)
    return tuple(out)


def invert(word) -> Word:
    return tuple((s, -e) for s, e in reversed(word))


def format_word(word) -> str:
    if not word:
        return "e"
    return ".".join(s if e == 1 else f"{s}^-1" for s, e in word)


def parse_word(text: str) -> Word:
    text = text.strip()
    if text in ("", "e"):
        return ()
    letters = []
    for part in text.split("."):
        if part.endswith("^-1"):
            letters.append((part[:-3], -1))
        else:
            letters.append((part, 1))
    return free_reduce(letters)


# ---------------------------------------------------------------- actions

@dataclass(eq=False)
class PermAction:
    """Right action of the free group on ``S`` on ``{0..degree-1}``."""

    degree: int
    perms: dict

    def __post_init__(self):
        fixed = {}
        for s, img in self.perms.items():
            img = tuple(int(v) for v in img)
            if len(img) != self.degree or sorted(img) != list(range(self.degree)):
                raise PreconditionError(f"generator {s!r} is not a bijection of {self.degree} points")
            fixed[str(s)] = img
        self.perms = fixed
        self._arrays = {s: np.array(img, dtype=np.int64) for s, img in fixed.items()}
        self._inverse = {}
        for s, arr in self._arrays.items():
            inv = np.empty_like(arr)
            inv[arr] = np.arange(self.degree)
            self._inverse[s] = inv

    def __eq__(self, other):
        return (isinstance(other, PermAction) and self.degree == other.degree
                and self.perms == other.perms)

    @property
    def labels(self) -> tuple:
        return tuple(self.perms)

    def array(self, label: str, exponent: int = 1) -> np.ndarray:
        return self._arrays[label] if exponent == 1 else self._inverse[label]

    def act(self, point: int, word) -> int:
        for s, e in word:
            point = int(self.array(s, e)[point])
        return point

    def act_all(self, word, points=None) -> np.ndarray:
        pts = np.arange(self.degree) if points is None else np.asarray(points, dtype=np.int64)
        for s, e in word:
            pts = self.array(s, e)[pts]
        return pts

    def orbit(self, point: int = 0) -> list:
        seen = {point}
        queue = deque([point])
        while queue:
            x = queue.popleft()
            for s in self.labels:
                for e in (1, -1):
                    y = int(self.array(s, e)[x])
                    if y not in seen:
                        seen.add(y)
                        queue.append(y)
        return sorted(seen)

    @property
    def transitive(self) -> bool:
        return self.degree > 0 and len(self.orbit(0)) == self.degree


def parse_action(text: str) -> PermAction:
    """Parse ``action degree=<n> labels=<...>`` followed by ``<label> <images...>``."""
    header = None
    perms = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if header is None:
            if parts[0] != "action":
                raise ParseError("expected 'action degree=<n> labels=<...>' header", lineno)
            header = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
            if "degree" not in header or "labels" not in header:
                raise ParseError("action header needs degree= and labels=", lineno)
            continue
        label = parts[0]
        if label not in header["labels"].split(","):
            raise ParseError(f"undeclared label {label!r}", lineno)
        try:
            perms[label] = [int(v) for v in parts[1:]]
        except ValueError:
            raise ParseError("non-integer image", lineno) from None
    if header is None:
        raise ParseError("empty action document")
    labels = [s for s in header["labels"].split(",") if s]
    missing = [s for s in labels if s not in perms]
    if missing:
        raise ParseError(f"no permutation line for labels {missing}")
    return PermAction(int(header["degree"]), {s: perms[s] for s in labels})


def format_action(action: PermAction) -> str:
    lines = [f"action degree={action.degree} labels={','.join(action.labels)}"]
    lines += [f"{s} " + " ".join(map(str, img)) for s, img in action.perms.items()]
    return "\n".join(lines) + "\n"


def read_action(path) -> PermAction:
    return parse_action(Path(path).read_text(encoding="utf-8"))


def write_action(action: PermAction, path) -> None:
    Path(path).write_text(format_action(action), encoding="utf-8")


def schreier_graph(action: PermAction, labels=None, name="schreier", meta=None) -> LabeledMultigraph:
    """One edge ``x -> x.s`` per point and generator; loops are kept."""
    if action.degree < 1:
        raise PreconditionError("action degree must be at least 1")
    labels = tuple(labels) if labels is not None else action.labels
    edges = [(x, action.perms[s][x], s) for x in range(action.degree) for s in labels]
    return LabeledMultigraph(
        action.degree, edges, labels=labels, degree_bound=2 * len(labels),
        name=name, require_connected=False, meta=meta,
    )


def random_action(n: int, labels, rng: np.random.Generator) -> PermAction:
    return PermAction(n, {s: rng.permutation(n) for s in labels})


def random_transitive_action(n: int, labels, rng: np.random.Generator, max_tries: int = 1000) -> PermAction:
    """Redraw from the same stream until the action is transitive."""
    for _ in range(max_tries):
        act = random_action(n, labels, rng)
        if act.transitive:
            return act
    raise PreconditionError(f"no transitive action of degree {n} in {max_tries} draws")


def cyclic_action(n: int, label: str = "t", step: int = 1) -> PermAction:
    return PermAction(n, {label: [(x + step) % n for x in range(n)]})


def torus_action(n: int, labels=("a", "b")) -> PermAction:
    a, b = labels
    return PermAction(n * n, {
        a: [((i + 1) % n) * n + j for i in range(n) for j in range(n)],
        b: [i * n + (j + 1) % n for i in range(n) for j in range(n)],
    })


def regular_action(action: PermAction, cap: int = DEFAULT_BALL_CAP) -> PermAction:
    """Right-regular action of the permutation group generated by ``action``.

    Its Schreier graph is the Cayley graph of the image group, i.e. of the
    normal quotient by the kernel of the action.
    """
    ident = tuple(range(action.degree))
    elems = {ident: 0}
    order = [ident]
    i = 0
    while i < len(order):
        g = order[i]
        for s in action.labels:
            p = action.perms[s]
            h = tuple(p[x] for x in g)
            if h not in elems:
                if len(order) >= cap:
                    raise CapExceededError(f"permutation group larger than cap {cap}")
                elems[h] = len(order)
                order.append(h)
        i += 1
    perms = {}
    for s in action.labels:
        p = action.perms[s]
        perms[s] = [elems[tuple(p[x] for x in g)] for g in order]
    return PermAction(len(order), perms)


# ---------------------------------------------------------------- SL(2, p)

SL2_GENERATORS = {"a": (1, 2, 0, 1), "b": (1, 0, 2, 1)}


def _mat_mul(x, y, p):
    a, b, c, d = x
    e, f, g, h = y
    return ((a * e + b * g) % p, (a * f + b * h) % p, (c * e + d * g) % p, (c * f + d * h) % p)


def sl2_action(p: int) -> PermAction:
    """Right-regular action of SL(2, p) generated by the two standard matrices."""
    if p < 3 or not sympy.isprime(p):
        raise PreconditionError(f"sl2p needs an odd prime, got {p}")
    ident = (1, 0, 0, 1)
    index = {ident: 0}
    order = [ident]
    i = 0
    while i < len(order):
        m = order[i]
        for s in ("a", "b"):
            nxt = _mat_mul(m, SL2_GENERATORS[s], p)
            if nxt not in index:
                index[nxt] = len(order)
                order.append(nxt)
        i += 1
    if len(order) != p * (p * p - 1):
        raise PreconditionError(f"generated group has order {len(order)}, expected {p * (p * p - 1)}")
    perms = {s: [index[_mat_mul(m, SL2_GENERATORS[s], p)] for m in order] for s in ("a", "b")}
    return PermAction(len(order), perms)


# ---------------------------------------------------------------- families

FAMILIES = ("cycle", "torus", "sl2p", "random_schreier", "box_tower")


def build_family(family: str, sizes=None, rank: int = 2, seed: int = 0,
                 tower=None) -> GraphSequence:
    """Build a finite truncation of one of the built-in graph families.

    ``sizes`` are cycle lengths, torus sides, primes or random degrees;
    ``box_tower`` takes a list of ``PermAction`` instead.
    """
    if family == "box_tower":
        if not tower:
            raise PreconditionError("box_tower needs a non-empty list of actions")
        graphs = [schreier_graph(a, name=f"box{i}", meta={"family": "box_tower"})
                  for i, a in enumerate(tower)]
        return GraphSequence(graphs, list(range(len(graphs))), "box_tower")
    if family not in FAMILIES:
        raise PreconditionError(f"unknown family {family!r}; expected one of {FAMILIES}")
    sizes = [int(n) for n in sizes or []]
    if not sizes:
        raise PreconditionError("family needs at least one size")
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise PreconditionError(f"sizes must be non-decreasing, got {sizes}")
    graphs = []
    meta = {"family": family}
    for pos, n in enumerate(sizes):
        if n < 1:
            raise PreconditionError(f"size must be positive, got {n}")
        if family == "cycle":
            act, labels = cyclic_action(n), ("t",)
        elif family == "torus":
            act, labels = torus_action(n), ("a", "b")
        elif family == "sl2p":
            act, labels = sl2_action(n), ("a", "b")
        else:
            labels = default_labels(rank)
            act = random_action(n, labels, np.random.default_rng([seed, pos]))
        g = schreier_graph(act, labels=labels, name=f"{family}{n}_{pos}",
                           meta={**meta, "side": str(n)})
        graphs.append(g)
    seq_meta = {"rng": RNG_NAME, "seed": seed} if family == "random_schreier" else {}
    return GraphSequence(graphs, list(range(len(graphs))), family, seq_meta)


# ---------------------------------------------------------------- oracles

@dataclass(frozen=True)
class GroupOracle:
    """Exact Cayley balls for Z^d, F_r, or the group generated by an action."""

    kind: str
    rank: int
    generators: tuple
    action: PermAction | None = field(default=None, compare=False)
    cap: int = DEFAULT_BALL_CAP

    @classmethod
    def free_abelian(cls, d: int, generators=None, cap=DEFAULT_BALL_CAP):
        if generators is None:
            generators = ("t",) if d == 1 else default_labels(d)
        return cls("free_abelian", d, tuple(generators), cap=cap)

    @classmethod
    def free(cls, r: int, generators=None, cap=DEFAULT_BALL_CAP):
        return cls("free", r, tuple(generators or default_labels(r)), cap=cap)

    @classmethod
    def permutation(cls, action: PermAction, cap=DEFAULT_BALL_CAP):
        return cls("permutation", len(action.labels), action.labels, action, cap)

    @classmethod
    def parse(cls, text: str):
        """``free2``, ``free_abelian2``/``z2`` style group names."""
        for prefix, ctor in (("free_abelian", cls.free_abelian), ("z", cls.free_abelian),
                             ("free", cls.free), ("f", cls.free)):
            if text.startswith(prefix) and text[len(prefix):].isdigit():
                return ctor(int(text[len(prefix):]))
        raise PreconditionError(f"unknown group {text!r}")

    def identity(self):
        if self.kind == "free_abelian":
            return (0,) * self.rank
        if self.kind == "free":
            return ()
        return tuple(range(self.action.degree))

    def multiply(self, elem, label: str, exponent: int = 1):
        """Right multiplication by a generator or its inverse."""
        if self.kind == "free_abelian":
            i = self.generators.index(label)
            return elem[:i] + (elem[i] + exponent,) + elem[i + 1:]
        if self.kind == "free":
            return free_reduce(elem + ((label, exponent),))
        perm = self.action.array(label, exponent)
        return tuple(int(perm[x]) for x in elem)

    def evaluate(self, word):
        elem = self.identity()
        for s, e in word:
            elem = self.multiply(elem, s, e)
        return elem

    def word_of(self, elem) -> Word:
        if self.kind == "free_abelian":
            return tuple((s, 1 if c > 0 else -1) for s, c in zip(self.generators, elem)
                         for _ in range(abs(c)))
        if self.kind == "free":
            return tuple(elem)
        raise PreconditionError("permutation oracle has no normal form for words")

    def ball(self, r: int) -> RootedBall:
        return cayley_ball(self, r)


def cayley_ball(oracle: GroupOracle, r: int) -> RootedBall:
    """Rooted labeled r-ball of the Cayley graph at the identity."""
    if r < 0:
        raise PreconditionError("radius must be non-negative")
    ident = oracle.identity()
    index = {ident: 0}
    order = [ident]
    depth = [0]
    i = 0
    while i < len(order):
        g = order[i]
        if depth[i] < r:
            for s in oracle.generators:
                for e in (1, -1):
                    h = oracle.multiply(g, s, e)
                    if h not in index:
                        if len(order) >= oracle.cap:
                            raise CapExceededError(
                                f"Cayley ball of radius {r} exceeds cap {oracle.cap}")
                        index[h] = len(order)
                        order.append(h)
                        depth.append(depth[i] + 1)
        i += 1
    edges = []
    for gi, g in enumerate(order):
        for s in oracle.generators:
            h = oracle.multiply(g, s, 1)
            if h in index:
                edges.append((gi, index[h], s))
    graph = LabeledMultigraph(
        len(order), edges, labels=oracle.generators, degree_bound=2 * len(oracle.generators),
        name=f"cay_{oracle.kind}{oracle.rank}_B{r}",
    )
    return RootedBall(graph, tuple(range(len(order))), r, elements=tuple(order))


def free_ball_size(rank: int, radius: int) -> int:
    """Closed form ``1 + 2r((2r-1)^rho - 1)/(2r-2)``; ``1 + 2 rho`` when r = 1."""
    if rank == 1:
        return 1 + 2 * radius
    return 1 + 2 * rank * ((2 * rank - 1) ** radius - 1) // (2 * rank - 2)


# ---------------------------------------------------------------- Reidemeister-Schreier

def schreier_transversal(action: PermAction, base: int = 0) -> dict:
    """BFS spanning tree of the coset graph: coset -> transversal word."""
    words = {base: ()}
    queue = deque([base])
    while queue:
        c = queue.popleft()
        for s in action.labels:
            for e in (1, -1):
                d = int(action.array(s, e)[c])
                if d not in words:
                    words[d] = words[c] + ((s, e),)
                    queue.append(d)
    if len(words) != action.degree:
        raise PreconditionError("coset action is not transitive")
    return words


def reidemeister_schreier(action: PermAction, base: int = 0) -> list:
    """Free generators ``t(c) s t(c.s)^-1`` of the stabilizer of ``base``.

    Only free reduction is applied; generators that reduce to the identity
    (spanning-tree edges) are dropped.
    """
    trans = schreier_transversal(action, base)
    gens = []
    for c in range(action.degree):
        for s in action.labels:
            d = action.perms[s][c]
            w = free_reduce(trans[c] + ((s, 1),) + invert(trans[d]))
            if w:
                gens.append(w)
    expected = action.degree * (len(action.labels) - 1) + 1
    if len(gens) != expected:
        raise AssertionError(f"Nielsen-Schreier count {len(gens)} != {expected}")
    return gens


@dataclass
class PairIndex:
    """Paired actions at one tower index."""

    gamma: PermAction
    lam: PermAction
    base_points: tuple
    orbit: tuple


@dataclass
class SubgroupPair:
    ambient: tuple
    subgroup_generators: list
    subgroup_labels: tuple
    index: int
    coset_action: PermAction
    levels: list = field(default_factory=list)

    def generator_words(self) -> dict:
        return dict(zip(self.subgroup_labels, self.subgroup_generators))


def subgroup_pair_sequence(ambient: GroupOracle, coset_action: PermAction, tower):
    """Pair ``Sch(Gamma, N_k, S)`` with ``Sch(Lambda, N_k, S')`` along a tower.

    ``N_k`` is the stabilizer of ``(0, 0)`` in the product of the k-th tower
    action with the coset action of ``Lambda``, so ``N_k <= Lambda``.  Returns
    ``(pair, gamma_sequence, lambda_sequence)``.
    """
    if ambient.kind != "free":
        raise PreconditionError(f"ambient group must be free, got {ambient.kind}")
    labels = ambient.generators
    if tuple(coset_action.labels) != tuple(labels):
        raise PreconditionError("coset action labels differ from ambient generators")
    if not coset_action.transitive:
        raise PreconditionError("coset action must be transitive")
    m = coset_action.degree
    gens = reidemeister_schreier(coset_action)
    sub_labels = tuple(f"h{i}" for i in range(len(gens)))
    pair = SubgroupPair(tuple(labels), gens, sub_labels, m, coset_action)
    g_graphs, l_graphs = [], []
    for k, act in enumerate(tower):
        if tuple(act.labels) != tuple(labels):
            raise PreconditionError(f"tower action {k} has labels {act.labels}")
        if not act.transitive:
            raise PreconditionError(f"tower action {k} is not transitive")
        level = pair_level(act, coset_action, gens, sub_labels)
        pair.levels.append(level)
        g_graphs.append(schreier_graph(level.gamma, name=f"gamma_{k}", meta={"family": "pair"}))
        l_graphs.append(schreier_graph(level.lam, name=f"lambda_{k}", meta={"family": "pair"}))
    idx = list(range(len(tower)))
    return pair, GraphSequence(g_graphs, idx, "pair_gamma"), GraphSequence(l_graphs, idx, "pair_lambda")


def pair_level(act: PermAction, coset_action: PermAction, gens, sub_labels) -> PairIndex:
    m = coset_action.degree
    n = act.degree
    labels = act.labels
    # orbit of (0, 0) in the product action, encoded x * m + c
    start = 0
    seen = {start}
    queue = deque([start])
    while queue:
        p = queue.popleft()
        x, c = divmod(p, m)
        for s in labels:
            for e in (1, -1):
                q = int(act.array(s, e)[x]) * m + int(coset_action.array(s, e)[c])
                if q not in seen:
                    seen.add(q)
                    queue.append(q)
    orbit = tuple(sorted(seen))
    pos = {p: i for i, p in enumerate(orbit)}
    gamma = {}
    for s in labels:
        ps, cs = act.perms[s], coset_action.perms[s]
        gamma[s] = [pos[ps[p // m] * m + cs[p % m]] for p in orbit]
    gamma_action = PermAction(len(orbit), gamma)
    base = tuple(i for i, p in enumerate(orbit) if p % m == 0)
    base_pos = {b: j for j, b in enumerate(base)}
    lam = {}
    for h, w in zip(sub_labels, gens):
        img = gamma_action.act_all(w, base)
        lam[h] = [base_pos[int(v)] for v in img]
    if len(base) * m != len(orbit):
        raise AssertionError("Lambda-orbit size times index differs from Gamma-orbit size")
    return PairIndex(gamma_action, PermAction(len(base), lam), base, orbit)
