"""Exact enumeration of contraction graphs and the counting formulas around them.

Vertex 0 is the observable (the root) with slots (a,1..p) and (c,1..p).
Interaction vertices carry (a,1),(a,2),(c,1),(c,2); potential vertices carry
(a,1),(c,1).  Vertices are added one at a time; vertex v links one of its
slots, or two slots of the same direction (interaction vertices only), to
empty slots of opposite direction on vertices 0..v-1.  A graph with k
non-root vertices and k+l edges has l loops.

All arithmetic in this module is exact integer arithmetic.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, NamedTuple

from .errors import BudgetExceeded

MAX_P = 3
MAX_K = 5

A, C = "a", "c"


class EdgeLabel(NamedTuple):
    v: int
    d: str
    i: int


def _slots(kind: str, v: int, p: int) -> list[EdgeLabel]:
    n = p if kind == "root" else (2 if kind == "W" else 1)
    return [EdgeLabel(v, d, i) for d in (A, C) for i in range(1, n + 1)]


@dataclass(frozen=True)
class AdmissibleGraph:
    """A labelled contraction graph; each edge is stored as (a-end, c-end)."""

    p: int
    k: int
    kinds: tuple[str, ...]
    edges: tuple[tuple[EdgeLabel, EdgeLabel], ...]
    loop_vertices: tuple[int, ...] = ()

    @property
    def l(self) -> int:
        return len(self.edges) - self.k

    @property
    def m(self) -> int:
        return self.kinds.count("V")

    def slots(self) -> list[EdgeLabel]:
        return [s for v, kind in enumerate(self.kinds) for s in _slots(kind, v, self.p)]

    def to_json(self) -> dict:
        return {
            "p": self.p, "k": self.k, "l": self.l, "m": self.m,
            "kinds": list(self.kinds),
            "edges": [[list(x), list(y)] for x, y in self.edges],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AdmissibleGraph":
        edges = tuple(sorted((EdgeLabel(*x), EdgeLabel(*y)) for x, y in doc["edges"]))
        return cls(doc["p"], doc["k"], tuple(doc["kinds"]), edges)

    def relabel(self, sigma) -> "AdmissibleGraph":
        """R_sigma: vertex v -> sigma[v-1] for v >= 1 (sigma a permutation of 1..k)."""
        perm = (0,) + tuple(sigma)
        kinds = [None] * (self.k + 1)
        for v, kind in enumerate(self.kinds):
            kinds[perm[v]] = kind
        edges = tuple(sorted(
            (EdgeLabel(perm[x.v], x.d, x.i), EdgeLabel(perm[y.v], y.d, y.i)) for x, y in self.edges))
        loops = tuple(sorted(perm[v] for v in self.loop_vertices))
        return AdmissibleGraph(self.p, self.k, tuple(kinds), edges, loops)


@dataclass(frozen=True)
class GraphStructure:
    """Equivalence class of graphs under relabelling of the non-root vertices."""

    canonical: AdmissibleGraph

    @classmethod
    def of(cls, graph: AdmissibleGraph) -> "GraphStructure":
        return cls(lexmin_form(graph))


def _key(g: AdmissibleGraph):
    return (g.edges, g.kinds)


def lexmin_form(graph: AdmissibleGraph) -> AdmissibleGraph:
    """Lexicographically least (edges, kinds) over all k! relabelings."""
    best = None
    for sigma in itertools.permutations(range(1, graph.k + 1)):
        cand = graph.relabel(sigma)
        cand = AdmissibleGraph(cand.p, cand.k, cand.kinds, cand.edges)
        if best is None or _key(cand) < _key(best):
            best = cand
    return best


def bfs_form(graph: AdmissibleGraph) -> tuple:
    """Complete relabelling invariant: the graph relabelled in breadth-first order.

    Starting at the root and scanning slots in (d, i) order is deterministic
    because slot labels are intrinsic, and it reaches every vertex since
    admissible graphs are connected.
    """
    return _bfs_key(graph.p, graph.kinds, graph.edges)


def _bfs_key(p, kinds, edges):
    partner = {}
    for x, y in edges:
        partner[x] = y
        partner[y] = x
    order = {0: 0}
    queue = [0]
    for u in queue:
        for s in _slots(kinds[u], u, p):
            t = partner.get(s)
            if t is not None and t.v not in order:
                order[t.v] = len(order)
                queue.append(t.v)
    new_kinds = [None] * len(kinds)
    for v, kind in enumerate(kinds):
        new_kinds[order[v]] = kind
    new_edges = sorted(
        (order[x.v], x.i, order[y.v], y.i) for x, y in edges)
    return tuple(new_kinds), tuple(new_edges)


# ---------------------------------------------------------------------------
# growth process


def _check_ceiling(p: int, k: int, allow_large: bool):
    if p < 1 or k < 0:
        raise ValueError(f"need p >= 1 and k >= 0, got p={p}, k={k}")
    if not allow_large and (p > MAX_P or k > MAX_K):
        raise BudgetExceeded(
            f"enumeration ceiling is p <= {MAX_P}, k <= {MAX_K}; got p={p}, k={k} "
            "(pass allow_large=True to override)")


def iter_admissible(p: int, k: int, with_potential: bool = False,
                    allow_large: bool = False) -> Iterator[AdmissibleGraph]:
    """Yield every admissible graph produced by the growth process exactly once."""
    _check_ceiling(p, k, allow_large)
    kinds_allowed = ("W", "V") if with_potential else ("W",)

    def grow(v, empty, edges, kinds, loops):
        if v > k:
            yield AdmissibleGraph(p, k, tuple(kinds), tuple(sorted(edges)), tuple(loops))
            return
        for kind in kinds_allowed:
            own = _slots(kind, v, p)
            for d in (A, C):
                opp = C if d == A else A
                targets = [s for s in empty if s.d == opp]
                mine = [s for s in own if s.d == d]
                # one edge
                for s in mine:
                    for t in targets:
                        e = (s, t) if d == A else (t, s)
                        rest = [x for x in empty if x != t] + [x for x in own if x != s]
                        yield from grow(v + 1, rest, edges + [e], kinds + [kind], loops)
                # two edges of the same direction
                if len(mine) == 2:
                    for t1, t2 in itertools.permutations(targets, 2):
                        e1 = (mine[0], t1) if d == A else (t1, mine[0])
                        e2 = (mine[1], t2) if d == A else (t2, mine[1])
                        rest = [x for x in empty if x not in (t1, t2)] + [x for x in own if x.d != d]
                        yield from grow(v + 1, rest, edges + [e1, e2], kinds + [kind], loops + [v])

    yield from grow(1, _slots("root", 0, p), [], ["root"], [])


def enumerate_admissible(p: int, k: int, with_potential: bool = False,
                         allow_large: bool = False) -> list[AdmissibleGraph]:
    graphs = list(iter_admissible(p, k, with_potential, allow_large))
    graphs.sort(key=lambda g: (g.l, g.m, g.kinds, g.edges))
    return graphs


# ---------------------------------------------------------------------------
# structural properties


def is_connected(g: AdmissibleGraph, edges=None) -> bool:
    edges = g.edges if edges is None else edges
    adj = {v: set() for v in range(g.k + 1)}
    for x, y in edges:
        adj[x.v].add(y.v)
        adj[y.v].add(x.v)
    seen, stack = {0}, [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == g.k + 1


def check_properties(g: AdmissibleGraph) -> None:
    """Raise AssertionError unless the graph satisfies properties (a)-(d)."""
    valid = set(g.slots())
    used = [s for e in g.edges for s in e]
    assert all(s in valid for s in used), "edge touches a nonexistent slot"
    assert len(used) == len(set(used)), "a slot has degree > 1"
    assert all(x.d == A and y.d == C for x, y in g.edges), "edge joins equal directions"
    assert all(x.v != y.v for x, y in g.edges), "self-loop at a vertex"
    assert is_connected(g), "graph is disconnected"
    assert len(g.loop_vertices) == g.l
    _check_loop_removal(g)


def _check_loop_removal(g: AdmissibleGraph) -> None:
    # For each loop vertex both slots of one direction are attached to earlier
    # vertices; dropping either edge must leave a spanning tree in which the
    # kept edge is the first step of the path from that vertex to the root.
    pairs = []
    for v in g.loop_vertices:
        back = [e for e in g.edges if any(s.v == v for s in e)
                and all(s.v <= v for s in e)]
        assert len(back) == 2, f"loop vertex {v} does not have two back edges"
        dirs = {next(s for s in e if s.v == v).d for e in back}
        assert len(dirs) == 1, f"loop vertex {v} uses two directions"
        pairs.append(back)
    for choice in itertools.product((0, 1), repeat=len(pairs)):
        removed = {pair[c] for pair, c in zip(pairs, choice)}
        kept = [e for e in g.edges if e not in removed]
        assert len(kept) == g.k and is_connected(g, kept), "removal does not leave a tree"
        parent = _tree_parents(g.k, kept)
        for pair, c, v in zip(pairs, choice, g.loop_vertices):
            x, y = pair[1 - c]
            other = x.v if y.v == v else y.v
            assert parent[v] == other, "kept loop edge is not on the path to the root"


def _tree_parents(k, edges):
    adj = {v: [] for v in range(k + 1)}
    for x, y in edges:
        adj[x.v].append(y.v)
        adj[y.v].append(x.v)
    parent, stack = {0: None}, [0]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                stack.append(w)
    return parent


# ---------------------------------------------------------------------------
# counting


@lru_cache(maxsize=None)
def _tally(p: int, k: int, with_potential: bool, allow_large: bool = False):
    # Same growth process as iter_admissible, specialised for counting: slots
    # are plain (v, d, i) tuples and edges are never sorted or wrapped.
    _check_ceiling(p, k, allow_large)
    kinds_allowed = ("W", "V") if with_potential else ("W",)
    slot_cache = {}

    def slots(kind, v):
        key = (kind, v)
        if key not in slot_cache:
            slot_cache[key] = [tuple(s) for s in _slots(kind, v, p)]
        return slot_cache[key]

    graphs: dict[tuple[int, int], int] = {}
    keys: dict[tuple[int, int], set] = {}

    def leaf(edges, kinds):
        partner = {}
        for x, y in edges:
            partner[x] = y
            partner[y] = x
        order = {0: 0}
        queue = [0]
        for u in queue:
            for s in slots(kinds[u], u):
                t = partner.get(s)
                if t is not None and t[0] not in order:
                    order[t[0]] = len(order)
                    queue.append(t[0])
        new_kinds = [None] * len(kinds)
        for v, kind in enumerate(kinds):
            new_kinds[order[v]] = kind
        key = (tuple(new_kinds), tuple(sorted([(order[x[0]], x[2], order[y[0]], y[2]) for x, y in edges])))
        lm = (len(edges) - k, new_kinds.count("V"))
        graphs[lm] = graphs.get(lm, 0) + 1
        keys.setdefault(lm, set()).add(key)

    def grow(v, empty_a, empty_c, edges, kinds):
        if v > k:
            leaf(edges, kinds)
            return
        for kind in kinds_allowed:
            own = slots(kind, v)
            own_a = [s for s in own if s[1] == A]
            own_c = [s for s in own if s[1] == C]
            kinds.append(kind)
            for mine, free_same, targets, is_a in ((own_a, own_c, empty_c, True),
                                                   (own_c, own_a, empty_a, False)):
                for s in mine:
                    left = [x for x in mine if x != s]
                    for t in targets:
                        rest_t = [x for x in targets if x != t]
                        edges.append((s, t) if is_a else (t, s))
                        if is_a:
                            grow(v + 1, empty_a + left, rest_t + free_same, edges, kinds)
                        else:
                            grow(v + 1, rest_t + free_same, empty_c + left, edges, kinds)
                        edges.pop()
                if len(mine) == 2:
                    for t1, t2 in itertools.permutations(targets, 2):
                        rest_t = [x for x in targets if x != t1 and x != t2]
                        if is_a:
                            edges.extend(((mine[0], t1), (mine[1], t2)))
                            grow(v + 1, empty_a, rest_t + free_same, edges, kinds)
                        else:
                            edges.extend(((t1, mine[0]), (t2, mine[1])))
                            grow(v + 1, rest_t + free_same, empty_c, edges, kinds)
                        del edges[-2:]
            kinds.pop()

    root = slots("root", 0)
    grow(1, [s for s in root if s[1] == A], [s for s in root if s[1] == C], [], ["root"])
    return graphs, {lm: len(s) for lm, s in keys.items()}


def admissible_counts(p: int, k: int, with_potential: bool = False) -> dict:
    """Number of admissible graphs per (l, m)."""
    return dict(_tally(p, k, with_potential)[0])


def structure_counts(p: int, k: int, with_potential: bool = False) -> dict:
    """|Q| per (l, m): distinct relabelling classes among admissible graphs."""
    return dict(_tally(p, k, with_potential)[1])


def count_structures(p: int, k: int, l: int, m: int | None = None) -> int:
    """Exact number of graph structures of type (p, k, l) or (p, k, l, m)."""
    table = structure_counts(p, k, with_potential=m is not None)
    return table.get((l, m or 0), 0)


def elementary_count(p: int, k: int, l: int, m: int | None = None) -> int:
    """Number of elementary operator terms of type (p, k, l[, m]).

    Swapping the two same-direction slot labels of an interaction vertex maps
    admissible graphs to admissible graphs without fixed points and leaves the
    operator term unchanged, so each elementary term is 2^(#interaction
    vertices) graphs.
    """
    table = admissible_counts(p, k, with_potential=m is not None)
    m = m or 0
    count = table.get((l, m), 0)
    q, rem = divmod(count, 2 ** (k - m))
    assert rem == 0
    return q


def raney(x: int, t: int, n: int) -> int:
    """A_n(x, t) = x/(x+nt) binom(x+nt, n), with A_0 = 1."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return 1
    top = x + n * t
    if top <= 0:
        raise ValueError(f"x + n t must be positive, got {top}")
    num = x * math.comb(top, n)
    q, rem = divmod(num, top)
    if rem:
        raise ArithmeticError(f"A_{n}({x},{t}) is not an integer")
    return q


def catalan(m: int, n: int) -> int:
    """m-ary Catalan number binom(nm, n) / (n(m-1)+1)."""
    if m < 2:
        raise ValueError("m must be at least 2")
    return raney(1, m, n)


def weak_compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 0:
        if n == 0:
            yield ()
        return
    if parts == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in weak_compositions(n - first, parts - 1):
            yield (first,) + rest


def catalan_recursion_sum(m: int, n: int) -> int:
    """sum over n_1+..+n_m = n-1 of prod C^m_{n_i}; equals C^m_n for n >= 1."""
    return sum(math.prod(catalan(m, x) for x in comp) for comp in weak_compositions(n - 1, m))


def forest_sum(m: int, n: int, r: int) -> int:
    """sum over n_1+..+n_r = n of prod C^m_{n_i} (ordered forests of r m-ary trees)."""
    return sum(math.prod(catalan(m, x) for x in comp) for comp in weak_compositions(n, r))


def forest_closed_form(m: int, n: int, r: int) -> int:
    return raney(r, m, n)


def tree_structure_count(p: int, k: int) -> int:
    """2^k (2p/(2p+3k)) binom(2p+3k, k)."""
    if p < 1:
        raise ValueError("p must be positive")
    return 2 ** k * raney(2 * p, 3, k)


def loop_structure_bound(p: int, k: int, l: int) -> int:
    if not 0 <= l <= k:
        raise ValueError(f"need 0 <= l <= k, got l={l}, k={k}")
    return 2 ** k * math.comb(k, l) * math.comb(2 * p + 3 * k, k) * (p + k - l) ** l


def elementary_term_bound(p: int, k: int, l: int) -> int:
    if not 0 <= l <= k:
        raise ValueError(f"need 0 <= l <= k, got l={l}, k={k}")
    return 2 ** k * math.comb(k, l) * (p + k - l) ** l * math.prod(range(p, p + k))


def potential_structure_bound(p: int, k: int, l: int, m: int) -> int:
    if l < 0 or m < 0 or l + m > k:
        raise ValueError(f"need l, m >= 0 and l + m <= k, got l={l}, m={m}, k={k}")
    return (2 ** k * math.comb(k, m) * math.comb(k, l) * math.comb(2 * p + 3 * k, k)
            * (p + k - l - m) ** l)


def counting_table(pairs, with_potential: bool = False) -> list[dict]:
    """Rows p,k,l,m,count,closed_form,bound for the given (p, k) pairs."""
    rows = []
    for p, k in pairs:
        counts = structure_counts(p, k, with_potential)
        for (l, m) in sorted(counts):
            closed = tree_structure_count(p, k) if (l, m) == (0, 0) else None
            bound = (potential_structure_bound(p, k, l, m) if with_potential
                     else loop_structure_bound(p, k, l))
            rows.append({"p": p, "k": k, "l": l, "m": m, "count": counts[(l, m)],
                         "closed_form": closed, "bound": bound})
    return rows


def counting_table_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["p", "k", "l", "m", "count", "closed_form", "bound"],
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()
