"""Borrow graphs: positions, path-labeled borrow edges, subsumption and the graph operations."""

from __future__ import annotations

from typing import Iterable, NamedTuple

from .ir import EPS, STAR, Path

LOCAL, STACK, GLOBAL = 0, 1, 2


class Pos(NamedTuple):
    """An abstract position. Use the :func:`Local`, :func:`Stack` and :func:`GlobalNode` constructors."""

    kind: int
    frame: int = 0
    index: int = 0
    name: str = ""

    def __str__(self) -> str:
        if self.kind == LOCAL:
            return f"Π({self.frame},{self.index})"
        if self.kind == STACK:
            return f"Ω({self.index})"
        return f"l_{self.name}" if self.frame == 0 else f"l_{self.name}@{self.frame}"

    @property
    def is_local(self) -> bool:
        return self.kind == LOCAL

    @property
    def is_stack(self) -> bool:
        return self.kind == STACK

    @property
    def is_global(self) -> bool:
        return self.kind == GLOBAL


def Local(frame: int, index: int) -> Pos:
    return Pos(LOCAL, frame, index)


_STACK_POS = tuple(Pos(STACK, 0, i) for i in range(64))


def Stack(index: int) -> Pos:
    if 0 <= index < 64:
        return _STACK_POS[index]
    return Pos(STACK, 0, index)


def GlobalNode(name: str, frame: int = 0) -> Pos:
    return Pos(GLOBAL, frame, 0, name)


class Edge(NamedTuple):
    src: Pos
    label: Path
    dst: Pos

    def __str__(self) -> str:
        return f"{self.src} -[{self.label}]-> {self.dst}"

    def key(self):
        return (self.src, self.dst, self.label)


class CycleError(Exception):
    pass


class GraphError(Exception):
    """Precondition violation of a graph operation."""


class FactorFieldFailure(Exception):
    pass


def label_subsumes(p: Path, q: Path) -> bool:
    """Does label ``q`` subsume label ``p``?"""
    if p == q:
        return True
    return q.ext and p.fields[: len(q.fields)] == q.fields


def edge_subsumes(e1: Edge, e2: Edge) -> bool:
    """True iff ``e2`` subsumes ``e1``."""
    return e1.src == e2.src and e1.dst == e2.dst and label_subsumes(e1.label, e2.label)


class BorrowGraph:
    """An immutable set of borrow edges. All operations return new graphs."""

    __slots__ = ("_edges", "_sorted")

    def __init__(self, edges: Iterable[Edge] = ()):
        self._edges = frozenset(edges)
        self._sorted = None

    # ----------------------------------------------------------- container protocol
    @property
    def edges(self) -> frozenset:
        return self._edges

    def sorted_edges(self) -> tuple:
        if self._sorted is None:
            self._sorted = tuple(sorted(self._edges, key=Edge.key))
        return self._sorted

    def __iter__(self):
        return iter(self.sorted_edges())

    def __len__(self) -> int:
        return len(self._edges)

    def __contains__(self, e) -> bool:
        return e in self._edges

    def __eq__(self, other) -> bool:
        return isinstance(other, BorrowGraph) and self._edges == other._edges

    def __hash__(self) -> int:
        return hash(self._edges)

    def __repr__(self) -> str:
        return "BorrowGraph({" + ", ".join(str(e) for e in self) + "})"

    def dump(self) -> str:
        return "\n".join(str(e) for e in self)

    # ----------------------------------------------------------- queries
    def nodes(self) -> set:
        out = set()
        for e in self._edges:
            out.add(e.src)
            out.add(e.dst)
        return out

    def out_edges(self, u: Pos) -> list:
        return [e for e in self._edges if e.src == u]

    def in_edges(self, u: Pos) -> list:
        return [e for e in self._edges if e.dst == u]

    def incident(self, u: Pos) -> bool:
        return any(e.src == u or e.dst == u for e in self._edges)

    def unborrowed(self, u: Pos) -> bool:
        return not any(e.src == u for e in self._edges)

    def borrowed_targets(self, u: Pos) -> set:
        return {e.dst for e in self._edges if e.src == u}

    def is_acyclic(self) -> bool:
        if len(self._edges) < 2:
            return all(e.src != e.dst for e in self._edges)
        succ = {}
        for e in self._edges:
            succ.setdefault(e.src, set()).add(e.dst)
        state = {}
        for root in sorted(succ):
            if root in state:
                continue
            state[root] = 1
            stack = [(root, iter(sorted(succ.get(root, ()))))]
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[node] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    return False
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter(sorted(succ.get(nxt, ())))))
        return True

    def leq(self, other: "BorrowGraph") -> bool:
        return graph_leq(self, other)

    # ----------------------------------------------------------- operations
    def add(self, *edges: Edge) -> "BorrowGraph":
        return BorrowGraph(self._edges.union(edges))

    def rename(self, mapping: dict) -> "BorrowGraph":
        return rename(self, mapping)


EMPTY = BorrowGraph()


def graph_leq(g: BorrowGraph, h: BorrowGraph) -> bool:
    """``g ⊑ h``: every edge of g is subsumed by some edge of h."""
    if not g.edges:
        return True
    by_ends = {}
    for e in h.edges:
        by_ends.setdefault((e.src, e.dst), []).append(e.label)
    for e in g.edges:
        labels = by_ends.get((e.src, e.dst))
        if not labels or not any(label_subsumes(e.label, q) for q in labels):
            return False
    return True


def normalize(edges: Iterable[Edge]) -> BorrowGraph:
    """Drop every edge subsumed by a distinct edge with the same endpoints."""
    by_ends = {}
    for e in set(edges):
        by_ends.setdefault((e.src, e.dst), []).append(e.label)
    kept = []
    for (src, dst), labels in by_ends.items():
        if len(labels) == 1:
            kept.append(Edge(src, labels[0], dst))
            continue
        for p in labels:
            if not any(q != p and label_subsumes(p, q) for q in labels):
                kept.append(Edge(src, p, dst))
    return BorrowGraph(kept)


def join(g: BorrowGraph, h: BorrowGraph) -> BorrowGraph:
    """Union then subsumption pruning; raises CycleError if the result is cyclic."""
    out = normalize(g.edges | h.edges)
    if not out.is_acyclic():
        raise CycleError("join produced a cycle")
    return out


def rename(b: BorrowGraph, mapping: dict) -> BorrowGraph:
    if not mapping or not b.edges:
        return b
    if len(set(mapping.values())) != len(mapping):
        raise GraphError("rename mapping is not injective")
    get = mapping.get
    return BorrowGraph(Edge(get(e.src, e.src), e.label, get(e.dst, e.dst)) for e in b.edges)


def factor(b: BorrowGraph, u: Pos, v: Pos) -> BorrowGraph:
    """Move u's out-edges to v and add Borrow(u, ε, v)."""
    if b.incident(v):
        raise GraphError(f"factor: {v} already has incident edges")
    out = [Edge(v, e.label, e.dst) if e.src == u else e for e in b.edges]
    out.append(Edge(u, EPS, v))
    return BorrowGraph(out)


def factor_field(b: BorrowGraph, f: str, u: Pos, v: Pos) -> BorrowGraph:
    """Split u's borrows at field f; fails if u has an ε or ``*`` out-edge."""
    if b.incident(v):
        raise GraphError(f"factor_field: {v} already has incident edges")
    out = []
    for e in b.edges:
        if e.src == u:
            fields = e.label.fields
            if not fields:
                raise FactorFieldFailure(f"{u} has an out-edge labelled {e.label or 'ε'}")
            if fields[0] == f:
                out.append(Edge(v, Path(fields[1:], e.label.ext), e.dst))
                continue
        out.append(e)
    out.append(Edge(u, Path((f,)), v))
    return BorrowGraph(out)


def extend_star(b: BorrowGraph, us: Iterable[Pos], vs: Iterable[Pos]) -> BorrowGraph:
    us, vs = list(us), list(vs)
    if not us or not vs:
        return b
    for v in vs:
        if b.incident(v):
            raise GraphError(f"extend_star: {v} already has incident edges")
    return BorrowGraph(b.edges.union(Edge(u, STAR, v) for u in us for v in vs))


def elim(b: BorrowGraph, u: Pos) -> BorrowGraph:
    """Bridge every in-edge of u to every out-edge of u, then drop u's edges."""
    if not b.edges:
        return b
    ins, outs, rest = [], [], []
    for e in b.edges:
        if e.dst == u:
            ins.append(e)
        elif e.src == u:
            outs.append(e)
        else:
            rest.append(e)
    if not ins and not outs:
        return b
    for a in ins:
        for o in outs:
            rest.append(Edge(a.src, a.label.concat(o.label), o.dst))
    return BorrowGraph(rest)


def elim_all(b: BorrowGraph, us: Iterable[Pos]) -> BorrowGraph:
    for u in sorted(us):
        b = elim(b, u)
    return b


def widen_paths(b: BorrowGraph, k: int = 8) -> BorrowGraph:
    """Truncate labels longer than k segments to their first k segments, made extensible."""
    if k < 1:
        raise ValueError("widening bound must be at least 1")
    if all(len(e.label.fields) <= k for e in b.edges):
        return b
    return BorrowGraph(
        Edge(e.src, Path(e.label.fields[:k], True), e.dst) if len(e.label.fields) > k else e
        for e in b.edges
    )


def reachable(b: BorrowGraph, src: Pos) -> set:
    succ = {}
    for e in b.edges:
        succ.setdefault(e.src, []).append(e.dst)
    seen, todo = set(), [src]
    while todo:
        for n in succ.get(todo.pop(), ()):
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return seen
