"""Hypothesis strategies for paths, edges and small borrow graphs."""

from hypothesis import strategies as st

from movebc.bgraph import BorrowGraph, Edge, GlobalNode, Local, Stack
from movebc.ir import EPS, Path

NODES = (Local(0, 0), Local(0, 1), Stack(0), Stack(1), GlobalNode("T"))

fields = st.lists(st.sampled_from("fgh"), max_size=3).map(tuple)
paths = st.builds(Path, fields, st.booleans())
fixed_paths = st.builds(Path, fields, st.just(False))
edges = st.builds(Edge, st.sampled_from(NODES), paths, st.sampled_from(NODES))
graphs = st.lists(edges, max_size=6).map(BorrowGraph)


@st.composite
def dags(draw, max_edges=7):
    """Acyclic graphs over NODES: edges only go forward in a drawn node order."""
    order = draw(st.permutations(NODES))
    out = []
    for _ in range(draw(st.integers(0, max_edges))):
        i = draw(st.integers(0, len(order) - 2))
        j = draw(st.integers(i + 1, len(order) - 1))
        out.append(Edge(order[i], draw(paths), order[j]))
    return BorrowGraph(out)


def labelled_walks(graph, src, dst, via=None, limit=6):
    """Concatenated labels of every simple path src -> dst (optionally through ``via``)."""
    out = []

    def go(node, label, seen, hit):
        if node == dst and seen:
            if via is None or hit:
                out.append(label)
            return
        if len(seen) > limit:
            return
        for e in graph.out_edges(node):
            if e.dst not in seen:
                go(e.dst, label.concat(e.label), seen | {e.dst}, hit or e.dst == via)

    go(src, EPS, frozenset(), False)
    return out
