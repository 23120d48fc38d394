import pytest
from hypothesis import given, settings, strategies as st

from movebc.bgraph import (
    EMPTY, BorrowGraph, CycleError, Edge, FactorFieldFailure, GraphError, GlobalNode, Local, Stack,
    edge_subsumes, elim, elim_all, extend_star, factor, factor_field, graph_leq, join, label_subsumes,
    normalize, rename, widen_paths,
)
from movebc.ir import EPS, STAR, path

from strategies import NODES, dags, edges, graphs, labelled_walks, paths

a, b, u, v, w, t = Local(0, 0), Local(0, 1), Stack(0), Stack(1), Stack(2), Local(0, 2)
F, G, FG = path("f"), path("g"), path("f", "g")
F_STAR = path("f", ext=True)


def g(*es):
    return BorrowGraph(Edge(*e) for e in es)


# subsumption and order

def test_subsumption_examples():
    assert edge_subsumes(Edge(a, F, b), Edge(a, F, b))
    assert edge_subsumes(Edge(a, FG, b), Edge(a, F_STAR, b))
    assert not edge_subsumes(Edge(a, G, b), Edge(a, F_STAR, b))
    assert not edge_subsumes(Edge(a, F, b), Edge(a, F, v))
    assert label_subsumes(path("f"), STAR)


def test_graph_leq_examples():
    assert graph_leq(EMPTY, g((a, F, b)))
    assert graph_leq(g((a, FG, b)), g((a, F_STAR, b)))
    assert not graph_leq(g((a, F_STAR, b)), g((a, FG, b)))


# join

def test_join_examples():
    x = g((a, F, b))
    assert join(x, x) == x
    assert join(g((a, F, b)), g((a, F_STAR, b))) == g((a, F_STAR, b))
    with pytest.raises(CycleError):
        join(g((a, EPS, b)), g((b, EPS, a)))


# rename

def test_rename_examples():
    assert rename(g((Stack(3), EPS, Stack(4))), {Stack(3): Local(1, 0)}) == g((Local(1, 0), EPS, Stack(4)))
    assert rename(EMPTY, {a: b}) == EMPTY
    with pytest.raises(GraphError):
        rename(g((a, EPS, b)), {a: u, b: u})


# factor

def test_factor_examples():
    assert factor(g((u, F, w)), u, v) == g((u, EPS, v), (v, F, w))
    assert factor(EMPTY, u, v) == g((u, EPS, v))
    assert g((t, G, u)).edges <= factor(g((t, G, u)), u, v).edges
    with pytest.raises(GraphError):
        factor(g((v, EPS, w)), u, v)


def test_factor_field_examples():
    assert factor_field(g((u, FG, a)), "f", u, v) == g((u, F, v), (v, G, a))
    with pytest.raises(FactorFieldFailure):
        factor_field(g((u, EPS, a)), "f", u, v)
    with pytest.raises(FactorFieldFailure):
        factor_field(g((u, STAR, a)), "f", u, v)
    assert factor_field(g((u, G, a)), "f", u, v) == g((u, G, a), (u, F, v))
    # an f* edge moves below the new reference as ε*
    assert factor_field(g((u, F_STAR, a)), "f", u, v) == g((u, F, v), (v, STAR, a))


def test_extend_star_examples():
    assert extend_star(EMPTY, [a], [b]) == g((a, STAR, b))
    base = g((a, F, b))
    assert extend_star(base, [], [u]) == base
    out = extend_star(EMPTY, [a, b, t], [u, v])
    assert len(out) == 6 and all(e.label == STAR for e in out)


# elim

def test_elim_examples():
    assert elim(g((a, F, u), (u, G, b)), u) == g((a, FG, b))
    assert elim(g((a, F_STAR, u), (u, G, b)), u) == g((a, F_STAR, b))
    assert elim(g((u, F, a), (u, G, b)), u) == EMPTY
    assert elim(g((a, F, b)), u) == g((a, F, b))


def test_elim_all_order_is_ascending():
    graph = g((a, F, u), (u, G, v), (v, F, b))
    assert elim_all(graph, [v, u]) == g((a, path("f", "g", "f"), b))


# queries

def test_unborrowed():
    assert not g((u, EPS, v)).unborrowed(u)
    assert EMPTY.unborrowed(u)
    assert g((t, EPS, u)).unborrowed(u)


def test_borrowed_targets():
    assert g((u, F, a), (u, EPS, b)).borrowed_targets(u) == {a, b}
    assert EMPTY.borrowed_targets(u) == set()
    assert g((t, F, u)).borrowed_targets(u) == set()


def test_widen_paths_examples():
    assert widen_paths(g((a, path("f", "g", "h"), b)), 2) == g((a, path("f", "g", ext=True), b))
    short = g((a, FG, b))
    assert widen_paths(short, 2) == short
    with pytest.raises(ValueError):
        widen_paths(short, 0)


def test_dump_format():
    assert g((Local(0, 2), FG, Stack(4))).dump() == "Π(0,2) -[f.g]-> Ω(4)"
    assert str(GlobalNode("T")) == "l_T"


# properties

@given(edges)
def test_subsumption_reflexive(e):
    assert edge_subsumes(e, e)


@given(paths, paths, paths)
def test_subsumption_transitive(p, q, r):
    if label_subsumes(p, q) and label_subsumes(q, r):
        assert label_subsumes(p, r)


@given(graphs, graphs)
def test_join_upper_bound_and_commutative(x, y):
    try:
        j = join(x, y)
    except CycleError:
        with pytest.raises(CycleError):
            join(y, x)
        return
    assert graph_leq(x, j) and graph_leq(y, j)
    assert join(y, x) == j


@given(dags())
def test_join_idempotent(x):
    assert join(x, x) == normalize(x.edges)
    assert graph_leq(x, join(x, x)) and graph_leq(join(x, x), x)


@given(graphs, st.integers(1, 3))
def test_widening_moves_up(x, k):
    w_ = widen_paths(x, k)
    assert graph_leq(x, w_)
    assert all(len(e.label.fields) <= k for e in w_)


@given(graphs, graphs, graphs)
def test_leq_is_a_preorder(x, y, z):
    assert graph_leq(x, x)
    if graph_leq(x, y) and graph_leq(y, z):
        assert graph_leq(x, z)


@given(dags(), st.sampled_from(NODES))
def test_factor_keeps_in_degree(x, node):
    fresh = Stack(9)
    out = factor(x, node, fresh)
    assert set(out.in_edges(node)) == set(x.in_edges(node))
    moved = {(e.label, e.dst) for e in x.out_edges(node)}
    assert {(e.label, e.dst) for e in out.out_edges(fresh)} == moved


@settings(max_examples=300)
@given(dags(), st.sampled_from(NODES))
def test_elim_preserves_reachability(x, node):
    after = elim(x, node)
    assert all(node not in (e.src, e.dst) for e in after)
    for s in NODES:
        for d in NODES:
            if node in (s, d) or s == d:
                continue
            for lab in labelled_walks(x, s, d, via=node):
                assert any(label_subsumes(lab, q) for q in labelled_walks(after, s, d)), (s, d, lab)
