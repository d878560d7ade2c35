import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from conftest import ev, random_log
from logpattern.graph import build_graph
from logpattern.log_ingest import Log


def test_shared_argument():
    g = build_graph(Log("a", (ev("X", "p"), ev("Y", "p"))))
    assert g.edges == {("X", "p"), ("Y", "p")}
    assert g.event_nodes == {"X", "Y"}
    assert g.arg_nodes == {"p"}


def test_dedup():
    g = build_graph(Log("a", (ev("X", "p"), ev("X", "p"))))
    assert g.edges == {("X", "p")}


def test_empty_log():
    g = build_graph(Log("a"))
    assert g.edges == frozenset() and g.event_nodes == frozenset() and g.arg_nodes == frozenset()


def test_same_string_on_both_sides_stays_bipartite():
    g = build_graph(Log("a", (ev("X", "X"),)))
    assert g.edges == {("X", "X")}
    assert g.adjacency() == {"X": {"X"}}


def test_edge_list_export(toy_log):
    text = build_graph(toy_log).edge_list_text()
    lines = text.splitlines()
    assert lines == sorted(lines)
    assert "CreateFile\tC:\\Windows\\374683.ini" in lines
    assert len(lines) == 5


def _brute_edges(lg):
    out = set()
    for e in lg.events:
        for a in e.args:
            out.add((e.event_type, a))
    return out


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    lg = random_log(rng)
    perm = rng.permutation(len(lg.events))
    shuffled = Log(lg.id, tuple(lg.events[i] for i in perm))
    g = build_graph(lg)
    assert build_graph(shuffled) == g
    assert g.edges == _brute_edges(lg)
    assert len(g.edges) <= sum(len(e.args) for e in lg.events)
    # every node is on some edge by construction; check bipartite sides
    for e, a in g.edges:
        assert e in g.event_nodes and a in g.arg_nodes
