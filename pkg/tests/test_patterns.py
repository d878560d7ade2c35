import itertools

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from logpattern.graph import BehaviorGraph
from logpattern.patterns import Pattern, extract_patterns, pattern_signature, patterns_text


def G(*edges):
    return BehaviorGraph(frozenset(edges))


def brute_force_patterns(graph):
    """Quadratic oracle: compare every argument's adjacency with every other's."""
    args = sorted({a for _, a in graph.edges})
    adj = {a: frozenset(e for e, b in graph.edges if b == a) for a in args}
    groups = []
    assigned = set()
    for a in args:
        if a in assigned:
            continue
        members = [b for b in args if adj[b] == adj[a]]
        assigned.update(members)
        groups.append((tuple(sorted(adj[a])), tuple(sorted(members))))
    return sorted(groups, key=lambda g: (g[0], g[1][0]))


def random_graph(rng, max_events=8, max_args=12):
    n_e = int(rng.integers(1, max_events + 1))
    n_a = int(rng.integers(0, max_args + 1))
    edges = set()
    for a in range(n_a):
        # every argument node needs at least one edge
        k = int(rng.integers(1, n_e + 1))
        for e in rng.choice(n_e, size=k, replace=False):
            edges.add((f"e{e}", f"a{a}"))
    return BehaviorGraph(frozenset(edges))


def test_identical_adjacency():
    pats = extract_patterns(G(("X", "p"), ("Y", "p"), ("X", "q"), ("Y", "q")))
    assert pats == [Pattern(("X", "Y"), ("p", "q"))]


def test_differing_adjacency():
    pats = extract_patterns(G(("X", "p"), ("Y", "p"), ("X", "q")))
    assert pats == [Pattern(("X",), ("q",)), Pattern(("X", "Y"), ("p",))]


def test_empty_graph():
    assert extract_patterns(G()) == []


@given(st.integers(0, 2**32 - 1))
def test_matches_brute_force(seed):
    g = random_graph(np.random.default_rng(seed))
    pats = extract_patterns(g)
    assert [(p.event_types, p.arguments) for p in pats] == brute_force_patterns(g)


@given(st.integers(0, 2**32 - 1))
def test_partition_and_exactness(seed):
    g = random_graph(np.random.default_rng(seed))
    pats = extract_patterns(g)
    adj = g.adjacency()
    seen = [a for p in pats for a in p.arguments]
    assert len(seen) == len(set(seen))
    assert set(seen) == g.arg_nodes
    for p in pats:
        assert p.event_types and p.arguments
        for a in p.arguments:
            assert adj[a] == set(p.event_types)
    assert extract_patterns(g) == pats


def test_signature():
    assert pattern_signature(Pattern(("Y", "X"), ("p",))) == "X|Y"
    assert pattern_signature(Pattern(("X",), ("p",))) == "X"
    assert pattern_signature(Pattern(("X", "Y"), ("p",))) == pattern_signature(Pattern(("Y", "X"), ("q", "r")))


def test_signature_is_injective_with_reserved_chars():
    names = ["a", "b", "a|b", "a\\", "\\|b"]
    sigs = {}
    for r in range(1, 3):
        for combo in itertools.combinations(names, r):
            sig = pattern_signature(Pattern(tuple(sorted(combo)), ("x",)))
            assert sig not in sigs, (combo, sigs.get(sig))
            sigs[sig] = combo


def test_patterns_text():
    pats = extract_patterns(G(("X", "p"), ("Y", "p"), ("X", "q")))
    assert patterns_text(pats) == "X\tq\nX,Y\tp\n"
