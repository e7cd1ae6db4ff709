import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtalign.graphcore import (
    Graph,
    ShortestPathTable,
    bfs_all_pairs,
    canonical_order,
    dumps_graph,
    extract_khop,
    graph_from_dict,
    graph_to_dict,
    loads_graph,
    num_components,
    shortest_path_edges,
    text_ordered_paths,
)

from oracles import INF, components, floyd_warshall


def gnp(n, p, seed):
    rng = np.random.default_rng(seed)
    up = np.triu(rng.random((n, n)) < p, 1)
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(up))]
    return Graph.from_edges(n, edges, node_texts=[f"node {k}" for k in range(n)])


def path_graph(n):
    return Graph.from_edges(n, [(k, k + 1) for k in range(n - 1)])


@st.composite
def graphs(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    return Graph.from_edges(n, chosen)


# -- Graph invariants --------------------------------------------------------


def test_graph_rejects_self_loops_and_asymmetry():
    with pytest.raises(ValueError, match="self-loop"):
        Graph(2, False, np.eye(2, dtype=bool), ("a", "b"), {(0, 0): "x", (1, 1): "x"})
    adj = np.array([[0, 1], [0, 0]], dtype=bool)
    with pytest.raises(ValueError, match="symmetric"):
        Graph(2, False, adj, ("a", "b"), {(0, 1): "x"})
    with pytest.raises(ValueError, match="description"):
        Graph(2, True, adj, ("a", "b"), {})
    with pytest.raises(ValueError):
        Graph(0, False, np.zeros((0, 0), dtype=bool), (), {})


def test_directed_graph_allowed():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], directed=True)
    d = bfs_all_pairs(g).dist
    assert d[0, 2] == 2 and d[2, 0] == 3  # sentinel = N


# -- shortest paths ----------------------------------------------------------


def test_triangle_distances():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    d = bfs_all_pairs(g).dist
    assert np.array_equal(d, 1 - np.eye(3, dtype=int))


def test_path_distance():
    assert bfs_all_pairs(path_graph(3)).dist[0, 2] == 2


def test_bfs_matches_floyd_warshall_on_30_graphs():
    for seed in range(30):
        n = 2 + seed % 11
        g = gnp(n, 0.3, seed)
        spd = bfs_all_pairs(g)
        fw = floyd_warshall(g.adjacency)
        expect = np.where(fw >= INF, spd.unreachable_sentinel, fw)
        assert np.array_equal(spd.dist, expect)


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_shortest_path_table_invariants(g):
    spd = bfs_all_pairs(g)
    d = spd.dist
    n = g.num_nodes
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    assert spd.unreachable_sentinel > d[d != spd.unreachable_sentinel].max(initial=0)
    for i, j, k in itertools.product(range(n), repeat=3):
        if spd.reachable(i, k) and spd.reachable(k, j):
            assert d[i, j] <= d[i, k] + d[k, j]


def test_shortest_path_edges_examples():
    g = path_graph(3)
    spd = bfs_all_pairs(g)
    assert shortest_path_edges(g, spd, 0, 1) == [(0, 1)]
    assert shortest_path_edges(g, spd, 0, 2) == [(0, 1), (1, 2)]
    diamond = Graph.from_edges(4, [(0, 2), (2, 3), (0, 1), (1, 3)])
    assert shortest_path_edges(diamond, bfs_all_pairs(diamond), 0, 3) == [(0, 1), (1, 3)]
    two = Graph.from_edges(3, [(0, 1)])
    assert shortest_path_edges(two, bfs_all_pairs(two), 0, 2) == []
    with pytest.raises(ValueError):
        shortest_path_edges(g, spd, 1, 1)


def _all_shortest_paths(adj, i, j, dist):
    out = []

    def walk(path):
        u = path[-1]
        if u == j:
            out.append(tuple(path))
            return
        for v in np.flatnonzero(adj[u]):
            if dist[v, j] == dist[u, j] - 1:
                walk(path + [int(v)])

    walk([i])
    return out


@settings(max_examples=40, deadline=None)
@given(graphs(max_n=9))
def test_tie_break_is_lexicographically_smallest_node_sequence(g):
    spd = bfs_all_pairs(g)
    for i, j in itertools.permutations(range(g.num_nodes), 2):
        got = shortest_path_edges(g, spd, i, j)
        if not spd.reachable(i, j):
            assert got == []
            continue
        assert len(got) == spd.dist[i, j]
        seq = (i,) + tuple(e[1] for e in got)
        assert seq == min(_all_shortest_paths(g.adjacency, i, j, spd.dist))


@st.composite
def described_graphs(draw):
    g = draw(graphs(max_n=8))
    words = ("alpha", "beta", "gamma")
    desc = {}
    for i, j in g.edges():
        if i < j:
            w = draw(st.sampled_from(words))
            desc[(i, j)] = desc[(j, i)] = w
    return Graph.from_edges(g.num_nodes, [e for e in desc if e[0] < e[1]], edge_descriptions=desc)


@settings(max_examples=40, deadline=None)
@given(described_graphs(), st.randoms(use_true_random=False))
def test_text_ordered_paths_match_oracle_and_ignore_labels(g, rnd):
    spd = bfs_all_pairs(g)
    got = text_ordered_paths(g, spd)
    d = g.edge_descriptions

    def texts(seq):
        return tuple(d[(a, b)] for a, b in zip(seq, seq[1:]))

    for i, j in itertools.permutations(range(g.num_nodes), 2):
        if not spd.reachable(i, j):
            assert (i, j) not in got
            continue
        want = min(_all_shortest_paths(g.adjacency, i, j, spd.dist), key=lambda s: (texts(s), s))
        assert got[(i, j)] == list(zip(want, want[1:]))
    perm = list(range(g.num_nodes))
    rnd.shuffle(perm)
    moved = text_ordered_paths(g.permute(perm), bfs_all_pairs(g.permute(perm)))
    for (i, j), path in got.items():
        assert [d[e] for e in path] == [g.permute(perm).edge_descriptions[e] for e in moved[(perm[i], perm[j])]]


# -- k-hop subgraphs ---------------------------------------------------------


def test_khop_star_and_path():
    star = Graph.from_edges(6, [(0, k) for k in range(1, 6)])
    assert sorted(extract_khop(star, 0, 1).nodes) == list(range(6))
    s = extract_khop(path_graph(5), 0, 2)
    assert set(s.nodes) == {0, 1, 2}


def test_khop_matches_adjacency_power_reachability():
    g = gnp(20, 0.15, 4)
    s = extract_khop(g, 7, 2)
    a = g.adjacency.astype(np.int64) + np.eye(20, dtype=np.int64)
    within = np.linalg.matrix_power(a, 2)[7] > 0
    assert set(s.nodes) == set(np.flatnonzero(within).tolist())
    assert np.array_equal(s.adjacency, g.adjacency[np.ix_(s.nodes, s.nodes)])
    assert np.array_equal(s.spd.dist, bfs_all_pairs(s.graph).dist)


def test_khop_pair_center_and_truncation():
    g = path_graph(8)
    s = extract_khop(g, (3, 5), 1)
    assert set(s.nodes) == {2, 3, 4, 5, 6}
    assert s.nodes[:2] == (3, 5) and s.center == (0, 1)
    t = extract_khop(g, 3, 3, max_nodes=4)
    # layer 0: 3 ; layer 1: 2, 4 ; layer 2: 1, 5 -> lowest id wins the last slot
    assert t.nodes == (3, 2, 4, 1)


def test_khop_rejects_bad_arguments():
    with pytest.raises(ValueError):
        extract_khop(path_graph(3), 0, -1)
    with pytest.raises(ValueError):
        extract_khop(path_graph(3), 5, 1)


def _canonical_edges(sample):
    order = canonical_order(sample.graph)
    pos = {v: k for k, v in enumerate(order)}
    return sorted(tuple(sorted((pos[i], pos[j]))) for i, j in sample.graph.edges())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(6, 14))
def test_khop_invariant_to_relabeling(seed, n):
    g = gnp(n, 0.25, seed)
    perm = np.random.default_rng(seed).permutation(n)
    c = seed % n
    a = extract_khop(g, c, 2)
    b = extract_khop(g.permute(perm), int(perm[c]), 2)
    assert _canonical_edges(a) == _canonical_edges(b)


# -- canonical order, components, serialisation --------------------------------


@settings(max_examples=60, deadline=None)
@given(graphs(max_n=10), st.randoms(use_true_random=False))
def test_canonical_order_is_relabeling_invariant(g, rnd):
    perm = list(range(g.num_nodes))
    rnd.shuffle(perm)

    def cert(graph):
        order = canonical_order(graph)
        pos = {v: k for k, v in enumerate(order)}
        return sorted(tuple(sorted((pos[i], pos[j]))) for i, j in graph.edges())

    assert cert(g) == cert(g.permute(perm))


def test_canonical_order_puts_high_degree_first():
    star = Graph.from_edges(5, [(3, k) for k in range(5) if k != 3])
    assert canonical_order(star)[0] == 3


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_components_match_union_find(g):
    uf = components(g.adjacency)
    assert num_components(g) == len({uf.find(v) for v in range(g.num_nodes)})


def test_text_format_round_trip():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], node_texts=["a b", 'say "hi"', "c"], edge_descriptions={(0, 1): "x y", (1, 2): "z"})
    text = dumps_graph(g)
    assert text.splitlines()[0] == "3 0"
    assert 'edge 0 1 "x y"' in text
    h = loads_graph(text)
    assert np.array_equal(h.adjacency, g.adjacency)
    assert h.node_texts == g.node_texts
    assert h.edge_descriptions == g.edge_descriptions
    with pytest.raises(ValueError):
        loads_graph("3 0\nbogus line\n")


def test_dict_round_trip_keeps_per_direction_descriptions():
    g = Graph(2, False, np.array([[0, 1], [1, 0]], dtype=bool), ("a", "b"), {(0, 1): "ab", (1, 0): "ba"})
    h = graph_from_dict(graph_to_dict(g))
    assert h.edge_descriptions == g.edge_descriptions


def test_permute_moves_nodes():
    g = Graph.from_edges(3, [(0, 1)], node_texts=["a", "b", "c"])
    h = g.permute([2, 0, 1])
    assert h.node_texts == ("b", "c", "a")
    assert h.adjacency[2, 0] and not h.adjacency[0, 1]


def test_sentinel_exceeds_every_realizable_distance():
    g = path_graph(6)
    spd = bfs_all_pairs(g)
    assert isinstance(spd, ShortestPathTable)
    assert spd.unreachable_sentinel > spd.dist.max() - 1
