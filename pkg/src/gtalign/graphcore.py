"""Attributed graphs, shortest paths and k-hop sampling."""

from __future__ import annotations

import shlex
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Edge = tuple[int, int]
# center of a sample: a node, an ordered node pair, or None for the whole graph
Center = int | tuple[int, int] | None


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    directed: bool
    adjacency: np.ndarray
    node_texts: tuple[str, ...]
    edge_descriptions: dict[Edge, str]
    node_features: np.ndarray | None = None
    edge_features: np.ndarray | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "node_texts", tuple(self.node_texts))
        n = self.num_nodes
        if n < 1:
            raise ValueError("graph needs at least one node")
        if adj.shape != (n, n):
            raise ValueError(f"adjacency shape {adj.shape} does not match {n} nodes")
        if adj.diagonal().any():
            raise ValueError("self-loops are not allowed")
        if not self.directed and not np.array_equal(adj, adj.T):
            raise ValueError("undirected graph needs a symmetric adjacency")
        if len(self.node_texts) != n:
            raise ValueError(f"expected {n} node texts, got {len(self.node_texts)}")
        for i, j in zip(*np.nonzero(adj)):
            if (int(i), int(j)) not in self.edge_descriptions:
                raise ValueError(f"edge ({i},{j}) has no description")

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Sequence[Edge],
        directed: bool = False,
        node_texts: Sequence[str] | None = None,
        edge_descriptions: dict[Edge, str] | None = None,
        **kwargs,
    ) -> "Graph":
        adj = np.zeros((num_nodes, num_nodes), dtype=bool)
        desc = dict(edge_descriptions or {})
        for i, j in edges:
            adj[i, j] = True
            desc.setdefault((i, j), "edge")
            if not directed:
                adj[j, i] = True
                desc.setdefault((j, i), desc[(i, j)])
        if node_texts is None:
            node_texts = ["node"] * num_nodes
        return cls(num_nodes, directed, adj, tuple(node_texts), desc, **kwargs)

    def edges(self) -> list[Edge]:
        """Edges as stored; undirected graphs list each edge once with i < j."""
        ii, jj = np.nonzero(self.adjacency)
        return [(int(i), int(j)) for i, j in zip(ii, jj) if self.directed or i < j]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def num_edges(self) -> int:
        return len(self.edges())

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel so that old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        adj = self.adjacency[np.ix_(inv, inv)]
        texts = [self.node_texts[k] for k in inv]
        desc = {(int(perm[i]), int(perm[j])): d for (i, j), d in self.edge_descriptions.items()}
        feats = None if self.node_features is None else self.node_features[inv]
        return Graph(self.num_nodes, self.directed, adj, tuple(texts), desc, feats, self.edge_features)

    def with_node_texts(self, texts: Sequence[str]) -> "Graph":
        return Graph(
            self.num_nodes, self.directed, self.adjacency, tuple(texts),
            self.edge_descriptions, self.node_features, self.edge_features,
        )


@dataclass(frozen=True, eq=False)
class ShortestPathTable:
    dist: np.ndarray
    unreachable_sentinel: int

    def reachable(self, i: int, j: int) -> bool:
        return int(self.dist[i, j]) != self.unreachable_sentinel


def bfs_all_pairs(graph: Graph) -> ShortestPathTable:
    """Hop distances from a BFS per source; unreachable pairs get ``num_nodes``."""
    n = graph.num_nodes
    sentinel = n  # no simple path has n edges
    dist = np.full((n, n), sentinel, dtype=np.int64)
    nbrs = [graph.neighbors(i) for i in range(n)]
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            du = dist[s, u] + 1
            for v in nbrs[u]:
                if dist[s, v] == sentinel:
                    dist[s, v] = du
                    queue.append(v)
    return ShortestPathTable(dist, sentinel)


def shortest_path_edges(graph: Graph, spd: ShortestPathTable, i: int, j: int) -> list[Edge]:
    """Edges of the shortest i->j path with the lexicographically smallest node sequence.

    Walks greedily from ``i``, always stepping to the lowest-id neighbour that is
    one hop closer to ``j``; every prefix of that walk is minimal, so the whole
    sequence is.
    """
    if i == j:
        raise ValueError("shortest_path_edges needs distinct endpoints")
    if not spd.reachable(i, j):
        return []
    path = []
    u = i
    while u != j:
        remaining = spd.dist[u, j]
        for v in graph.neighbors(u):
            if spd.dist[v, j] == remaining - 1:
                path.append((u, int(v)))
                u = int(v)
                break
    return path


def text_ordered_paths(graph: Graph, spd: ShortestPathTable) -> dict[Edge, list[Edge]]:
    """One shortest path per reachable ordered pair, chosen without looking at node ids.

    Among all shortest i->j paths pick the one whose sequence of edge
    descriptions is lexicographically smallest; remaining ties go to the
    smallest node sequence. Descriptions move with their edges under
    relabelling, so the chosen descriptions do not depend on node numbering.
    Equal-length prefixes compare like their extensions, hence the layer DP.
    """
    n = graph.num_nodes
    desc = graph.edge_descriptions
    preds = [graph.adjacency[:, j] for j in range(n)]
    out: dict[Edge, list[Edge]] = {}
    for i in range(n):
        best = {i: ((), (i,), [])}
        for j in sorted(range(n), key=lambda v: spd.dist[i, v]):
            if j == i or not spd.reachable(i, j):
                continue
            k = spd.dist[i, j]
            cands = []
            for p in np.flatnonzero(preds[j]):
                p = int(p)
                if spd.dist[i, p] == k - 1:
                    d, nodes, edges = best[p]
                    cands.append(((*d, desc.get((p, j), "")), (*nodes, j), [*edges, (p, j)]))
            best[j] = min(cands, key=lambda c: (c[0], c[1]))
            out[(i, j)] = best[j][2]
    return out


@dataclass(frozen=True, eq=False)
class SubgraphSample:
    """Induced subgraph around a center; ``graph`` is relabelled 0..n-1."""

    nodes: tuple[int, ...]
    graph: Graph
    spd: ShortestPathTable
    center: Center
    hop_radius: int

    @property
    def adjacency(self) -> np.ndarray:
        return self.graph.adjacency

    @property
    def n(self) -> int:
        return len(self.nodes)

    def center_nodes(self) -> tuple[int, ...]:
        """Local indices of the center node(s)."""
        if self.center is None:
            return ()
        if isinstance(self.center, tuple):
            return self.center
        return (self.center,)

    def permute(self, perm: Sequence[int]) -> "SubgraphSample":
        """Reorder local nodes: old local ``i`` becomes ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        g = self.graph.permute(perm)
        spd = ShortestPathTable(self.spd.dist[np.ix_(inv, inv)], self.spd.unreachable_sentinel)
        if self.center is None:
            c = None
        elif isinstance(self.center, tuple):
            c = tuple(int(perm[k]) for k in self.center)
        else:
            c = int(perm[self.center])
        return SubgraphSample(tuple(self.nodes[k] for k in inv), g, spd, c, self.hop_radius)


def induced_subgraph(graph: Graph, nodes: Sequence[int]) -> Graph:
    nodes = list(nodes)
    local = {v: k for k, v in enumerate(nodes)}
    adj = graph.adjacency[np.ix_(nodes, nodes)]
    desc = {
        (local[i], local[j]): d
        for (i, j), d in graph.edge_descriptions.items()
        if i in local and j in local
    }
    feats = None if graph.node_features is None else graph.node_features[nodes]
    return Graph(len(nodes), graph.directed, adj, tuple(graph.node_texts[v] for v in nodes), desc, feats)


def _bfs_layers(graph: Graph, sources: Sequence[int], radius: int) -> dict[int, int]:
    depth = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if depth[u] == radius:
            continue
        for v in graph.neighbors(u):
            v = int(v)
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


def extract_khop(graph: Graph, center: Center, hop_radius: int, max_nodes: int | None = None) -> SubgraphSample:
    """Nodes within ``hop_radius`` of the center (either endpoint for a pair).

    Truncation to ``max_nodes`` keeps the closest BFS layers first and lower
    node ids within a layer.  Center nodes are listed first in the result and
    keep their role in the returned sample's ``center``.
    """
    if hop_radius < 0:
        raise ValueError("hop_radius must be non-negative")
    if center is None:
        sources = list(range(graph.num_nodes))
    elif isinstance(center, tuple):
        sources = list(dict.fromkeys(int(c) for c in center))
    else:
        sources = [int(center)]
    for s in sources:
        if not 0 <= s < graph.num_nodes:
            raise ValueError(f"center node {s} out of range")
    depth = _bfs_layers(graph, sources, hop_radius)
    order = sorted(depth, key=lambda v: (depth[v], v))
    if max_nodes is not None:
        order = order[:max(max_nodes, len(sources))]
    sub = induced_subgraph(graph, order)
    local = {v: k for k, v in enumerate(order)}
    if center is None:
        c: Center = None
    elif isinstance(center, tuple):
        c = (local[int(center[0])], local[int(center[1])])
    else:
        c = local[int(center)]
    return SubgraphSample(tuple(order), sub, bfs_all_pairs(sub), c, hop_radius)


def whole_graph_sample(graph: Graph, center: Center = None) -> SubgraphSample:
    nodes = tuple(range(graph.num_nodes))
    return SubgraphSample(nodes, graph, bfs_all_pairs(graph), center, graph.num_nodes)


def num_components(graph: Graph) -> int:
    """Weakly connected components."""
    adj = graph.adjacency | graph.adjacency.T
    seen = np.zeros(graph.num_nodes, dtype=bool)
    count = 0
    for s in range(graph.num_nodes):
        if seen[s]:
            continue
        count += 1
        seen[s] = True
        stack = [s]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u] & ~seen):
                seen[v] = True
                stack.append(v)
    return count


# -- canonical labelling ------------------------------------------------------


def _refine(adj: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Equitable refinement; colour ids are assigned in a label-free order."""
    n = len(colors)
    while True:
        k = colors.max() + 1
        onehot = np.zeros((n, k), dtype=np.int64)
        onehot[np.arange(n), colors] = 1
        out_counts = adj.astype(np.int64) @ onehot
        in_counts = adj.T.astype(np.int64) @ onehot
        sigs = [(int(colors[v]), tuple(out_counts[v]), tuple(in_counts[v])) for v in range(n)]
        # higher neighbour counts sort first so that degree order stays descending
        keyed = sorted(set(sigs), key=lambda s: (s[0], tuple(-c for c in s[1]), tuple(-c for c in s[2])))
        rank = {s: r for r, s in enumerate(keyed)}
        new = np.array([rank[s] for s in sigs], dtype=np.int64)
        if new.max() == colors.max():
            return new
        colors = new


def _twins(adj: np.ndarray, u: int, v: int) -> bool:
    ru, rv = adj[u].copy(), adj[v].copy()
    cu, cv = adj[:, u].copy(), adj[:, v].copy()
    for arr in (ru, rv, cu, cv):
        arr[[u, v]] = False
    return np.array_equal(ru, rv) and np.array_equal(cu, cv) and adj[u, v] == adj[v, u]


def canonical_order(graph: Graph, max_leaves: int = 200_000) -> list[int]:
    """A relabelling-invariant node order: degree-descending, ties resolved canonically.

    Returns ``order`` with ``order[k]`` the node placed at canonical position k.
    Ties left by colour refinement are broken by individualisation, keeping the
    branch whose relabelled edge list is lexicographically smallest.  Twin nodes
    are interchangeable, so only one of each twin class is branched on.
    """
    adj = graph.adjacency
    n = graph.num_nodes
    deg = adj.sum(axis=1) + (adj.sum(axis=0) if graph.directed else 0)
    _, init = np.unique(-deg, return_inverse=True)
    best: list = [None, None]
    leaves = [0]

    def search(colors: np.ndarray):
        colors = _refine(adj, colors)
        k = colors.max() + 1
        if k == n:
            leaves[0] += 1
            if leaves[0] > max_leaves:
                raise RuntimeError("canonical_order: search budget exhausted")
            order = np.argsort(colors)
            pos = colors
            cert = sorted(
                (int(pos[i]), int(pos[j])) if graph.directed else tuple(sorted((int(pos[i]), int(pos[j]))))
                for i, j in graph.edges()
            )
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, [int(v) for v in order]
            return
        sizes = np.bincount(colors)
        cell = int(np.flatnonzero(sizes > 1)[0])
        members = [int(v) for v in np.flatnonzero(colors == cell)]
        reps: list[int] = []
        for v in members:
            if not any(_twins(adj, v, r) for r in reps):
                reps.append(v)
        for v in reps:
            # v becomes its own cell just ahead of the rest of its cell
            nxt = np.where(colors > cell, colors + 1, colors)
            nxt = np.where((colors == cell) & (np.arange(n) != v), cell + 1, nxt)
            search(nxt)

    search(init.astype(np.int64))
    return best[1]


# -- text serialisation ---------------------------------------------------------


def dumps_graph(graph: Graph) -> str:
    lines = [f"{graph.num_nodes} {int(graph.directed)}"]
    for i, j in graph.edges():
        lines.append(f"edge {i} {j} {_quote(graph.edge_descriptions[(i, j)])}")
    for i, text in enumerate(graph.node_texts):
        lines.append(f"node {i} {_quote(text)}")
    return "\n".join(lines) + "\n"


def loads_graph(text: str) -> Graph:
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty graph text")
    header = rows[0].split()
    if len(header) != 2:
        raise ValueError(f"bad header {rows[0]!r}")
    n, directed = int(header[0]), bool(int(header[1]))
    edges, desc, texts = [], {}, ["" for _ in range(n)]
    for ln in rows[1:]:
        parts = shlex.split(ln)
        if parts[0] == "edge" and len(parts) == 4:
            i, j = int(parts[1]), int(parts[2])
            edges.append((i, j))
            desc[(i, j)] = parts[3]
        elif parts[0] == "node" and len(parts) == 3:
            texts[int(parts[1])] = parts[2]
        else:
            raise ValueError(f"bad graph line {ln!r}")
    return Graph.from_edges(n, edges, directed, texts, desc)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dict(graph: Graph) -> dict:
    edges = [[i, j, graph.edge_descriptions[(i, j)]] for i, j in graph.edges()]
    if not graph.directed:
        # keep per-direction descriptions when they differ
        edges = [e + [graph.edge_descriptions[(e[1], e[0])]] for e in edges]
    return {
        "num_nodes": graph.num_nodes,
        "directed": graph.directed,
        "node_texts": list(graph.node_texts),
        "edges": edges,
    }


def graph_from_dict(d: dict) -> Graph:
    n = int(d["num_nodes"])
    directed = bool(d["directed"])
    desc: dict[Edge, str] = {}
    edges = []
    for e in d["edges"]:
        i, j = int(e[0]), int(e[1])
        edges.append((i, j))
        desc[(i, j)] = e[2]
        if not directed:
            desc[(j, i)] = e[3] if len(e) > 3 else e[2]
    return Graph.from_edges(n, edges, directed, d["node_texts"], desc)
