"""Synthetic labelled graphs for every task family.

Labels are computed exactly from the generated graph.  Each instance draws
from its own generator seeded with ``seed + index`` so instances can be built
in any order (or in parallel) with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphcore import Center, Graph, bfs_all_pairs, num_components

FAMILIES = ("node-cls", "link-pred", "graph-cls", "graph-reg", "CONN", "SPD", "CN", "CYCLE")
BINARY_FAMILIES = ("link-pred", "graph-cls", "CONN")
CLASS_FAMILIES = ("node-cls",) + BINARY_FAMILIES
REGRESSION_FAMILIES = ("graph-reg", "SPD", "CN", "CYCLE")
PAIR_FAMILIES = ("link-pred", "CONN", "SPD", "CN")

COLORS = ("red", "green", "blue", "yellow", "purple", "orange", "pink", "brown")

_MAX_TRIES = 1000


@dataclass(frozen=True)
class GenConfig:
    min_nodes: int = 6
    max_nodes: int = 10
    edge_prob: float = 0.3
    num_classes: int = 3

    def __post_init__(self):
        if self.min_nodes < 1 or self.max_nodes < self.min_nodes:
            raise ValueError(f"bad node range [{self.min_nodes}, {self.max_nodes}]")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError(f"edge_prob {self.edge_prob} outside [0, 1]")
        if not 2 <= self.num_classes <= len(COLORS):
            raise ValueError(f"num_classes must be in [2, {len(COLORS)}]")


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    family: str
    graph: Graph
    center: Center
    label: str | int


def random_graph(rng: np.random.Generator, cfg: GenConfig) -> Graph:
    n = int(rng.integers(cfg.min_nodes, cfg.max_nodes + 1))
    upper = np.triu(rng.random((n, n)) < cfg.edge_prob, k=1)
    adj = upper | upper.T
    colors = rng.integers(0, cfg.num_classes, size=n)
    names = [COLORS[c] for c in colors]
    desc = {(int(i), int(j)): f"link {names[i]} {names[j]}" for i, j in zip(*np.nonzero(adj))}
    feats = np.eye(cfg.num_classes)[colors]
    return Graph(n, False, adj, tuple(f"node color {c}" for c in names), desc, feats)


def majority_color(graph: Graph, v: int) -> int | None:
    """Most frequent colour over v and its neighbours; None on a tie."""
    members = np.concatenate([[v], graph.neighbors(v)])
    counts = graph.node_features[members].sum(axis=0)
    top = np.flatnonzero(counts == counts.max())
    return int(top[0]) if len(top) == 1 else None


def cycle_rank(graph: Graph) -> int:
    return graph.num_edges() - graph.num_nodes + num_components(graph)


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _ordered(rng: np.random.Generator, i: int, j: int) -> tuple[int, int]:
    return (int(i), int(j)) if rng.random() < 0.5 else (int(j), int(i))


def _one(family: str, rng: np.random.Generator, cfg: GenConfig) -> LabeledGraph:
    # binary families fix the class first and resample graphs until it fits
    want = bool(rng.random() < 0.5)
    for _ in range(_MAX_TRIES):
        g = random_graph(rng, cfg)
        n = g.num_nodes
        if family == "node-cls":
            ok = [v for v in range(n) if majority_color(g, v) is not None]
            if not ok:
                continue
            v = _pick(rng, ok)
            return LabeledGraph(family, g, v, COLORS[majority_color(g, v)])
        if family == "graph-reg":
            return LabeledGraph(family, g, None, g.num_edges())
        if family == "CYCLE":
            return LabeledGraph(family, g, None, cycle_rank(g))
        if family == "graph-cls":
            if (cycle_rank(g) > 0) == want:
                return LabeledGraph(family, g, None, "yes" if want else "no")
            continue
        if n < 2:
            continue
        spd = bfs_all_pairs(g)
        iu, ju = np.triu_indices(n, k=1)
        if family == "link-pred":
            edge = g.adjacency[iu, ju]
            cand = np.flatnonzero(edge == want)
            if len(cand) == 0:
                continue
            k = _pick(rng, cand)
            return LabeledGraph(family, g, _ordered(rng, iu[k], ju[k]), "yes" if want else "no")
        reach = spd.dist[iu, ju] != spd.unreachable_sentinel
        if family == "CONN":
            cand = np.flatnonzero(reach == want)
            if len(cand) == 0:
                continue
            k = _pick(rng, cand)
            return LabeledGraph(family, g, _ordered(rng, iu[k], ju[k]), "yes" if want else "no")
        if family == "SPD":
            cand = np.flatnonzero(reach)
            if len(cand) == 0:
                continue
            k = _pick(rng, cand)
            return LabeledGraph(family, g, _ordered(rng, iu[k], ju[k]), int(spd.dist[iu[k], ju[k]]))
        if family == "CN":
            k = int(rng.integers(len(iu)))
            i, j = int(iu[k]), int(ju[k])
            common = int((g.adjacency[i] & g.adjacency[j]).sum())
            return LabeledGraph(family, g, _ordered(rng, i, j), common)
        raise ValueError(f"unknown task family {family!r}")
    raise ValueError(f"{family}: could not generate a labelled graph with {cfg}")


def gen_synthetic(family: str, cfg: GenConfig, seed: int, count: int, start: int = 0) -> list[LabeledGraph]:
    """``count`` labelled graphs; instance k uses seed ``seed + start + k``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown task family {family!r}")
    return [_one(family, np.random.default_rng(seed + start + k), cfg) for k in range(count)]
