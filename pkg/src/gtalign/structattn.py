"""Structure-aware graph-text attention.

Token layout is always ``[graph (n) ; text (l) ; alignment (m)]``.  Graph tokens
share one learnable rotary position so rotations cancel inside the graph block;
structure comes back through additive shortest-path-distance and edge-path
biases that only touch graph-graph logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import numerics as ad
from .numerics import Tensor
from .graphcore import SubgraphSample, ShortestPathTable, text_ordered_paths
from .tasktext import TextEmbedder

GRAPH, TEXT, ALIGN = "g", "t", "a"


# -- rotary positions -----------------------------------------------------------


def rope_freqs(head_dim: int, base: float = 10000.0) -> np.ndarray:
    if head_dim % 2:
        raise ValueError(f"rotary head dim must be even, got {head_dim}")
    half = head_dim // 2
    return base ** (-np.arange(half) / half)


def rotate(vec: np.ndarray, pos: float, freqs: np.ndarray) -> np.ndarray:
    """Rotate pairs (i, i + d/2) of ``vec`` by ``pos * freqs[i]``."""
    d = vec.shape[-1]
    if d % 2:
        raise ValueError(f"rotary vectors need an even dimension, got {d}")
    h = d // 2
    ang = pos * np.asarray(freqs)
    c, s = np.cos(ang), np.sin(ang)
    x1, x2 = vec[..., :h], vec[..., h:]
    return np.concatenate([x1 * c - x2 * s, x1 * s + x2 * c], axis=-1)


def rope_score(q: np.ndarray, k: np.ndarray, offset: float, freqs: np.ndarray) -> float:
    """<R(p_q) q, R(p_k) k> for any positions with p_q - p_k = offset."""
    if q.shape[-1] % 2:
        raise ValueError(f"rotary vectors need an even dimension, got {q.shape[-1]}")
    if offset == 0:
        return float(q @ k)
    return float(rotate(q, offset, freqs) @ k)


@dataclass
class PositionAssignment:
    n: int
    l: int
    m: int
    graph_pos: Tensor
    text_base: float = 1.0

    @property
    def modality(self) -> list[str]:
        return [GRAPH] * self.n + [TEXT] * self.l + [ALIGN] * self.m

    def fixed_values(self) -> np.ndarray:
        """Positions of the text and alignment tokens (they run on consecutively)."""
        return self.text_base + np.arange(self.l + self.m, dtype=np.float64)

    def values(self) -> Tensor:
        rest = self.fixed_values().astype(self.graph_pos.dtype)
        return ad.concat([ad.gather(self.graph_pos, np.zeros(self.n, dtype=np.int64)), rest])

    def value_array(self) -> np.ndarray:
        return self.values().data


def assign_positions(n: int, l: int, m: int, graph_pos: Tensor, text_base: float = 1.0) -> PositionAssignment:
    if n < 1 or l < 0 or m < 0:
        raise ValueError(f"invalid segment sizes n={n}, l={l}, m={m}")
    return PositionAssignment(n, l, m, graph_pos, text_base)


# -- structural biases -----------------------------------------------------------


@dataclass
class BiasTables:
    """Distance lookup (one scalar per head) and the edge-description MLP."""

    distance_table: Tensor  # (max_dist_bucket + 2, heads)
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    max_dist_bucket: int

    @classmethod
    def init(cls, d_h: int, d_mlp: int, heads: int, max_dist_bucket: int, rng: np.random.Generator, dtype=np.float64):
        def p(a, name):
            return Tensor(np.asarray(a, dtype=dtype), requires_grad=True, name=name)

        return cls(
            distance_table=p(np.zeros((max_dist_bucket + 2, heads)), "dist_table"),
            w1=p(rng.standard_normal((d_h, d_mlp)) / np.sqrt(d_h), "edge_mlp.w1"),
            b1=p(np.zeros(d_mlp), "edge_mlp.b1"),
            w2=p(rng.standard_normal((d_mlp, heads)) * 0.02, "edge_mlp.w2"),
            b2=p(np.zeros(heads), "edge_mlp.b2"),
            max_dist_bucket=max_dist_bucket,
        )

    @property
    def heads(self) -> int:
        return self.distance_table.shape[1]

    def edge_mlp(self, emb) -> Tensor:
        h = ad.gelu(ad.add(ad.matmul(emb, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "dist_table": self.distance_table,
            "edge_mlp.w1": self.w1,
            "edge_mlp.b1": self.b1,
            "edge_mlp.w2": self.w2,
            "edge_mlp.b2": self.b2,
        }


def distance_buckets(spd: ShortestPathTable, max_dist_bucket: int) -> np.ndarray:
    """Row index into the distance table; the last row is reserved for unreachable."""
    idx = np.minimum(spd.dist, max_dist_bucket)
    return np.where(spd.dist == spd.unreachable_sentinel, max_dist_bucket + 1, idx)


def distance_bias(spd: ShortestPathTable, tables: BiasTables) -> Tensor:
    """(n, n, heads) lookup of the bucketed shortest-path distance."""
    return ad.gather(tables.distance_table, distance_buckets(spd, tables.max_dist_bucket))


@dataclass(frozen=True)
class EdgePathPlan:
    """Everything the edge bias needs that does not depend on parameters.

    ``averaging`` is (n*n, U): row (i, j) holds 1/|SP(i,j)| at the columns of
    the path's edge descriptions, so bias = averaging @ mlp(embeddings).
    """

    n: int
    embeddings: np.ndarray  # (U, d_h), one row per distinct description on some path
    averaging: np.ndarray


def plan_edge_paths(sample: SubgraphSample, embedder: TextEmbedder) -> EdgePathPlan:
    g = sample.graph
    n = g.num_nodes
    descs: dict[str, int] = {}
    entries: list[tuple[int, int, float]] = []
    # path choice keyed on edge text, not node ids, so the bias is relabelling-invariant
    for (i, j), path in sorted(text_ordered_paths(g, sample.spd).items()):
        for e in path:
            col = descs.setdefault(g.edge_descriptions[e], len(descs))
            entries.append((i * n + j, col, 1.0 / len(path)))
    emb = np.array([embedder.embed(t) for t in descs]).reshape(len(descs), embedder.dim)
    avg = np.zeros((n * n, len(descs)))
    for row, col, w in entries:
        avg[row, col] += w
    return EdgePathPlan(n, emb, avg)


def edge_bias(sample: SubgraphSample, embedder: TextEmbedder, tables: BiasTables, plan: EdgePathPlan | None = None) -> Tensor:
    """(n, n, heads) mean of MLP(embed(description)) over the edges on SP(i, j).

    Zero on the diagonal and for unreachable pairs.
    """
    if plan is None:
        plan = plan_edge_paths(sample, embedder)
    n, heads = plan.n, tables.heads
    dtype = tables.w1.dtype
    if plan.embeddings.shape[0] == 0:
        return Tensor(np.zeros((n, n, heads), dtype=dtype))
    per_edge = tables.edge_mlp(Tensor(plan.embeddings.astype(dtype)))
    return ad.reshape(ad.matmul(Tensor(plan.averaging.astype(dtype)), per_edge), (n, n, heads))


# -- masking --------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    n: int
    l: int
    m: int
    allowed: np.ndarray  # (T, T) rows are queries, columns keys

    @property
    def bias(self) -> np.ndarray:
        return np.where(self.allowed, 0.0, -np.inf)


def build_mask(n: int, l: int, m: int) -> MaskSpec:
    """Directional mask over ``[graph ; text ; alignment]``, rows are queries.

    graph -> graph and graph -> text allowed, graph -> alignment blocked,
    text -> graph blocked, text -> text causal, alignment -> every earlier
    token (and itself).
    """
    T = n + l + m
    idx = np.arange(T)
    q, k = idx[:, None], idx[None, :]
    q_graph, k_graph = q < n, k < n
    k_text = (k >= n) & (k < n + l)
    allowed = np.where(q_graph, k_graph | k_text, (k <= q) & ~k_graph)
    # alignment queries see the graph too
    allowed |= (q >= n + l) & k_graph
    return MaskSpec(n, l, m, allowed)


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


# -- attention ------------------------------------------------------------------


class Adapter(Protocol):
    def apply(self, x: Tensor) -> Tensor: ...


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int
    freqs: np.ndarray | None = None
    adapters: Mapping[str, Adapter] | None = None

    def __post_init__(self):
        d_k = self.wq.shape[1]
        if d_k % self.heads or (d_k // self.heads) % 2:
            raise ValueError(f"d_k={d_k} must split into {self.heads} heads of even size")

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1] // self.heads

    def project(self, x: Tensor, which: str) -> Tensor:
        out = ad.matmul(x, getattr(self, "w" + which))
        if self.adapters and which in self.adapters:
            out = ad.add(out, self.adapters[which].apply(x))
        return out


def multihead_attention(
    x: Tensor,
    params: AttentionParams,
    allowed: np.ndarray,
    positions: Tensor | None = None,
    bias: Tensor | None = None,
    return_weights: bool = False,
):
    """Biased softmax attention over rows of ``x`` (T, d_h).

    ``bias`` is (heads, T, T) and added before masking.  Forbidden keys get
    exactly zero weight.
    """
    T = x.shape[0]
    H, hd = params.heads, params.head_dim
    q = ad.reshape(params.project(x, "q"), (T, H, hd))
    k = ad.reshape(params.project(x, "k"), (T, H, hd))
    v = ad.reshape(params.project(x, "v"), (T, H, hd))
    if positions is not None:
        q = ad.rotary(q, positions, params.freqs)
        k = ad.rotary(k, positions, params.freqs)
    scores = ad.scale(ad.matmul(ad.transpose(q, (1, 0, 2)), ad.transpose(k, (1, 2, 0))), 1.0 / np.sqrt(hd))
    if bias is not None:
        scores = ad.add(scores, bias)
    if not np.all(np.isfinite(scores.data[:, allowed])):
        raise FloatingPointError("non-finite attention logits on allowed entries")
    weights = ad.softmax(ad.masked_fill(scores, allowed))
    ctx = ad.matmul(weights, ad.transpose(v, (1, 0, 2)))
    out = params.project(ad.reshape(ad.transpose(ctx, (1, 0, 2)), (T, H * hd)), "o")
    return (out, weights) if return_weights else out


def graph_block_bias(b_pe: Tensor | None, b_edge: Tensor | None, T: int, heads: int, dtype=np.float64) -> Tensor | None:
    """Lift (n, n, heads) graph biases into the (heads, T, T) logit layout."""
    parts = [b for b in (b_pe, b_edge) if b is not None]
    if not parts:
        return None
    b = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
    n = b.shape[0]
    return ad.embed(ad.transpose(b, (2, 0, 1)), (heads, T, T), (slice(None), slice(0, n), slice(0, n)))


def attend(
    x: Tensor,
    params: AttentionParams,
    positions: PositionAssignment,
    b_pe: Tensor | None,
    b_edge: Tensor | None,
    mask: MaskSpec,
    return_weights: bool = False,
):
    T = x.shape[0]
    if mask.allowed.shape != (T, T):
        raise ValueError(f"mask for {mask.allowed.shape} does not fit {T} tokens")
    bias = graph_block_bias(b_pe, b_edge, T, params.heads)
    return multihead_attention(x, params, mask.allowed, positions.values(), bias, return_weights)
