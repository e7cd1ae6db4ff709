"""Graph-text encoder producing the alignment-token representation ``H_A``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numerics as ad
from .numerics import Tensor
from .graphcore import SubgraphSample
from .structattn import (
    AttentionParams,
    BiasTables,
    EdgePathPlan,
    MaskSpec,
    PositionAssignment,
    assign_positions,
    attend,
    build_mask,
    distance_bias,
    distance_buckets,
    edge_bias,
    plan_edge_paths,
    rope_freqs,
)
from .tasktext import PromptTemplate, TextEmbedder, Vocab, render_desc


@dataclass(frozen=True)
class EncoderConfig:
    d_h: int = 32
    d_k: int = 32
    heads: int = 4
    layers: int = 2
    num_align: int = 8
    rank: int = 4
    alpha: float = 8.0
    ffn_mult: int = 4
    max_dist_bucket: int = 8
    d_mlp: int = 16
    hash_buckets: int = 512
    text_pos_base: float = 1.0
    rope_base: float = 10000.0
    align_init_std: float = 0.02
    seed: int = 0
    precision: str = "float64"

    @property
    def dtype(self):
        return np.dtype(self.precision)


class LowRankAdapter:
    """``x @ (scale * down @ up)``; ``up`` starts at zero so the delta starts at zero."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float, rng: np.random.Generator, dtype, name: str):
        self.down = Tensor((rng.standard_normal((d_in, rank)) / np.sqrt(d_in)).astype(dtype), True, f"{name}.down")
        self.up = Tensor(np.zeros((rank, d_out), dtype=dtype), True, f"{name}.up")
        self.scale = alpha / rank

    def apply(self, x: Tensor) -> Tensor:
        return ad.scale(ad.matmul(ad.matmul(x, self.down), self.up), self.scale)

    def delta(self) -> np.ndarray:
        return self.scale * self.down.data @ self.up.data


@dataclass
class EncoderLayer:
    attn: AttentionParams
    ln1: tuple[Tensor, Tensor]
    ln2: tuple[Tensor, Tensor]
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def feed_forward(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, self.w1), self.b1)), self.w2), self.b2)


@dataclass
class EncoderStack:
    layers: list[EncoderLayer]
    ln_final: tuple[Tensor, Tensor]
    token_embedding: Tensor
    frozen: bool = True

    def base_parameters(self) -> dict[str, Tensor]:
        out = {"token_embedding": self.token_embedding, "ln_final.g": self.ln_final[0], "ln_final.b": self.ln_final[1]}
        for i, L in enumerate(self.layers):
            p = f"layer{i}."
            for w in "qkvo":
                out[p + "w" + w] = getattr(L.attn, "w" + w)
            out.update({
                p + "ln1.g": L.ln1[0], p + "ln1.b": L.ln1[1],
                p + "ln2.g": L.ln2[0], p + "ln2.b": L.ln2[1],
                p + "ffn.w1": L.w1, p + "ffn.b1": L.b1, p + "ffn.w2": L.w2, p + "ffn.b2": L.b2,
            })
        return out

    def adapter_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, L in enumerate(self.layers):
            for w, a in (L.attn.adapters or {}).items():
                out[f"layer{i}.{w}.down"] = a.down
                out[f"layer{i}.{w}.up"] = a.up
        return out


@dataclass
class AlignmentTokens:
    embeddings: Tensor  # (m, d_h)

    @property
    def count(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class EncoderInput:
    n: int
    l: int
    m: int
    graph_tokens: np.ndarray  # (n, d_h) node-text embeddings
    desc_ids: list[int]
    positions: PositionAssignment
    mask: MaskSpec
    buckets: np.ndarray  # (n, n) distance-table rows
    edge_plan: EdgePathPlan

    @property
    def modality(self) -> list[str]:
        return self.positions.modality


@dataclass
class TaskAwareRepresentation:
    H_A: Tensor

    def __post_init__(self):
        if not np.all(np.isfinite(self.H_A.data)):
            raise FloatingPointError("non-finite task-aware representation")


class GraphTextEncoder:
    def __init__(self, config: EncoderConfig, vocab: Vocab, templates: Mapping[str, PromptTemplate]):
        self.config = config
        self.vocab = vocab
        self.templates = dict(templates)
        cfg = config
        dt = cfg.dtype
        rng = np.random.default_rng([cfg.seed, 1])
        self.embedder = TextEmbedder(cfg.d_h, cfg.hash_buckets, seed=cfg.seed)

        def const(a, name):
            return Tensor(np.asarray(a, dtype=dt), name=name)

        d, dk, dff = cfg.d_h, cfg.d_k, cfg.ffn_mult * cfg.d_h
        freqs = rope_freqs(dk // cfg.heads, cfg.rope_base)
        layers = []
        for i in range(cfg.layers):
            adapters = {
                w: LowRankAdapter(dk if w == "o" else d, d if w == "o" else dk, cfg.rank, cfg.alpha, rng, dt, f"layer{i}.{w}")
                for w in "qkvo"
            }
            attn = AttentionParams(
                const(rng.standard_normal((d, dk)) / np.sqrt(d), f"layer{i}.wq"),
                const(rng.standard_normal((d, dk)) / np.sqrt(d), f"layer{i}.wk"),
                const(rng.standard_normal((d, dk)) / np.sqrt(d), f"layer{i}.wv"),
                const(rng.standard_normal((dk, d)) / np.sqrt(dk), f"layer{i}.wo"),
                cfg.heads,
                freqs,
                adapters,
            )
            layers.append(EncoderLayer(
                attn,
                (const(np.ones(d), "g"), const(np.zeros(d), "b")),
                (const(np.ones(d), "g"), const(np.zeros(d), "b")),
                const(rng.standard_normal((d, dff)) / np.sqrt(d), "w1"),
                const(np.zeros(dff), "b1"),
                const(rng.standard_normal((dff, d)) / np.sqrt(dff), "w2"),
                const(np.zeros(d), "b2"),
            ))
        self.stack = EncoderStack(
            layers,
            (const(np.ones(d), "g"), const(np.zeros(d), "b")),
            const(rng.standard_normal((len(vocab), d)) / np.sqrt(d), "token_embedding"),
        )
        self.align = AlignmentTokens(
            Tensor((rng.standard_normal((cfg.num_align, d)) * cfg.align_init_std).astype(dt), True, "align")
        )
        self.tables = BiasTables.init(d, cfg.d_mlp, cfg.heads, cfg.max_dist_bucket, rng, dt)
        self.graph_pos = Tensor(np.zeros(1, dtype=dt), True, "graph_pos")

    # -- parameter sets ---------------------------------------------------------

    def trainable_params(self) -> dict[str, Tensor]:
        return trainable_params(self.stack, self.align, self.tables, self.graph_pos)

    def frozen_params(self) -> dict[str, Tensor]:
        return self.stack.base_parameters()

    # -- input assembly ---------------------------------------------------------

    def assemble_input(self, sample: SubgraphSample, family: str, desc_family: str | None = None) -> EncoderInput:
        """``[graph tokens ; task description ; alignment tokens]`` for one sample.

        ``desc_family`` overrides which description is rendered (e.g. the
        generic prompt) while the sample stays the same.
        """
        desc_ids = render_desc(self.vocab, self.templates, desc_family or family)
        n, l, m = sample.n, len(desc_ids), self.align.count
        if m < 1 or 2 * m > n + l:
            raise ValueError(f"{m} alignment tokens need m <= (n + l) / 2 with n={n}, l={l}")
        graph_tokens = np.array([self.embedder.embed(t) for t in sample.graph.node_texts])
        return EncoderInput(
            n, l, m,
            graph_tokens,
            desc_ids,
            assign_positions(n, l, m, self.graph_pos, self.config.text_pos_base),
            build_mask(n, l, m),
            distance_buckets(sample.spd, self.config.max_dist_bucket),
            plan_edge_paths(sample, self.embedder),
        )

    # -- forward ----------------------------------------------------------------

    def encode(self, inp: EncoderInput) -> TaskAwareRepresentation:
        dt = self.config.dtype
        x = ad.concat([
            Tensor(inp.graph_tokens.astype(dt)),
            Tensor(self.stack.token_embedding.data[inp.desc_ids]),
            self.align.embeddings,
        ])
        b_pe = ad.gather(self.tables.distance_table, inp.buckets)
        b_edge = edge_bias(None, self.embedder, self.tables, inp.edge_plan)
        for i, layer in enumerate(self.stack.layers):
            h = ad.layer_norm(x, *layer.ln1)
            x = ad.add(x, attend(h, layer.attn, inp.positions, b_pe, b_edge, inp.mask))
            h = ad.layer_norm(x, *layer.ln2)
            x = ad.add(x, layer.feed_forward(h))
            if not np.all(np.isfinite(x.data)):
                raise FloatingPointError(f"non-finite activations after encoder layer {i}")
        x = ad.layer_norm(x, *self.stack.ln_final)
        return TaskAwareRepresentation(ad.getitem(x, slice(inp.n + inp.l, None)))


def trainable_params(stack: EncoderStack, align: AlignmentTokens, tables: BiasTables, graph_pos: Tensor) -> dict[str, Tensor]:
    """The instruction-tuned subset: adapters, alignment tokens, bias tables/MLP and the graph position."""
    if not stack.frozen:
        raise ValueError("trainable_params expects a frozen base stack")
    out = dict(stack.adapter_parameters())
    out["align"] = align.embeddings
    out.update(tables.parameters())
    out["graph_pos"] = graph_pos
    return out


def assemble_input(encoder: GraphTextEncoder, sample: SubgraphSample, family: str, desc_family: str | None = None) -> EncoderInput:
    return encoder.assemble_input(sample, family, desc_family)


def encode(encoder: GraphTextEncoder, inp: EncoderInput) -> TaskAwareRepresentation:
    return encoder.encode(inp)
