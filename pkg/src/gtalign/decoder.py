"""Small causal decoder: pretrained as a plain LM, then frozen and conditioned on H_A.

The alignment-token states enter as raw hidden rows in front of the token
embeddings (no positional embedding); token positions always start at 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as ad
from .numerics import Tensor
from .structattn import AttentionParams, causal_mask, multihead_attention

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecoderConfig:
    d: int = 32
    heads: int = 4
    layers: int = 2
    ffn_mult: int = 4
    max_len: int = 192
    seed: int = 0
    precision: str = "float64"


class DecoderModel:
    def __init__(self, config: DecoderConfig, vocab_size: int):
        self.config = config
        self.vocab_size = vocab_size
        self.frozen = False
        dt = np.dtype(config.precision)
        rng = np.random.default_rng([config.seed, 2])
        d, dff = config.d, config.ffn_mult * config.d
        p: dict[str, np.ndarray] = {
            "tok_emb": rng.standard_normal((vocab_size, d)) * 0.1,
            "pos_emb": rng.standard_normal((config.max_len, d)) * 0.02,
            "ln_f.g": np.ones(d),
            "ln_f.b": np.zeros(d),
            "head": rng.standard_normal((d, vocab_size)) * 0.02,
        }
        for i in range(config.layers):
            for w in "qkv":
                p[f"layer{i}.w{w}"] = rng.standard_normal((d, d)) / np.sqrt(d)
            p[f"layer{i}.wo"] = rng.standard_normal((d, d)) / np.sqrt(d) / np.sqrt(2 * config.layers)
            p[f"layer{i}.ln1.g"] = np.ones(d)
            p[f"layer{i}.ln1.b"] = np.zeros(d)
            p[f"layer{i}.ln2.g"] = np.ones(d)
            p[f"layer{i}.ln2.b"] = np.zeros(d)
            p[f"layer{i}.ffn.w1"] = rng.standard_normal((d, dff)) / np.sqrt(d)
            p[f"layer{i}.ffn.b1"] = np.zeros(dff)
            p[f"layer{i}.ffn.w2"] = rng.standard_normal((dff, d)) / np.sqrt(dff) / np.sqrt(2 * config.layers)
            p[f"layer{i}.ffn.b2"] = np.zeros(d)
        self.params = {k: Tensor(v.astype(dt), requires_grad=True, name=k) for k, v in p.items()}

    @property
    def dtype(self):
        return np.dtype(self.config.precision)

    def freeze(self) -> "DecoderModel":
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        return self

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def hidden(self, prefix: Tensor | None, ids: Sequence[int]) -> Tensor:
        """Final-norm hidden states for ``[prefix ; ids]``."""
        P = self.params
        T = len(ids)
        if T > self.config.max_len:
            raise ValueError(f"sequence of {T} tokens exceeds max_len {self.config.max_len}")
        x = ad.add(ad.gather(P["tok_emb"], np.asarray(ids)), ad.getitem(P["pos_emb"], slice(0, T)))
        if prefix is not None and prefix.shape[0]:
            x = ad.concat([prefix, x])
        allowed = causal_mask(x.shape[0])
        for i in range(self.config.layers):
            L = f"layer{i}."
            attn = AttentionParams(P[L + "wq"], P[L + "wk"], P[L + "wv"], P[L + "wo"], self.config.heads)
            h = ad.layer_norm(x, P[L + "ln1.g"], P[L + "ln1.b"])
            x = ad.add(x, multihead_attention(h, attn, allowed))
            h = ad.layer_norm(x, P[L + "ln2.g"], P[L + "ln2.b"])
            ff = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(h, P[L + "ffn.w1"]), P[L + "ffn.b1"])), P[L + "ffn.w2"]), P[L + "ffn.b2"])
            x = ad.add(x, ff)
        return ad.layer_norm(x, P["ln_f.g"], P["ln_f.b"])

    def logits(self, prefix: Tensor | None, ids: Sequence[int], rows: slice | None = None) -> Tensor:
        """Next-token logits at token positions ``rows`` (indices into ``ids``)."""
        h = self.hidden(prefix, ids)
        m = 0 if prefix is None else prefix.shape[0]
        rows = rows or slice(0, len(ids))
        start = m + (rows.start or 0)
        stop = m + (len(ids) if rows.stop is None else rows.stop)
        return ad.matmul(ad.getitem(h, slice(start, stop)), self.params["head"])


def _as_prefix(H_A, dtype) -> Tensor | None:
    if H_A is None:
        return None
    t = H_A if isinstance(H_A, Tensor) else Tensor(np.asarray(H_A))
    if t.dtype != dtype and not t.requires_grad:
        t = Tensor(t.data.astype(dtype))
    return t


def _check_target(target: Sequence[int], pad: int, what: str) -> None:
    if len(target) == 0:
        raise ValueError(f"{what} is empty")
    if pad in target:
        raise ValueError(f"{what} contains PAD")


def loss_it(decoder: DecoderModel, H_A, detail: Sequence[int], target: Sequence[int], bos: int = 1, pad: int = 0) -> Tensor:
    """Summed NLL of ``target`` given the prefix and the instance instruction."""
    _check_target(target, pad, "answer target")
    ids = [bos, *detail, *target[:-1]]
    D = len(detail)
    logits = decoder.logits(_as_prefix(H_A, decoder.dtype), ids, slice(D, D + len(target)))
    return ad.cross_entropy(logits, target)


def loss_prompt(decoder: DecoderModel, H_A, d_G: Sequence[int], bos: int = 1, pad: int = 0) -> Tensor:
    """Summed NLL of the graph description given only the prefix."""
    _check_target(d_G, pad, "graph description")
    ids = [bos, *d_G[:-1]]
    logits = decoder.logits(_as_prefix(H_A, decoder.dtype), ids)
    return ad.cross_entropy(logits, d_G)


def loss_total(l_it, l_prompt):
    if not (np.isfinite(np.asarray(getattr(l_it, "data", l_it))).all() and np.isfinite(np.asarray(getattr(l_prompt, "data", l_prompt))).all()):
        raise FloatingPointError("non-finite loss term")
    if isinstance(l_it, Tensor) or isinstance(l_prompt, Tensor):
        return ad.add(l_it, l_prompt)
    return l_it + l_prompt


def generate(decoder: DecoderModel, H_A, detail: Sequence[int], max_len: int, bos: int = 1, eos: int = 2) -> list[int]:
    """Greedy decoding; stops after EOS or ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    prefix = _as_prefix(H_A, decoder.dtype)
    ids = [bos, *detail]
    out: list[int] = []
    for _ in range(max_len):
        logits = decoder.logits(prefix, ids, slice(len(ids) - 1, len(ids))).data[0]
        tok = int(np.argmax(logits))
        out.append(tok)
        if tok == eos:
            break
        ids.append(tok)
    return out


def first_step_logits(decoder: DecoderModel, H_A, detail: Sequence[int], bos: int = 1) -> np.ndarray:
    ids = [bos, *detail]
    return decoder.logits(_as_prefix(H_A, decoder.dtype), ids, slice(len(ids) - 1, len(ids))).data[0]


def binary_score_from_logits(logits: np.ndarray, yes: int, no: int) -> float:
    """P(yes) / (P(yes) + P(no)) of the softmax over ``logits``."""
    diff = float(logits[no] - logits[yes])
    if diff >= 0:
        e = np.exp(-diff)
        return e / (1.0 + e)
    return 1.0 / (1.0 + np.exp(diff))


def score_binary(decoder: DecoderModel, H_A, detail: Sequence[int], yes: int = 4, no: int = 5, bos: int = 1) -> float:
    return binary_score_from_logits(first_step_logits(decoder, H_A, detail, bos), yes, no)


# -- pretraining ------------------------------------------------------------------


def sequence_nll(decoder: DecoderModel, seq: Sequence[int]) -> Tensor:
    """Summed NLL of ``seq[1:]`` under the unconditioned LM (``seq[0]`` is BOS)."""
    return ad.cross_entropy(decoder.logits(None, seq[:-1]), seq[1:])


def perplexity(decoder: DecoderModel, corpus: Sequence[Sequence[int]]) -> float:
    total, count = 0.0, 0
    for seq in corpus:
        total += float(sequence_nll(decoder, seq).data)
        count += len(seq) - 1
    return float(np.exp(total / count))


@dataclass
class PretrainReport:
    losses: list[float]
    heldout_perplexity: float
    initial_perplexity: float


def pretrain_decoder(
    corpus: Sequence[Sequence[int]],
    vocab_size: int,
    steps: int,
    seed: int,
    config: DecoderConfig | None = None,
    heldout: Sequence[Sequence[int]] | None = None,
    batch_size: int = 8,
    lr: float = 3e-3,
) -> tuple[DecoderModel, PretrainReport]:
    """Train a plain next-token LM on ``corpus`` (sequences start with BOS), then freeze it."""
    from .trainer import Adam

    config = config or DecoderConfig(seed=seed)
    dec = DecoderModel(config, vocab_size)
    heldout = heldout if heldout is not None else corpus[: max(1, len(corpus) // 10)]
    init_ppl = perplexity(dec, heldout)
    opt = Adam({k: lr for k in dec.params})
    losses = []
    for step in range(steps):
        rng = np.random.default_rng([seed, step, 7])
        batch = rng.integers(len(corpus), size=batch_size)
        ntok = sum(len(corpus[i]) - 1 for i in batch)
        total = 0.0
        for i in batch:
            nll = sequence_nll(dec, corpus[i])
            ad.scale(nll, 1.0 / ntok).backward()
            total += float(nll.data)
        if not np.isfinite(total):
            raise FloatingPointError(f"decoder pretraining diverged at step {step}")
        opt.step(dec.params)
        losses.append(total / ntok)
        if step % 200 == 0:
            log.info("decoder step %d  loss/token %.4f", step, losses[-1])
    dec.freeze()
    ppl = perplexity(dec, heldout)
    log.info("decoder perplexity %.3f -> %.3f (vocab %d)", init_ppl, ppl, vocab_size)
    return dec, PretrainReport(losses, ppl, init_ppl)
