"""Closed toy vocabulary, prompt templates, text embedding and graph descriptions."""

from __future__ import annotations

import logging
import re
import string
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import tomli

from .graphcore import canonical_order
from .synthetic import COLORS, FAMILIES

log = logging.getLogger(__name__)

PAD, BOS, EOS, SEP, YES, NO = "<pad>", "<bos>", "<eos>", "<sep>", "yes", "no"
DIGITS = tuple(str(d) for d in range(10))
SPECIALS = (PAD, BOS, EOS, SEP, YES, NO) + DIGITS + COLORS

_TOKEN_RE = re.compile(r"<[a-z]+>|[a-z]+|\d|[^\sa-z\d]")

DEFAULT_TEMPLATES = """
[generic]
desc = "Analyze the following graph and provide the answer that the question asks for."

["node-cls"]
desc = "Determine this node's most likely category within the network's classification schema."
detail = "Given a representation of a node with the following information: {center}. Question: Which category does this node belong to? Please directly give the most likely answer from the following categories: {candidates}."

["link-pred"]
desc = "Determine whether there is a specific relationship between these two nodes in the network."
detail = "Given the representation of two nodes: First node: {first}, Second node: {second}. Question: Do these two nodes have a link? Please choose the most likely answer from: yes or no."

["graph-cls"]
desc = "Determine whether the graph possesses specific structural or topological properties of interest."
detail = "Given a representation of a graph. Question: Does this graph contain a cycle? Please answer: yes or no."

["graph-reg"]
desc = "Predict the continuous numerical value of a structural property of the graph."
detail = "Given a representation of a graph. Question: How many edges does this graph have? Please provide a single numerical value."

[CONN]
desc = "Determine whether two nodes are connected by a path of edges within the graph."
detail = "Given the representation of two nodes: First node: {first}, Second node: {second}. Question: Are these two nodes connected? Please answer: yes or no."

[SPD]
desc = "Predict the shortest path distance between two nodes."
detail = "Given the representation of two nodes: First node: {first}, Second node: {second}. Question: What is the shortest path distance between these two nodes? Please provide a single numerical value."

[CN]
desc = "Predict the number of common neighbors between two nodes."
detail = "Given the representation of two nodes: First node: {first}, Second node: {second}. Question: How many common neighbors do these two nodes have? Please provide a single numerical value."

[CYCLE]
desc = "Predict the number of independent cycles in the graph."
detail = "Given a representation of a graph. Question: How many cycles does this graph have? Please provide a single numerical value."
"""

# words used by node texts, edge descriptions and graph descriptions
EXTRA_WORDS = ("node", "nodes", "color", "target", "link", "degrees", "edges", "none", "-", ".", "(", ")", ",", ";")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class PromptTemplate:
    family: str
    desc_text: str
    detail_pattern: str = ""

    def __post_init__(self):
        if not self.desc_text.strip():
            raise ValueError(f"{self.family}: empty task description")

    def slots(self) -> list[str]:
        return [f for _, f, _, _ in string.Formatter().parse(self.detail_pattern) if f]


def load_templates(source: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Parse the family -> {desc, detail} table (TOML text or path)."""
    if source is None:
        raw = tomli.loads(DEFAULT_TEMPLATES)
    elif isinstance(source, Path) or "\n" not in str(source):
        raw = tomli.loads(Path(source).read_text())
    else:
        raw = tomli.loads(source)
    return {fam: PromptTemplate(fam, v["desc"], v.get("detail", "")) for fam, v in raw.items()}


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, templates: Mapping[str, PromptTemplate] | None = None) -> "Vocab":
        templates = templates or load_templates()
        words: set[str] = set(EXTRA_WORDS)
        for t in templates.values():
            words.update(tokenize(t.desc_text))
            words.update(tokenize(re.sub(r"\{[^}]*\}", " ", t.detail_pattern)))
        rest = sorted(words - set(SPECIALS))
        return cls(list(SPECIALS) + rest)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __getitem__(self, token: str) -> int:
        return self.token_to_id[token]

    @property
    def pad(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos(self) -> int:
        return self.token_to_id[EOS]

    @property
    def yes(self) -> int:
        return self.token_to_id[YES]

    @property
    def no(self) -> int:
        return self.token_to_id[NO]

    def encode(self, text: str, eos: bool = False) -> list[int]:
        ids = []
        for tok in tokenize(text):
            if tok not in self.token_to_id:
                raise KeyError(f"token {tok!r} is not in the vocabulary")
            ids.append(self.token_to_id[tok])
        if eos:
            ids.append(self.eos)
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text().splitlines())


class TextEmbedder:
    """Stand-in for a pretrained sentence encoder.

    Bag of words hashed into ``hash_buckets`` with CRC32, projected by a frozen
    seeded Gaussian matrix and L2-normalised.
    """

    def __init__(self, dim: int, hash_buckets: int = 512, seed: int = 0):
        self.dim = dim
        self.hash_buckets = hash_buckets
        self.seed = seed
        self.projection = np.random.default_rng(seed).standard_normal((hash_buckets, dim))
        self._embed = lru_cache(maxsize=None)(self._compute)

    def _compute(self, text: str) -> np.ndarray:
        counts = np.zeros(self.hash_buckets)
        for tok in tokenize(text):
            counts[zlib.crc32(tok.encode()) % self.hash_buckets] += 1.0
        if not counts.any():
            log.warning("embedding empty text as the zero vector")
            return np.zeros(self.dim)
        v = counts @ self.projection
        v = v / np.linalg.norm(v)
        v.setflags(write=False)
        return v

    def embed(self, text: str) -> np.ndarray:
        return self._embed(text)


def embed_text(embedder: TextEmbedder, text: str) -> np.ndarray:
    return embedder.embed(text)


def render_desc(vocab: Vocab, templates: Mapping[str, PromptTemplate], family: str) -> list[int]:
    if family not in templates:
        raise KeyError(f"no task description for family {family!r}")
    return vocab.encode(templates[family].desc_text, eos=True)


def render_detail(vocab: Vocab, templates: Mapping[str, PromptTemplate], family: str, slots: Mapping[str, str]) -> list[int]:
    if family not in templates:
        raise KeyError(f"no detail template for family {family!r}")
    tpl = templates[family]
    for name in tpl.slots():
        if name not in slots:
            raise KeyError(f"{family}: missing value for slot {name!r}")
    return vocab.encode(tpl.detail_pattern.format(**slots), eos=True)


def graph_description_text(graph) -> str:
    """Canonical structural summary: node count, sorted degrees, canonical edges."""
    order = canonical_order(graph)
    pos = {v: k for k, v in enumerate(order)}
    adj = graph.adjacency
    deg = adj.sum(axis=1) + (adj.sum(axis=0) if graph.directed else 0)
    degrees = " ".join(str(int(deg[v])) for v in order)
    edges = []
    for i, j in graph.edges():
        a, b = pos[i], pos[j]
        edges.append((a, b) if graph.directed else (min(a, b), max(a, b)))
    edge_txt = " ".join(f"( {a} , {b} )" for a, b in sorted(edges)) or "none"
    return f"{graph.num_nodes} nodes ; degrees {degrees} ; edges {edge_txt}"


def render_graph_description(vocab: Vocab, sample) -> list[int]:
    return vocab.encode(graph_description_text(sample.graph), eos=True)
