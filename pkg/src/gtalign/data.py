"""Task instances and JSONL dataset files."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graphcore import SubgraphSample, extract_khop, graph_from_dict, graph_to_dict, whole_graph_sample
from .synthetic import COLORS, FAMILIES, PAIR_FAMILIES, REGRESSION_FAMILIES, LabeledGraph
from .tasktext import PromptTemplate, Vocab, render_detail, render_graph_description

# node/edge tasks see a k-hop neighbourhood; graph-understanding pair tasks see the graph
KHOP_FAMILIES = ("node-cls", "link-pred")
TARGET_PREFIX = "target "


@dataclass(eq=False)
class TaskInstance:
    sample: SubgraphSample
    family: str
    detail_tokens: list[int]
    target_tokens: list[int]
    reconstruction_tokens: list[int]
    label: str | int
    candidates: tuple[str, ...]
    numeric_target: float | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.target_tokens:
            raise ValueError("target_tokens must be nonempty")
        if self.family in REGRESSION_FAMILIES and self.numeric_target is None:
            raise ValueError(f"{self.family} instance needs a numeric target")


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for a named component."""
    return (int(seed) * 1_000_003 + zlib.crc32(label.encode())) % (2**31)


def answer_tokens(vocab: Vocab, label: str | int) -> list[int]:
    if isinstance(label, (int, np.integer)):
        return vocab.encode(" ".join(str(int(label))), eos=True)
    return [vocab[str(label)], vocab.eos]


def build_sample(lg: LabeledGraph, hop_radius: int = 2, max_nodes: int | None = 16) -> SubgraphSample:
    """Encoder-side sample with the center node(s) marked in their texts."""
    if lg.family in KHOP_FAMILIES:
        sample = extract_khop(lg.graph, lg.center, hop_radius, max_nodes)
    else:
        sample = whole_graph_sample(lg.graph, lg.center)
    centers = set(sample.center_nodes())
    texts = [TARGET_PREFIX + t if k in centers else t for k, t in enumerate(sample.graph.node_texts)]
    return SubgraphSample(sample.nodes, sample.graph.with_node_texts(texts), sample.spd, sample.center, sample.hop_radius)


def detail_slots(lg: LabeledGraph, num_classes: int) -> dict[str, str]:
    texts = lg.graph.node_texts
    slots = {"candidates": ", ".join(COLORS[:num_classes])}
    if isinstance(lg.center, tuple):
        slots["first"], slots["second"] = texts[lg.center[0]], texts[lg.center[1]]
    elif lg.center is not None:
        slots["center"] = texts[lg.center]
    return slots


def make_instance(
    lg: LabeledGraph,
    vocab: Vocab,
    templates: Mapping[str, PromptTemplate],
    hop_radius: int = 2,
    max_nodes: int | None = 16,
    num_classes: int = 3,
) -> TaskInstance:
    sample = build_sample(lg, hop_radius, max_nodes)
    if lg.family == "node-cls":
        candidates = COLORS[:num_classes]
    elif lg.family in REGRESSION_FAMILIES:
        candidates = ()
    else:
        candidates = ("yes", "no")
    return TaskInstance(
        sample=sample,
        family=lg.family,
        detail_tokens=render_detail(vocab, templates, lg.family, detail_slots(lg, num_classes)),
        target_tokens=answer_tokens(vocab, lg.label),
        reconstruction_tokens=render_graph_description(vocab, sample),
        label=lg.label,
        candidates=tuple(candidates),
        numeric_target=float(lg.label) if lg.family in REGRESSION_FAMILIES else None,
    )


# -- JSONL ------------------------------------------------------------------------


def record_from_labeled(lg: LabeledGraph) -> dict:
    center = list(lg.center) if isinstance(lg.center, tuple) else lg.center
    label = int(lg.label) if isinstance(lg.label, (int, np.integer)) else lg.label
    return {"family": lg.family, "graph": graph_to_dict(lg.graph), "center": center, "label": label}


def labeled_from_record(rec: dict) -> LabeledGraph:
    if rec["family"] not in FAMILIES:
        raise ValueError(f"unknown family {rec['family']!r} in record")
    c = rec["center"]
    center = tuple(c) if isinstance(c, list) else c
    return LabeledGraph(rec["family"], graph_from_dict(rec["graph"]), center, rec["label"])


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str | Path, items: Iterable[LabeledGraph]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lg in items:
            fh.write(dumps_record(record_from_labeled(lg)) + "\n")


def read_jsonl(path: str | Path) -> list[LabeledGraph]:
    with open(path, encoding="utf-8") as fh:
        return [labeled_from_record(json.loads(ln)) for ln in fh if ln.strip()]


def split_counts(total: int, ratios: Sequence[int] = (8, 1, 1)) -> list[int]:
    """Split sizes proportional to ``ratios``; rounding leftovers go to train."""
    s = sum(ratios)
    sizes = [total * r // s for r in ratios]
    sizes[0] += total - sum(sizes)
    return sizes
