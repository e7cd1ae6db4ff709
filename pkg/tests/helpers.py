"""Small shared setups: an untrained frozen decoder and a few instances per family."""

from __future__ import annotations

from gtalign.data import make_instance
from gtalign.decoder import DecoderConfig, DecoderModel
from gtalign.encoder import EncoderConfig, GraphTextEncoder
from gtalign.model import GraphTextModel
from gtalign.synthetic import GenConfig, gen_synthetic
from gtalign.tasktext import Vocab, load_templates

TEMPLATES = load_templates()
VOCAB = Vocab.build(TEMPLATES)
SMALL_GRAPHS = GenConfig(min_nodes=5, max_nodes=7)


def tiny_model(seed: int = 0) -> GraphTextModel:
    enc = GraphTextEncoder(EncoderConfig(seed=seed), VOCAB, TEMPLATES)
    dec = DecoderModel(DecoderConfig(seed=seed), len(VOCAB)).freeze()
    return GraphTextModel(enc, dec)


def instances(family: str, count: int, seed: int = 0, graphs: GenConfig = SMALL_GRAPHS):
    return [make_instance(lg, VOCAB, TEMPLATES) for lg in gen_synthetic(family, graphs, seed, count)]


def tiny_datasets(families=("CONN", "CN", "node-cls", "link-pred"), count: int = 6, seed: int = 0):
    return {f: instances(f, count, seed + k) for k, f in enumerate(families)}
